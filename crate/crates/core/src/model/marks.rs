//! Mark space description: a finite-mass region with a normalized sampler and
//! quadrature nodes for `∫ (.) nu(du)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum MarkLaw {
    /// Uniform on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
    /// Finitely many atoms with probabilities summing to one.
    Atoms { points: Vec<f64>, probs: Vec<f64> },
}

/// One region of the mark space (`U0` or `U \ U0`) with total mass `nu(region)`.
#[derive(Debug, Clone)]
pub struct MarkRegion {
    law: MarkLaw,
    mass: f64,
    nodes: Vec<(f64, f64)>,
}

impl MarkRegion {
    pub fn new(law: MarkLaw, mass: f64, quadrature_order: usize) -> Result<Self> {
        if !(mass.is_finite() && mass >= 0.0) {
            return Err(Error::InvalidModel(format!(
                "mark mass {mass} must be finite and >= 0"
            )));
        }
        let nodes = match &law {
            MarkLaw::Uniform { lo, hi } => {
                if hi.is_nan() || lo.is_nan() || hi <= lo {
                    return Err(Error::InvalidModel(format!(
                        "uniform marks need lo < hi, got [{lo}, {hi}]"
                    )));
                }
                let half = 0.5 * (hi - lo);
                let mid = 0.5 * (hi + lo);
                gauss_legendre(quadrature_order.max(1))
                    .into_iter()
                    .map(|(z, w)| (mid + half * z, 0.5 * mass * w))
                    .collect()
            }
            MarkLaw::Atoms { points, probs } => {
                if points.is_empty() || points.len() != probs.len() {
                    return Err(Error::InvalidModel(
                        "atoms need matching non-empty points/probs".into(),
                    ));
                }
                let total: f64 = probs.iter().sum();
                if probs.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidModel(
                        "atom probabilities must be >= 0 and sum to 1".into(),
                    ));
                }
                points
                    .iter()
                    .zip(probs)
                    .map(|(u, p)| (*u, p * mass))
                    .collect()
            }
        };
        Ok(MarkRegion { law, mass, nodes })
    }

    pub fn law(&self) -> &MarkLaw {
        &self.law
    }

    /// `nu(region)`.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Quadrature nodes `(u_q, w_q)` with `sum w_q = nu(region)`.
    pub fn nodes(&self) -> &[(f64, f64)] {
        &self.nodes
    }

    /// `∫ f(u) nu(du)` by the stored quadrature.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().map(|(u, w)| w * f(*u)).sum()
    }

    /// Draws a mark from `nu(.) / nu(region)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let v: f64 = rng.random();
        self.quantile(v)
    }

    /// Maps `v in [0, 1)` to a point of the region's support.
    pub fn quantile(&self, v: f64) -> f64 {
        match &self.law {
            MarkLaw::Uniform { lo, hi } => lo + (hi - lo) * v,
            MarkLaw::Atoms { points, probs } => {
                let mut acc = 0.0;
                for (u, p) in points.iter().zip(probs) {
                    acc += p;
                    if v < acc {
                        return *u;
                    }
                }
                *points.last().expect("non-empty atoms")
            }
        }
    }

    pub fn contains(&self, u: f64) -> bool {
        match &self.law {
            MarkLaw::Uniform { lo, hi } => u >= *lo && u <= *hi,
            MarkLaw::Atoms { points, .. } => points.contains(&u),
        }
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> Vec<(f64, f64)> {
    let n = order;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        out.push((z, 2.0 / ((1.0 - z * z) * dp * dp)));
    }
    out.reverse();
    out
}

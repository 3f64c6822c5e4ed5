//! Weighted particle measures `scale * sum_i w_i delta_{x_i}`.
//!
//! The scalar `scale` carries the unnormalized mass across resampling so that
//! `mu(1)` survives the reset to equal weights.

mod io;
mod probes;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use io::{read_measure, write_measure};
pub use probes::{distance_bl, Probe, ProbeSet};

use crate::model::TestFunction;
use crate::rng::{self, StreamRng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    scale: f64,
    /// Weights are known to sum to one; `normalize` then leaves them untouched.
    unit_weights: bool,
}

impl ParticleMeasure {
    /// `points` is row-major `len x dim`; weights must be finite and nonnegative.
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.len() != weights.len() * dim {
            return Err(Error::Dimension(format!(
                "{} coordinates for {} particles of dimension {dim}",
                points.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Parse(format!("invalid particle weight {w}")));
        }
        Ok(ParticleMeasure {
            dim,
            points,
            weights,
            scale: 1.0,
            unit_weights: false,
        })
    }

    /// Equal weights `1 / len`.
    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        let n = points.len() / dim.max(1);
        let mut mu = ParticleMeasure::new(dim, points, vec![1.0 / n as f64; n])?;
        mu.unit_weights = true;
        Ok(mu)
    }

    /// Draws `count` equally weighted particles from the model's initial law.
    pub fn sample_initial(
        spec: &crate::model::ModelSpec,
        count: usize,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        let n = spec.dim_signal();
        let mut pts = vec![0.0; count * n];
        for chunk in pts.chunks_exact_mut(n) {
            spec.initial().sample(rng, chunk);
        }
        ParticleMeasure::uniform(n, pts)
    }

    pub(crate) fn from_parts(
        dim: usize,
        points: Vec<f64>,
        weights: Vec<f64>,
        scale: f64,
        unit_weights: bool,
    ) -> Self {
        ParticleMeasure {
            dim,
            points,
            weights,
            scale,
            unit_weights,
        }
    }

    /// Same particles with total mass multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut mu = self.clone();
        mu.scale *= factor;
        mu
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn len(&self) -> usize {
        self.weights.len()
    }
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }
    pub fn points(&self) -> &[f64] {
        &self.points
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn scale(&self) -> f64 {
        self.scale
    }
    pub fn has_unit_weights(&self) -> bool {
        self.unit_weights
    }

    /// Particle weight including the mass scalar.
    pub fn weight(&self, i: usize) -> f64 {
        self.scale * self.weights[i]
    }

    pub fn is_normalized(&self) -> bool {
        self.scale == 1.0
            && (self.unit_weights || (self.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12)
    }

    pub fn total_mass(&self) -> f64 {
        if self.unit_weights {
            self.scale
        } else {
            self.scale * self.weights.iter().sum::<f64>()
        }
    }

    /// `mu(phi) = scale * sum_i w_i phi(x_i)`.
    pub fn integrate(&self, phi: impl Fn(&[f64]) -> f64) -> f64 {
        let s: f64 = self
            .points
            .chunks_exact(self.dim)
            .zip(&self.weights)
            .map(|(x, w)| w * phi(x))
            .sum();
        self.scale * s
    }

    pub fn integrate_fn(&self, f: &TestFunction) -> f64 {
        self.integrate(|x| f.eval(x))
    }

    /// Divides by the total mass. Errors on zero or non-finite mass.
    pub fn normalize(&self) -> Result<Self> {
        if self.unit_weights {
            if !(self.scale.is_finite() && self.scale > 0.0) {
                return Err(Error::degenerate(0, format!("total mass {}", self.scale)));
            }
            return Ok(ParticleMeasure {
                scale: 1.0,
                ..self.clone()
            });
        }
        let s: f64 = self.weights.iter().sum();
        let mass = self.scale * s;
        if !(mass.is_finite() && mass > 0.0 && s > 0.0) {
            return Err(Error::degenerate(0, format!("total mass {mass}")));
        }
        let weights = self.weights.iter().map(|w| w / s).collect();
        Ok(ParticleMeasure {
            dim: self.dim,
            points: self.points.clone(),
            weights,
            scale: 1.0,
            unit_weights: true,
        })
    }

    /// `(sum w)^2 / sum w^2`.
    pub fn ess(&self) -> f64 {
        let s: f64 = self.weights.iter().sum();
        let s2: f64 = self.weights.iter().map(|w| w * w).sum();
        if s2 > 0.0 {
            s * s / s2
        } else {
            0.0
        }
    }

    /// Mean of the normalized measure.
    pub fn mean(&self) -> Vec<f64> {
        let s: f64 = self.weights.iter().sum();
        let mut m = vec![0.0; self.dim];
        for (x, w) in self.points.chunks_exact(self.dim).zip(&self.weights) {
            for (mi, xi) in m.iter_mut().zip(x) {
                *mi += w * xi;
            }
        }
        m.iter_mut().for_each(|v| *v /= s);
        m
    }

    /// Row-major covariance of the normalized measure.
    pub fn covariance(&self) -> Vec<f64> {
        let n = self.dim;
        let s: f64 = self.weights.iter().sum();
        let m = self.mean();
        let mut c = vec![0.0; n * n];
        for (x, w) in self.points.chunks_exact(n).zip(&self.weights) {
            for i in 0..n {
                for j in 0..n {
                    c[i * n + j] += w * (x[i] - m[i]) * (x[j] - m[j]);
                }
            }
        }
        c.iter_mut().for_each(|v| *v /= s);
        c
    }

    /// Systematic resampling to `target` equally weighted particles, keeping the mass
    /// in the scalar. Draws from the `resample` stream of `seed`.
    pub fn resample(&self, target: usize, seed: u64) -> Result<Self> {
        self.resample_with(target, &mut rng::stream(seed, rng::RESAMPLE, 0))
    }

    pub fn resample_with<R: Rng + ?Sized>(&self, target: usize, rng: &mut R) -> Result<Self> {
        let mass = self.total_mass();
        let s: f64 = self.weights.iter().sum();
        if !(mass.is_finite() && mass > 0.0 && s > 0.0) || target == 0 {
            return Err(Error::degenerate(
                0,
                format!("cannot resample measure of mass {mass}"),
            ));
        }
        let idx = systematic_indices(&self.weights, s, target, rng.random::<f64>());
        let mut points = Vec::with_capacity(target * self.dim);
        for i in idx {
            points.extend_from_slice(self.point(i));
        }
        Ok(ParticleMeasure {
            dim: self.dim,
            points,
            weights: vec![1.0 / target as f64; target],
            scale: mass,
            unit_weights: true,
        })
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [f64], &mut [f64], &mut f64) {
        (&mut self.points, &mut self.weights, &mut self.scale)
    }

    /// Rescales the weights to sum to one, moving their sum into the mass scalar.
    pub(crate) fn absorb_weight_sum(&mut self) -> f64 {
        let s: f64 = self.weights.iter().sum();
        if s > 0.0 && s.is_finite() {
            self.weights.iter_mut().for_each(|w| *w /= s);
            self.scale *= s;
        }
        self.unit_weights = true;
        s
    }
}

/// Indices selected by systematic resampling with offset `u` in `[0, 1)`.
pub(crate) fn systematic_indices(weights: &[f64], total: f64, target: usize, u: f64) -> Vec<usize> {
    let step = total / target as f64;
    let mut out = Vec::with_capacity(target);
    let mut cum = weights[0];
    let mut i = 0;
    for j in 0..target {
        let pos = (u + j as f64) * step;
        while pos >= cum && i + 1 < weights.len() {
            i += 1;
            cum += weights[i];
        }
        out.push(i);
    }
    out
}

/// When to resample during a filter run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ResamplePolicy {
    Never,
    Always,
    /// Resample when `ess < fraction * len`.
    EssBelow {
        fraction: f64,
    },
}

impl Default for ResamplePolicy {
    fn default() -> Self {
        ResamplePolicy::EssBelow { fraction: 0.5 }
    }
}

impl ResamplePolicy {
    pub fn should_resample(&self, mu: &ParticleMeasure) -> bool {
        match *self {
            ResamplePolicy::Never => false,
            ResamplePolicy::Always => true,
            ResamplePolicy::EssBelow { fraction } => mu.ess() < fraction * mu.len() as f64,
        }
    }

    /// Parses `never`, `always`, or `ess:<fraction>`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "never" => Ok(ResamplePolicy::Never),
            "always" => Ok(ResamplePolicy::Always),
            "ess" => Ok(ResamplePolicy::default()),
            _ => s
                .strip_prefix("ess:")
                .and_then(|f| f.parse::<f64>().ok())
                .filter(|f| (0.0..=1.0).contains(f))
                .map(|fraction| ResamplePolicy::EssBelow { fraction })
                .ok_or_else(|| Error::Config(format!("unknown resample policy `{s}`"))),
        }
    }
}

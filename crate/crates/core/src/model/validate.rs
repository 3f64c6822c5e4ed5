//! Probe-based checks of the growth, boundedness and intensity-envelope assumptions.
//!
//! The assumptions quantify over all `(t, x, u)`; here they are checked on a
//! deterministic quasi-random probe set over a box, which can only refute them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ModelSpec;
use crate::{Error, Result};

/// One probe location `(t, x, u)` with `u` drawn from the support of `U0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: f64,
}

/// Sampling plan for [`validate_model`].
#[derive(Debug, Clone)]
pub struct ProbePlan {
    pub count: usize,
    pub seed: u64,
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    /// Points checked in addition to the quasi-random ones.
    pub extra: Vec<ProbePoint>,
}

impl ProbePlan {
    /// `10^4` Halton probes over `[0, T] x [-5, 5]^n x U0`.
    pub fn default_for(spec: &ModelSpec) -> Self {
        let n = spec.dim_signal();
        ProbePlan {
            count: 10_000,
            seed: 0,
            x_lo: vec![-5.0; n],
            x_hi: vec![5.0; n],
            extra: Vec::new(),
        }
    }

    pub fn with_count(mut self, count: usize) -> Self {
        self.count = count;
        self
    }

    pub fn with_point(mut self, t: f64, x: Vec<f64>, u: f64) -> Self {
        self.extra.push(ProbePoint { t, x, u });
        self
    }

    fn points(&self, spec: &ModelSpec) -> Vec<ProbePoint> {
        let n = spec.dim_signal();
        let dims = n + 2;
        // Cranley-Patterson rotation keyed by the seed.
        let shift: Vec<f64> = (0..dims)
            .map(|j| {
                let h = crate::rng::derive_seed(self.seed, "probe", j as u64);
                (h >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        let mut pts: Vec<ProbePoint> = (0..self.count)
            .map(|i| {
                let coord = |j: usize| (halton(i as u64 + 1, PRIMES[j]) + shift[j]).fract();
                let t = spec.horizon() * coord(0);
                let x = (0..n)
                    .map(|k| self.x_lo[k] + (self.x_hi[k] - self.x_lo[k]) * coord(k + 1))
                    .collect();
                let u = spec.small_marks().quantile(coord(n + 1));
                ProbePoint { t, x, u }
            })
            .collect();
        pts.extend(self.extra.iter().cloned());
        pts
    }
}

const PRIMES: [usize; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn halton(mut i: u64, base: usize) -> f64 {
    let b = base as u64;
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % b) as f64;
        i /= b;
    }
    r
}

/// Outcome of one assumption over the probe set. `margin` is `bound - value` at the
/// worst probe; negative means violated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: bool,
    pub margin: f64,
    pub worst: Option<ProbePoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub probes: usize,
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const GROWTH: &str = "growth b1/sigma1";
pub const B2_BOUND: &str = "bound b2";
pub const SIGMA2_BOUND: &str = "bound sigma2";
pub const SIGMA2_INV_BOUND: &str = "bound sigma2^-1";
pub const ENVELOPE_FLOOR: &str = "envelope floor l <= L(u)";
pub const ENVELOPE_BELOW: &str = "envelope L(u) < lambda";
pub const ENVELOPE_INTEGRAL: &str = "envelope integral finite";
pub const F2_INTEGRABLE: &str = "f2 square integrable";

struct Tracker {
    name: &'static str,
    margin: f64,
    worst: Option<ProbePoint>,
    strict: bool,
}

impl Tracker {
    fn new(name: &'static str, strict: bool) -> Self {
        Tracker {
            name,
            margin: f64::INFINITY,
            worst: None,
            strict,
        }
    }

    fn observe(&mut self, margin: f64, p: &ProbePoint) {
        let m = if margin.is_nan() {
            f64::NEG_INFINITY
        } else {
            margin
        };
        if m < self.margin {
            self.margin = m;
            self.worst = Some(p.clone());
        }
    }

    fn finish(self) -> AssumptionCheck {
        let passed = if self.strict {
            self.margin > 0.0
        } else {
            self.margin >= 0.0
        };
        AssumptionCheck {
            name: self.name.into(),
            passed,
            margin: self.margin,
            worst: self.worst,
        }
    }
}

fn spectral_norm(m: usize, a: &[f64]) -> f64 {
    DMatrix::from_row_slice(m, m, a).singular_values().max()
}

/// Checks the standing assumptions on the probes of `plan`.
///
/// A singular `sigma2` or an intensity outside `(0, 1)` is a hard error naming the
/// offending probe; every other violation is reported in the returned checks.
pub fn validate_model(spec: &ModelSpec, plan: &ProbePlan) -> Result<ValidationReport> {
    let (n, m, d) = (spec.dim_signal(), spec.dim_obs(), spec.dim_bm());
    if plan.count == 0 && plan.extra.is_empty() {
        return Err(Error::Config("probe plan is empty".into()));
    }
    if plan.x_lo.len() != n || plan.x_hi.len() != n {
        return Err(Error::Dimension(
            "probe box does not match signal dimension".into(),
        ));
    }
    let bounds = spec.bounds();
    let points = plan.points(spec);

    let mut growth = Tracker::new(GROWTH, false);
    let mut b2_bound = Tracker::new(B2_BOUND, false);
    let mut s2_bound = Tracker::new(SIGMA2_BOUND, false);
    let mut s2i_bound = Tracker::new(SIGMA2_INV_BOUND, false);
    let mut floor = Tracker::new(ENVELOPE_FLOOR, false);
    let mut below = Tracker::new(ENVELOPE_BELOW, true);
    let mut f2_int = Tracker::new(F2_INTEGRABLE, false);

    let mut b1 = vec![0.0; n];
    let mut s1 = vec![0.0; n * d];
    let mut b2 = vec![0.0; m];
    let mut s2 = vec![0.0; m * m];
    let mut f2 = vec![0.0; m];

    for p in &points {
        let x = &p.x;
        spec.b1(p.t, x, &mut b1);
        spec.sigma1(p.t, x, &mut s1);
        let lhs = b1.iter().map(|v| v * v).sum::<f64>() + s1.iter().map(|v| v * v).sum::<f64>();
        let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        growth.observe(bounds.l1 * (1.0 + xn).powi(2) - lhs, p);

        spec.b2(p.t, x, &mut b2);
        b2_bound.observe(bounds.l2 - b2.iter().map(|v| v * v).sum::<f64>().sqrt(), p);

        spec.sigma2(p.t, &mut s2);
        let inv = spec.sigma2_inverse(p.t)?;
        s2_bound.observe(bounds.l2 - spectral_norm(m, &s2), p);
        s2i_bound.observe(bounds.l2 - spectral_norm(m, &inv), p);

        let lam = spec.intensity(p.t, x, p.u);
        if !(lam > 0.0 && lam < 1.0) {
            return Err(Error::IntensityOutOfRange {
                t: p.t,
                x: x.clone(),
                u: p.u,
                value: lam,
            });
        }
        let env = spec.envelope(p.u);
        floor.observe(
            if bounds.floor > 0.0 {
                env - bounds.floor
            } else {
                f64::NEG_INFINITY
            },
            p,
        );
        below.observe(lam - env, p);

        let sq = spec.small_marks().integrate(|u| {
            spec.f2(p.t, u, &mut f2);
            f2.iter().map(|v| v * v).sum()
        });
        f2_int.observe(
            if sq.is_finite() {
                0.0
            } else {
                f64::NEG_INFINITY
            },
            p,
        );
    }

    let integral = spec.small_marks().integrate(|u| {
        let l = spec.envelope(u);
        (1.0 - l).powi(2) / l
    });
    let env_integral = AssumptionCheck {
        name: ENVELOPE_INTEGRAL.into(),
        passed: integral.is_finite(),
        margin: if integral.is_finite() {
            0.0
        } else {
            f64::NEG_INFINITY
        },
        worst: None,
    };

    let checks = vec![
        growth.finish(),
        b2_bound.finish(),
        s2_bound.finish(),
        s2i_bound.finish(),
        floor.finish(),
        below.finish(),
        env_integral,
        f2_int.finish(),
    ];
    Ok(ValidationReport {
        probes: points.len(),
        checks,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::model::{Intensity, ModelSpec};

    fn base() -> crate::model::ModelBuilder {
        // b1 = 0, sigma1 = 1, b2 = 1, sigma2 = 1, L(u) = 0.4
        ModelSpec::builder(1, 1, 1)
            .b2(Arc::new(|_, _, out: &mut [f64]| out[0] = 1.0))
            .bounds(1.0, 1.0, 0.4, Arc::new(|_| 0.4))
    }

    #[test]
    fn constant_model_passes() {
        let spec = base()
            .lambda(Intensity::mark_free(|_, _, _| 0.5))
            .build()
            .unwrap();
        let r = validate_model(&spec, &ProbePlan::default_for(&spec)).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.probes, 10_000);
    }

    #[test]
    fn intensity_one_is_a_hard_failure() {
        let spec = base()
            .lambda(Intensity::mark_free(|_, _, _| 1.0))
            .build()
            .unwrap();
        let err = validate_model(&spec, &ProbePlan::default_for(&spec)).unwrap_err();
        assert!(matches!(err, Error::IntensityOutOfRange { value, .. } if value == 1.0));
        assert!(err.to_string().contains("must lie in (0, 1)"));
    }

    #[test]
    fn superlinear_drift_fails_growth() {
        let spec = base()
            .lambda(Intensity::mark_free(|_, _, _| 0.5))
            .b1(Arc::new(|_, x: &[f64], out: &mut [f64]| {
                out[0] = x[0] * x[0]
            }))
            .build()
            .unwrap();
        let plan = ProbePlan::default_for(&spec)
            .with_count(0)
            .with_point(0.0, vec![10.0], 0.5);
        let r = validate_model(&spec, &plan).unwrap();
        let g = r.check(GROWTH).unwrap();
        assert!(!g.passed);
        // 10^4 + 1 > 1 * 11^2
        assert_eq!(g.margin, 121.0 - 10_001.0);
        assert_eq!(g.worst.as_ref().unwrap().x, vec![10.0]);
        assert!(!r.passed());
    }

    #[test]
    fn singular_sigma2_names_time() {
        let spec = base()
            .sigma2(Arc::new(|t, out: &mut [f64]| {
                out[0] = if t > 0.5 { 0.0 } else { 1.0 }
            }))
            .build()
            .unwrap();
        let plan = ProbePlan::default_for(&spec)
            .with_count(0)
            .with_point(0.75, vec![0.0], 0.5);
        assert!(matches!(
            validate_model(&spec, &plan),
            Err(Error::SingularObservationDiffusion { t }) if t == 0.75
        ));
    }

    #[test]
    fn envelope_touching_intensity_fails() {
        let spec = base()
            .lambda(Intensity::mark_free(|_, _, _| 0.4))
            .build()
            .unwrap();
        let r = validate_model(&spec, &ProbePlan::default_for(&spec).with_count(100)).unwrap();
        assert!(!r.check(ENVELOPE_BELOW).unwrap().passed);
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = base()
            .lambda(Intensity::mark_free(|_, x: &[f64], _| {
                0.5 + 0.09 * x[0].tanh()
            }))
            .b1(Arc::new(|_, x: &[f64], out: &mut [f64]| {
                out[0] = 2.0 * x[0]
            }))
            .build()
            .unwrap();
        let plan = ProbePlan {
            seed: 11,
            ..ProbePlan::default_for(&spec).with_count(500)
        };
        let a = validate_model(&spec, &plan).unwrap();
        let b = validate_model(&spec, &plan).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }
}

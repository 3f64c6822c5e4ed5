//! Second-moment duality: `E~[mu_t(F1) mu_t(F2)]` computed from the particle filter
//! against the Feynman-Kac expression
//! `E[F1(X1_t) F2(X2_t) exp{∫ (h̄ + λ̄)(s, X1_s, X2_s) ds}]` over two independent signal
//! copies.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{time_label, NamedEstimate, ReportRow, VerificationReport, DEFAULT_SE_MULTIPLIER};
use crate::model::validate::ProbePoint;
use crate::model::{AssumptionCheck, ModelSpec, TestFunction, TestFunctionKind};
use crate::pathsim::{
    extract_observation_events, simulate_decoupled, simulate_signal_with, TimeGrid,
};
use crate::rng::{self, derive_seed};
use crate::stats::McEstimate;
use crate::zakai::{initial_cloud, run_zakai, FilterConfig};
use crate::Result;

/// Coefficients of the doubled system on `R^{2n}`.
#[derive(Debug, Clone)]
pub struct DualityModel {
    spec: ModelSpec,
}

impl DualityModel {
    pub fn new(spec: &ModelSpec) -> Self {
        DualityModel { spec: spec.clone() }
    }

    pub fn dim(&self) -> usize {
        2 * self.spec.dim_signal()
    }

    /// `(b1(t, x1), b1(t, x2))`.
    pub fn b_bar(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let n = self.spec.dim_signal();
        self.spec.b1(t, &x[..n], &mut out[..n]);
        self.spec.b1(t, &x[n..], &mut out[n..]);
    }

    /// Block-diagonal `diag(sigma1 sigma1^T(t, x1), sigma1 sigma1^T(t, x2))`, row-major.
    pub fn a_bar(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let (n, d) = (self.spec.dim_signal(), self.spec.dim_bm());
        let nn = 2 * n;
        out.fill(0.0);
        let mut s = vec![0.0; n * d];
        for block in 0..2 {
            self.spec.sigma1(t, &x[block * n..(block + 1) * n], &mut s);
            for i in 0..n {
                for j in 0..n {
                    let v: f64 = (0..d).map(|r| s[i * d + r] * s[j * d + r]).sum();
                    out[(block * n + i) * nn + block * n + j] = v;
                }
            }
        }
    }

    /// `h(t, x1) . h(t, x2)` with `h = sigma2^{-1} b2`, given `sigma2(t)^{-1}`.
    pub fn h_bar_with(&self, t: f64, x: &[f64], s2inv: &[f64]) -> f64 {
        let (n, m) = (self.spec.dim_signal(), self.spec.dim_obs());
        let mut b = vec![0.0; m];
        let mut h1 = vec![0.0; m];
        let mut h2 = vec![0.0; m];
        self.spec.obs_drift(t, &x[..n], s2inv, &mut b, &mut h1);
        self.spec.obs_drift(t, &x[n..], s2inv, &mut b, &mut h2);
        h1.iter().zip(&h2).map(|(a, b)| a * b).sum()
    }

    pub fn h_bar(&self, t: f64, x: &[f64]) -> Result<f64> {
        Ok(self.h_bar_with(t, x, &self.spec.sigma2_inverse(t)?))
    }

    /// `∫_{U0} (lambda(t, x1, u) - 1)(lambda(t, x2, u) - 1) nu(du)` by the model's
    /// quadrature.
    pub fn lambda_bar(&self, t: f64, x: &[f64]) -> f64 {
        let n = self.spec.dim_signal();
        let (x1, x2) = (&x[..n], &x[n..]);
        let region = self.spec.small_marks();
        if self.spec.lambda().is_mark_free() {
            let u = region.nodes().first().map_or(0.0, |p| p.0);
            region.mass()
                * (self.spec.intensity(t, x1, u) - 1.0)
                * (self.spec.intensity(t, x2, u) - 1.0)
        } else {
            region.integrate(|u| {
                (self.spec.intensity(t, x1, u) - 1.0) * (self.spec.intensity(t, x2, u) - 1.0)
            })
        }
    }

    /// `-(h̄ + λ̄)`.
    pub fn gamma_bar(&self, t: f64, x: &[f64]) -> Result<f64> {
        Ok(-(self.h_bar(t, x)? + self.lambda_bar(t, x)))
    }

    /// Checks symmetry and nonnegativity of `ā`, `|h̄| <= L2^4` and
    /// `|λ̄| <= nu(U0) (1 - l)^2` at `probes` uniform points of `[0, T] x [-5, 5]^{2n}`.
    pub fn check_bounds(&self, probes: usize, seed: u64) -> Result<Vec<AssumptionCheck>> {
        let nn = self.dim();
        let b = self.spec.bounds();
        let h_cap = b.l2.powi(4);
        let l_cap = self.spec.small_marks().mass() * (1.0 - b.floor).powi(2);
        let mut rng = rng::stream(seed, "duality_probe", 0);
        let mut a = vec![0.0; nn * nn];
        let mut worst = [
            (f64::INFINITY, None::<ProbePoint>),
            (f64::INFINITY, None),
            (f64::INFINITY, None),
        ];
        for _ in 0..probes {
            let t = rng.random::<f64>() * self.spec.horizon();
            let x: Vec<f64> = (0..nn).map(|_| -5.0 + 10.0 * rng.random::<f64>()).collect();
            self.a_bar(t, &x, &mut a);
            let mat = DMatrix::from_row_slice(nn, nn, &a);
            let asym = (&mat - mat.transpose()).abs().max();
            let min_eig = mat.clone().symmetric_eigen().eigenvalues.min();
            let scale = 1e-12 * (1.0 + mat.abs().max());
            let margins = [
                (min_eig + scale).min(scale - asym),
                h_cap - self.h_bar(t, &x)?.abs(),
                l_cap - self.lambda_bar(t, &x).abs(),
            ];
            for (w, mg) in worst.iter_mut().zip(margins) {
                if mg < w.0 {
                    *w = (
                        mg,
                        Some(ProbePoint {
                            t,
                            x: x.clone(),
                            u: 0.0,
                        }),
                    );
                }
            }
        }
        let names = [
            "a_bar symmetric psd",
            "h_bar bound L2^4",
            "lambda_bar bound nu(U0)(1-l)^2",
        ];
        Ok(names
            .iter()
            .zip(worst)
            .map(|(name, (margin, p))| AssumptionCheck {
                name: name.to_string(),
                passed: margin >= 0.0,
                margin,
                worst: p,
            })
            .collect())
    }

    /// `h̄ + λ̄` when it takes the same value at `probes` random points, as happens for
    /// `b2` and `lambda` free of `x`; the second moment of the mass is then
    /// `exp(rate * t)`.
    pub fn constant_rate(&self, probes: usize, seed: u64) -> Result<Option<f64>> {
        let nn = self.dim();
        let mut rng = rng::stream(seed, "duality_probe", 1);
        let mut first = None;
        for _ in 0..probes.max(2) {
            let t = rng.random::<f64>() * self.spec.horizon();
            let x: Vec<f64> = (0..nn).map(|_| -5.0 + 10.0 * rng.random::<f64>()).collect();
            let v = self.h_bar(t, &x)? + self.lambda_bar(t, &x);
            match first {
                None => first = Some(v),
                Some(f) if (f - v).abs() > 1e-12 * (1.0 + f64::abs(f)) => return Ok(None),
                _ => {}
            }
        }
        Ok(first)
    }
}

/// A tensor test function `F1 ⊗ F2`.
#[derive(Debug, Clone)]
pub struct TestPair {
    pub f1: TestFunction,
    pub f2: TestFunction,
}

impl TestPair {
    pub fn new(f1: TestFunction, f2: TestFunction) -> Self {
        TestPair { f1, f2 }
    }

    pub fn label(&self) -> String {
        format!("{} (x) {}", self.f1.label(), self.f2.label())
    }

    fn is_one(&self) -> bool {
        self.f1.kind() == TestFunctionKind::ConstantOne
            && self.f2.kind() == TestFunctionKind::ConstantOne
    }
}

/// Feynman-Kac estimates for every `(node, pair)`. Sample `j` uses the signal streams
/// `2j` and `2j + 1` of `seed`.
pub fn dual_moment_table(
    spec: &ModelSpec,
    pairs: &[TestPair],
    grid: TimeGrid,
    nodes: &[usize],
    samples: usize,
    seed: u64,
) -> Result<Vec<Vec<McEstimate>>> {
    let n = spec.dim_signal();
    let dm = DualityModel::new(spec);
    let last = nodes.iter().copied().max().unwrap_or(0).min(grid.steps());
    let dt = grid.dt();
    let inv: Vec<Vec<f64>> = (0..last)
        .map(|k| spec.sigma2_inverse(grid.time(k)))
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = (0..samples as u64)
        .into_par_iter()
        .map(|j| {
            let sim = |idx: u64| {
                let mut init = rng::stream(seed, rng::INITIAL, idx);
                let mut bm = rng::stream(seed, rng::BM_SIGNAL, idx);
                simulate_signal_with(spec, grid, last, &mut init, &mut bm)
            };
            let x1 = sim(2 * j)?;
            let x2 = sim(2 * j + 1)?;
            let mut joint = vec![0.0; 2 * n];
            let mut acc = Vec::with_capacity(last + 1);
            let mut s = 0.0;
            acc.push(s);
            for k in 0..last {
                joint[..n].copy_from_slice(&x1[k * n..(k + 1) * n]);
                joint[n..].copy_from_slice(&x2[k * n..(k + 1) * n]);
                let t = grid.time(k);
                s += (dm.h_bar_with(t, &joint, &inv[k]) + dm.lambda_bar(t, &joint)) * dt;
                acc.push(s);
            }
            let mut out = Vec::with_capacity(nodes.len() * pairs.len());
            for &k in nodes {
                let w = acc[k].exp();
                for p in pairs {
                    out.push(
                        p.f1.eval(&x1[k * n..(k + 1) * n]) * p.f2.eval(&x2[k * n..(k + 1) * n]) * w,
                    );
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(collate(&rows, nodes.len(), pairs.len()))
}

/// Single-pair Feynman-Kac estimate at the node nearest to `t`.
pub fn dual_moment_mc(
    spec: &ModelSpec,
    f1: &TestFunction,
    f2: &TestFunction,
    grid: TimeGrid,
    t: f64,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    let pair = TestPair::new(f1.clone(), f2.clone());
    Ok(dual_moment_table(spec, &[pair], grid, &[grid.node_at(t)], samples, seed)?[0][0])
}

/// Particle estimates of `E~[mu_t(F1) mu_t(F2)]` for every `(node, pair)`. Each outer
/// run draws a fresh reference-measure observation and runs two independent particle
/// clouds of `particles / 2` on it; `F1` is integrated against the first cloud and `F2`
/// against the second, so the product is unbiased given the observation.
#[allow(clippy::too_many_arguments)]
pub fn filter_moment_table(
    spec: &ModelSpec,
    pairs: &[TestPair],
    grid: TimeGrid,
    nodes: &[usize],
    outer_runs: usize,
    particles: usize,
    seed: u64,
    omit_compensator: bool,
) -> Result<Vec<Vec<McEstimate>>> {
    let half = (particles / 2).max(1);
    let rows: Vec<Vec<f64>> = (0..outer_runs as u64)
        .into_par_iter()
        .map(|r| {
            let path = simulate_decoupled(spec, grid, derive_seed(seed, "outer", r))?;
            let obs = extract_observation_events(&path);
            let cloud = |tag: &str| {
                let mu0 = initial_cloud(spec, half, derive_seed(seed, &format!("cloud_{tag}"), r))?;
                let mut cfg = FilterConfig::new(derive_seed(seed, &format!("filter_{tag}"), r))
                    .with_store(nodes);
                cfg.omit_compensator = omit_compensator;
                run_zakai(spec, &mu0, &obs, &cfg)
            };
            let (a, b) = (cloud("a")?, cloud("b")?);
            let mut out = Vec::with_capacity(nodes.len() * pairs.len());
            for &k in nodes {
                let (ma, mb) = (
                    a.state_at(k).expect("stored node"),
                    b.state_at(k).expect("stored node"),
                );
                for p in pairs {
                    out.push(ma.integrate_fn(&p.f1) * mb.integrate_fn(&p.f2));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(collate(&rows, nodes.len(), pairs.len()))
}

/// Single-pair particle estimate at the node nearest to `t`.
#[allow(clippy::too_many_arguments)]
pub fn filter_moment_mc(
    spec: &ModelSpec,
    f1: &TestFunction,
    f2: &TestFunction,
    grid: TimeGrid,
    t: f64,
    outer_runs: usize,
    particles: usize,
    seed: u64,
) -> Result<McEstimate> {
    let pair = TestPair::new(f1.clone(), f2.clone());
    Ok(filter_moment_table(
        spec,
        &[pair],
        grid,
        &[grid.node_at(t)],
        outer_runs,
        particles,
        seed,
        false,
    )?[0][0])
}

fn collate(rows: &[Vec<f64>], nodes: usize, pairs: usize) -> Vec<Vec<McEstimate>> {
    (0..nodes)
        .map(|a| {
            (0..pairs)
                .map(|b| {
                    let xs: Vec<f64> = rows.iter().map(|r| r[a * pairs + b]).collect();
                    McEstimate::from_samples(&xs)
                })
                .collect()
        })
        .collect()
}

/// Sample sizes for [`check_duality`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DualityBudget {
    pub dual_samples: usize,
    pub outer_runs: usize,
    /// Particles per outer run, split over the two clouds.
    pub particles: usize,
    pub steps: usize,
    pub se_multiplier: f64,
    /// A passing row whose band exceeds this fraction of the estimate is inconclusive.
    pub max_relative_band: f64,
    /// Test-only: run the filter without its compensator factor.
    #[doc(hidden)]
    #[serde(skip)]
    pub break_compensator: bool,
}

impl Default for DualityBudget {
    fn default() -> Self {
        DualityBudget {
            dual_samples: 100_000,
            outer_runs: 1000,
            particles: 1000,
            steps: 100,
            se_multiplier: DEFAULT_SE_MULTIPLIER,
            max_relative_band: 0.5,
            break_compensator: false,
        }
    }
}

/// Compares the two estimators for every pair and time. When `h̄ + λ̄` is constant,
/// pairs `1 ⊗ 1` are also compared with `exp(rate * t)`.
pub fn check_duality(
    spec: &ModelSpec,
    pairs: &[TestPair],
    times: &[f64],
    budget: &DualityBudget,
    seed: u64,
) -> Result<VerificationReport> {
    let started = Instant::now();
    let grid = crate::pathsim::TimeGrid::new(spec.horizon(), budget.steps)?;
    let nodes: Vec<usize> = times.iter().map(|t| grid.node_at(*t)).collect();
    let dual_seed = derive_seed(seed, "dual", 0);
    let filter_seed = derive_seed(seed, "filter", 0);
    let dual = dual_moment_table(spec, pairs, grid, &nodes, budget.dual_samples, dual_seed)?;
    let filt = filter_moment_table(
        spec,
        pairs,
        grid,
        &nodes,
        budget.outer_runs,
        budget.particles,
        filter_seed,
        budget.break_compensator,
    )?;
    let rate = DualityModel::new(spec).constant_rate(64, seed)?;
    let k = budget.se_multiplier;
    let mut rows = Vec::new();
    for (a, &node) in nodes.iter().enumerate() {
        let t = grid.time(node);
        for (b, p) in pairs.iter().enumerate() {
            let d = NamedEstimate::new("dual", &dual[a][b]);
            let f = NamedEstimate::new("filter", &filt[a][b]);
            rows.push(ReportRow::compare(
                format!("{} {}", time_label(t), p.label()),
                d.clone(),
                f.clone(),
                k,
                budget.max_relative_band,
            ));
            if let (Some(r), true) = (rate, p.is_one()) {
                let closed = NamedEstimate::exact("closed_form", (r * t).exp());
                rows.push(ReportRow::compare(
                    format!("{} dual vs closed form", time_label(t)),
                    d,
                    closed.clone(),
                    k,
                    budget.max_relative_band,
                ));
                rows.push(ReportRow::compare(
                    format!("{} filter vs closed form", time_label(t)),
                    f,
                    closed,
                    k,
                    budget.max_relative_band,
                ));
            }
        }
    }
    let mut report = VerificationReport::finish(
        "duality",
        spec.name(),
        rows,
        vec![seed, dual_seed, filter_seed],
        started,
    );
    if let Some(r) = rate {
        report.notes.push(format!(
            "constant second-moment rate h_bar + lambda_bar = {r}"
        ));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets;

    #[test]
    fn coefficients_of_the_constants_preset() {
        let spec = presets::constants().build().unwrap();
        let dm = DualityModel::new(&spec);
        let x = [0.3, -1.2];
        assert!((dm.h_bar(0.2, &x).unwrap() - 0.25).abs() < 1e-15);
        assert!((dm.lambda_bar(0.2, &x) - 0.49 * 2.0).abs() < 1e-15);
        assert!((dm.gamma_bar(0.2, &x).unwrap() + 1.23).abs() < 1e-14);
        assert!((dm.constant_rate(32, 1).unwrap().unwrap() - 1.23).abs() < 1e-14);
        let mut a = [0.0; 4];
        dm.a_bar(0.0, &x, &mut a);
        assert_eq!(a, [1.0, 0.0, 0.0, 1.0]);
        let mut b = [0.0; 2];
        dm.b_bar(0.0, &x, &mut b);
        assert_eq!(b, [-0.3, 1.2]);
    }

    #[test]
    fn bounds_hold_at_random_probes() {
        for cfg in [
            presets::tanh_drift(),
            presets::constants(),
            presets::linear_gaussian_jump(),
        ] {
            let spec = cfg.build().unwrap();
            let checks = DualityModel::new(&spec).check_bounds(10_000, 3).unwrap();
            assert!(
                checks.iter().all(|c| c.passed),
                "{}: {checks:?}",
                spec.name()
            );
        }
        let tanh = presets::tanh_drift().build().unwrap();
        assert_eq!(DualityModel::new(&tanh).constant_rate(32, 1).unwrap(), None);
    }

    #[test]
    fn constant_case_closed_form() {
        let spec = presets::constants().build().unwrap();
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let one = TestFunction::one(1);
        let e = dual_moment_mc(&spec, &one, &one, grid, 0.5, 200, 1).unwrap();
        assert!((e.mean - (1.23f64 * 0.5).exp()).abs() < 1e-12);
        assert!(e.std_error < 1e-12);
    }

    #[test]
    fn time_zero_is_the_product_of_initial_integrals() {
        let spec = presets::tanh_drift()
            .build()
            .unwrap()
            .with_initial(crate::model::InitialLaw::point(vec![0.4]))
            .unwrap();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let f1 = TestFunction::gaussian(vec![0.0], 1.0);
        let f2 = TestFunction::bump(vec![0.0], 2.0);
        let expected = f1.eval(&[0.4]) * f2.eval(&[0.4]);
        assert!(
            (dual_moment_mc(&spec, &f1, &f2, grid, 0.0, 10, 1)
                .unwrap()
                .mean
                - expected)
                .abs()
                < 1e-15
        );
        let f = filter_moment_mc(&spec, &f1, &f2, grid, 0.0, 5, 20, 1).unwrap();
        assert!((f.mean - expected).abs() < 1e-15);
    }

    #[test]
    fn filter_moment_is_bilinear() {
        let spec = presets::tanh_drift().build().unwrap();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let g = TestFunction::gaussian(vec![0.5], 1.0);
        let neg = TestFunction::linear_combination(-1.0, &g, 0.0, &g);
        let a = filter_moment_mc(&spec, &neg, &g, grid, 1.0, 20, 40, 3).unwrap();
        let b = filter_moment_mc(&spec, &g, &g, grid, 1.0, 20, 40, 3).unwrap();
        assert!((a.mean + b.mean).abs() < 1e-12 * b.mean.abs());
    }

    #[test]
    fn exchange_symmetry() {
        let spec = presets::tanh_drift().build().unwrap();
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let f1 = TestFunction::gaussian(vec![0.5], 1.0);
        let f2 = TestFunction::bump(vec![-0.5], 2.0);
        let a = dual_moment_mc(&spec, &f1, &f2, grid, 1.0, 20_000, 5).unwrap();
        let b = dual_moment_mc(&spec, &f2, &f1, grid, 1.0, 20_000, 6).unwrap();
        assert!(a.agrees_with(&b, 4.0), "{a:?} {b:?}");
    }

    #[test]
    fn small_budget_check_on_constants() {
        let spec = presets::constants().build().unwrap();
        let budget = DualityBudget {
            dual_samples: 2000,
            outer_runs: 1500,
            particles: 4,
            steps: 50,
            ..Default::default()
        };
        let one = TestFunction::one(1);
        let pairs = [TestPair::new(one.clone(), one)];
        let rep = check_duality(&spec, &pairs, &[0.5, 1.0], &budget, 7).unwrap();
        assert!(rep.passed(), "{}", rep.summary());
        let broken = DualityBudget {
            break_compensator: true,
            ..budget
        };
        let rep = check_duality(&spec, &pairs, &[0.5, 1.0], &broken, 7).unwrap();
        assert_eq!(
            rep.verdict,
            super::super::Verdict::Fail,
            "{}",
            rep.summary()
        );
    }
}

//! Joint-law probe: two independent solver stacks should produce scalar filter
//! functionals with the same distribution.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{NamedEstimate, ReportRow, VerificationReport};
use crate::ks::run_ks;
use crate::model::{ModelSpec, TestFunction};
use crate::pathsim::{extract_observation_events, simulate_system, TimeGrid};
use crate::rng::derive_seed;
use crate::stats::ks_two_sample;
use crate::zakai::{initial_cloud, run_zakai, FilterConfig};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointLawBudget {
    pub replicates: usize,
    pub particles: usize,
    pub steps: usize,
    /// Family-wise level, split evenly over the functionals.
    pub level: f64,
}

impl Default for JointLawBudget {
    fn default() -> Self {
        JointLawBudget {
            replicates: 1000,
            particles: 200,
            steps: 100,
            level: 0.01,
        }
    }
}

/// Replicated terminal functionals of one stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointLawSamples {
    /// `pi_T(x_1)` from the KS solver.
    pub pi_mean: Vec<f64>,
    /// `pi_T(exp(-|x|^2 / 2))` from the KS solver.
    pub pi_gauss: Vec<f64>,
    /// `mu_T(1)` from the Zakai solver.
    pub mass: Vec<f64>,
}

impl JointLawSamples {
    pub fn functionals(&self) -> [(&'static str, &[f64]); 3] {
        [
            ("pi_T(x_1)", &self.pi_mean),
            ("pi_T(gaussian)", &self.pi_gauss),
            ("mu_T(1)", &self.mass),
        ]
    }
}

/// Runs one stack: each replicate simulates `(X, Y)` under `spec` and filters it from
/// the model's initial law with the KS and Zakai solvers.
pub fn joint_law_samples(
    spec: &ModelSpec,
    budget: &JointLawBudget,
    seed: u64,
) -> Result<JointLawSamples> {
    let grid = TimeGrid::new(spec.horizon(), budget.steps)?;
    let n = spec.dim_signal();
    let f1 = TestFunction::coordinate(n, 0);
    let f2 = TestFunction::gaussian(vec![0.0; n], 1.0);
    let rows: Vec<[f64; 3]> = (0..budget.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let obs = extract_observation_events(&simulate_system(
                spec,
                grid,
                derive_seed(seed, "obs", r),
            )?);
            let pi0 = initial_cloud(spec, budget.particles, derive_seed(seed, "init_ks", r))?;
            let ks = run_ks(
                spec,
                &pi0,
                &obs,
                &FilterConfig::new(derive_seed(seed, "ks", r)),
            )?;
            let mu0 = initial_cloud(spec, budget.particles, derive_seed(seed, "init_zakai", r))?;
            let z = run_zakai(
                spec,
                &mu0,
                &obs,
                &FilterConfig::new(derive_seed(seed, "zakai", r)),
            )?;
            let pi = ks.run.final_state();
            Ok([
                pi.integrate_fn(&f1),
                pi.integrate_fn(&f2),
                z.final_state().total_mass(),
            ])
        })
        .collect::<Result<_>>()?;
    Ok(JointLawSamples {
        pi_mean: rows.iter().map(|r| r[0]).collect(),
        pi_gauss: rows.iter().map(|r| r[1]).collect(),
        mass: rows.iter().map(|r| r[2]).collect(),
    })
}

/// Two-sample Kolmogorov-Smirnov tests between a stack on `spec_a` and one on `spec_b`,
/// Bonferroni-corrected. Passing `spec_b` with a different initial law gives the
/// negative control.
pub fn check_joint_law(
    spec_a: &ModelSpec,
    spec_b: &ModelSpec,
    budget: &JointLawBudget,
    seed_a: u64,
    seed_b: u64,
) -> Result<VerificationReport> {
    let started = Instant::now();
    let a = joint_law_samples(spec_a, budget, seed_a)?;
    let b = joint_law_samples(spec_b, budget, seed_b)?;
    let fa = a.functionals();
    let fb = b.functionals();
    let level = budget.level / fa.len() as f64;
    let rows = fa
        .iter()
        .zip(&fb)
        .map(|((name, xs), (_, ys))| {
            let (d, p) = ks_two_sample(xs, ys);
            ReportRow::new(
                format!("KS two-sample {name}"),
                vec![
                    NamedEstimate::exact("statistic", d),
                    NamedEstimate::exact("p_value", p),
                    NamedEstimate::exact("level", level),
                ],
                None,
                level,
                p,
            )
        })
        .collect();
    let name = if spec_a.initial() == spec_b.initial() {
        spec_a.name().to_string()
    } else {
        format!("{} (mismatched initial laws)", spec_a.name())
    };
    Ok(VerificationReport::finish(
        "jointlaw",
        &name,
        rows,
        vec![seed_a, seed_b],
        started,
    ))
}

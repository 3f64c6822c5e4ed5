//! Shared-noise probe: two Zakai solvers with the same observation and mutation
//! noise but independent initial particle draws should merge at rate `N^{-1/2}`.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{NamedEstimate, ReportRow, VerificationReport};
use crate::measures::{distance_bl, ProbeSet};
use crate::model::ModelSpec;
use crate::pathsim::{extract_observation_events, simulate_system, TimeGrid};
use crate::rng::derive_seed;
use crate::stats::{log_log_slope, McEstimate};
use crate::zakai::{initial_cloud, run_zakai, FilterConfig};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathwiseBudget {
    pub ladder: Vec<usize>,
    /// Independent (observation, mutation noise) draws per ladder rung.
    pub pairs: usize,
    pub steps: usize,
    pub checkpoints: usize,
    /// Accepted range of the fitted exponent of `N`.
    pub slope_range: (f64, f64),
    /// Slack, in combined standard errors, for the rung-to-rung decrease.
    pub monotone_slack: f64,
}

impl Default for PathwiseBudget {
    fn default() -> Self {
        PathwiseBudget {
            ladder: vec![100, 400, 1600, 6400],
            pairs: 8,
            steps: 100,
            checkpoints: 20,
            slope_range: (-0.65, -0.35),
            monotone_slack: 2.0,
        }
    }
}

/// `max_t distance_bl` between the two solvers, one entry per pair. With `same_init`
/// both solvers start from the same particle set.
pub fn pathwise_distances(
    spec: &ModelSpec,
    particles: usize,
    budget: &PathwiseBudget,
    seed: u64,
    same_init: bool,
) -> Result<Vec<f64>> {
    let grid = TimeGrid::new(spec.horizon(), budget.steps)?;
    let nodes = grid.checkpoints(budget.checkpoints);
    let probes = ProbeSet::default_for(spec.dim_signal());
    (0..budget.pairs as u64)
        .into_par_iter()
        .map(|p| {
            let obs = extract_observation_events(&simulate_system(
                spec,
                grid,
                derive_seed(seed, "obs", p),
            )?);
            let cfg = FilterConfig::new(derive_seed(seed, "mutation", p)).with_store(&nodes);
            let tag = (p << 32) | particles as u64;
            let mu_a = initial_cloud(spec, particles, derive_seed(seed, "init_a", tag))?;
            let mu_b = if same_init {
                mu_a.clone()
            } else {
                initial_cloud(spec, particles, derive_seed(seed, "init_b", tag))?
            };
            let a = run_zakai(spec, &mu_a, &obs, &cfg)?;
            let b = run_zakai(spec, &mu_b, &obs, &cfg)?;
            Ok(nodes
                .iter()
                .map(|&k| {
                    distance_bl(
                        a.state_at(k).expect("stored"),
                        b.state_at(k).expect("stored"),
                        &probes,
                    )
                })
                .fold(0.0, f64::max))
        })
        .collect()
}

pub fn check_pathwise_uniqueness(
    spec: &ModelSpec,
    budget: &PathwiseBudget,
    seed: u64,
) -> Result<VerificationReport> {
    let started = Instant::now();
    let mut rows = Vec::new();
    let mut means = Vec::new();
    for &n in &budget.ladder {
        let d = McEstimate::from_samples(&pathwise_distances(spec, n, budget, seed, false)?);
        rows.push(ReportRow::new(
            format!("N={n} max_t distance_bl"),
            vec![NamedEstimate::new("distance", &d)],
            None,
            0.0,
            if d.mean.is_finite() { 0.0 } else { f64::NAN },
        ));
        means.push(d);
    }
    let excess = means
        .windows(2)
        .map(|w| {
            w[1].mean - w[0].mean - budget.monotone_slack * w[0].std_error.hypot(w[1].std_error)
        })
        .fold(0.0f64, f64::max);
    rows.push(ReportRow::new(
        "monotone decrease along ladder",
        Vec::new(),
        None,
        excess,
        0.0,
    ));
    let xs: Vec<f64> = budget.ladder.iter().map(|&n| n as f64).collect();
    let ys: Vec<f64> = means.iter().map(|m| m.mean).collect();
    let slope = log_log_slope(&xs, &ys);
    let (lo, hi) = budget.slope_range;
    let mid = 0.5 * (lo + hi);
    rows.push(ReportRow::new(
        "fitted exponent of N",
        vec![NamedEstimate::exact("slope", slope)],
        Some(-0.5),
        (slope - mid).abs(),
        0.5 * (hi - lo),
    ));
    Ok(VerificationReport::finish(
        "pathwise",
        spec.name(),
        rows,
        vec![seed],
        started,
    ))
}

//! Filter run record shared by the Zakai, KS and reweighted solvers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::measures::{ParticleMeasure, ResamplePolicy};
use crate::pathsim::TimeGrid;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Zakai,
    Ks,
    Reweighted,
}

/// Per-node summary of the filter state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDiagnostics {
    pub t: f64,
    /// `mu_t(1)`.
    pub mass: f64,
    pub ess: f64,
    /// Mean of the normalized state.
    pub mean: Vec<f64>,
    /// Row-major covariance of the normalized state.
    pub cov: Vec<f64>,
    pub resampled: bool,
}

impl NodeDiagnostics {
    pub(crate) fn of(t: f64, mu: &ParticleMeasure, resampled: bool) -> Self {
        NodeDiagnostics {
            t,
            mass: mu.total_mass(),
            ess: mu.ess(),
            mean: mu.mean(),
            cov: mu.covariance(),
            resampled,
        }
    }
}

/// Solver settings. The particle count is that of the initial measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub seed: u64,
    pub resample: ResamplePolicy,
    /// Nodes whose full particle state is kept; node 0 and the last node always are.
    pub store: Vec<usize>,
    /// Test-only: drop the `∫(1 - lambda) nu` factor from the Zakai weights.
    #[doc(hidden)]
    #[serde(skip)]
    pub omit_compensator: bool,
}

impl FilterConfig {
    pub fn new(seed: u64) -> Self {
        FilterConfig {
            seed,
            resample: ResamplePolicy::default(),
            store: Vec::new(),
            omit_compensator: false,
        }
    }

    pub fn with_resample(mut self, policy: ResamplePolicy) -> Self {
        self.resample = policy;
        self
    }

    pub fn with_store(mut self, nodes: &[usize]) -> Self {
        self.store = nodes.to_vec();
        self
    }

    pub(crate) fn keeps(&self, node: usize, last: usize) -> bool {
        node == 0 || node == last || self.store.contains(&node)
    }
}

/// Time-indexed filter output.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    pub kind: FilterKind,
    pub grid: TimeGrid,
    pub seed: u64,
    /// Accepted observation jumps consumed.
    pub observed_jumps: usize,
    pub diagnostics: Vec<NodeDiagnostics>,
    states: Vec<(usize, ParticleMeasure)>,
}

impl FilterRun {
    pub(crate) fn new(kind: FilterKind, grid: TimeGrid, seed: u64, observed_jumps: usize) -> Self {
        FilterRun {
            kind,
            grid,
            seed,
            observed_jumps,
            diagnostics: Vec::with_capacity(grid.steps() + 1),
            states: Vec::new(),
        }
    }

    pub(crate) fn record(
        &mut self,
        node: usize,
        mu: &ParticleMeasure,
        resampled: bool,
        keep: bool,
    ) {
        self.diagnostics
            .push(NodeDiagnostics::of(self.grid.time(node), mu, resampled));
        if keep {
            self.states.push((node, mu.clone()));
        }
    }

    pub(crate) fn push_state(&mut self, node: usize, mu: ParticleMeasure) {
        self.states.push((node, mu));
    }

    pub fn state_at(&self, node: usize) -> Option<&ParticleMeasure> {
        self.states.iter().find(|(k, _)| *k == node).map(|(_, m)| m)
    }

    pub fn final_state(&self) -> &ParticleMeasure {
        &self.states.last().expect("run stores its final state").1
    }

    pub fn states(&self) -> &[(usize, ParticleMeasure)] {
        &self.states
    }

    pub fn stored_nodes(&self) -> Vec<usize> {
        self.states.iter().map(|(k, _)| *k).collect()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.diagnostics.iter().map(|d| d.mass).collect()
    }

    /// Per-node CSV: `t, mass, ess, resampled, mean_*, cov_*_*`.
    pub fn to_csv(&self, config_hash: &str) -> String {
        let n = self.diagnostics.first().map_or(0, |d| d.mean.len());
        let mut s = format!("# config_hash={config_hash}\nt,mass,ess,resampled");
        for i in 1..=n {
            write!(s, ",mean_{i}").unwrap();
        }
        for i in 1..=n {
            for j in 1..=n {
                write!(s, ",cov_{i}_{j}").unwrap();
            }
        }
        s.push('\n');
        for d in &self.diagnostics {
            write!(s, "{},{},{},{}", d.t, d.mass, d.ess, u8::from(d.resampled)).unwrap();
            for v in d.mean.iter().chain(&d.cov) {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Writes `<stem>.csv` (diagnostics), `<stem>.json` (run metadata) and one particle
    /// file pair per stored node under `<stem>_states/`.
    pub fn write(&self, dir: &Path, stem: &str, config_hash: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{stem}.csv")), self.to_csv(config_hash))?;
        let meta = RunMeta {
            format: "levy-filter/filter-run".into(),
            config_hash: config_hash.into(),
            kind: self.kind,
            grid: self.grid,
            seed: self.seed,
            observed_jumps: self.observed_jumps,
            stored_nodes: self.stored_nodes(),
            diagnostics: self.diagnostics.clone(),
        };
        fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&meta)?,
        )?;
        let sdir = dir.join(format!("{stem}_states"));
        for (k, mu) in &self.states {
            crate::measures::write_measure(mu, &sdir, &format!("node_{k:06}"), config_hash)?;
        }
        Ok(())
    }

    /// Reads a run written by [`FilterRun::write`].
    pub fn read(dir: &Path, stem: &str) -> Result<(FilterRun, String)> {
        let path = dir.join(format!("{stem}.json"));
        let meta: RunMeta = serde_json::from_str(&fs::read_to_string(&path)?)
            .map_err(|e| crate::Error::Parse(format!("{}: {e}", path.display())))?;
        let sdir = dir.join(format!("{stem}_states"));
        let mut run = FilterRun::new(meta.kind, meta.grid, meta.seed, meta.observed_jumps);
        run.diagnostics = meta.diagnostics;
        for k in meta.stored_nodes {
            run.states.push((
                k,
                crate::measures::read_measure(&sdir, &format!("node_{k:06}"))?,
            ));
        }
        Ok((run, meta.config_hash))
    }
}

#[derive(Serialize, Deserialize)]
struct RunMeta {
    format: String,
    config_hash: String,
    kind: FilterKind,
    grid: TimeGrid,
    seed: u64,
    observed_jumps: usize,
    stored_nodes: Vec<usize>,
    diagnostics: Vec<NodeDiagnostics>,
}

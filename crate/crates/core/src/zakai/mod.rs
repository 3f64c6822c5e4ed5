//! Weighted-particle solver for the Zakai equation and the Kallianpur-Striebel
//! conditional Monte Carlo oracle.
//!
//! One step from `t_k` to `t_{k+1}` multiplies particle `i` by
//!
//! ```text
//! exp{h(x_i) . dW~_k - |h(x_i)|^2 dt / 2} * prod_{U0 events} lambda(s, x_i, u)
//!     * exp{dt * ∫_{U0} (1 - lambda(t_k, x_i, u)) nu(du)},    h = sigma2^{-1} b2,
//! ```
//!
//! evaluated at the pre-mutation position, and then moves the particle by one Euler
//! step of the signal. The likelihood process uses the same factors along a single
//! signal path, so the solver and the oracle share one discretization.

mod run;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use run::{FilterConfig, FilterKind, FilterRun, NodeDiagnostics};

use crate::measures::ParticleMeasure;
use crate::model::{ModelSpec, SignalScratch, TestFunction};
use crate::pathsim::{simulate_signal_with, ObservationRecord, ObservedJump, Region};
use crate::rng::{self, StreamRng};
use crate::stats::McEstimate;
use crate::{Error, Result};

/// Reference-measure Brownian increments `dW~_k = sigma2^{-1}(dY_k^cont + ∫ f2 nu dt)`
/// and the inverses of `sigma2(t_k)` for every step of an observation record.
#[derive(Debug, Clone)]
pub struct ObservationDrivers {
    m: usize,
    dw: Vec<f64>,
    s2inv: Vec<f64>,
}

impl ObservationDrivers {
    pub fn new(spec: &ModelSpec, obs: &ObservationRecord) -> Result<Self> {
        let m = spec.dim_obs();
        if obs.dim_obs != m {
            return Err(Error::Dimension(format!(
                "observation has dimension {}, model {m}",
                obs.dim_obs
            )));
        }
        let steps = obs.grid.steps();
        let dt = obs.grid.dt();
        let mut dw = vec![0.0; steps * m];
        let mut s2inv = Vec::with_capacity(steps * m * m);
        let mut mean = vec![0.0; m];
        let mut tmp = vec![0.0; m];
        for k in 0..steps {
            let t = obs.grid.time(k);
            let inv = spec.sigma2_inverse(t)?;
            spec.small_jump_mean(t, &mut mean);
            for (i, v) in tmp.iter_mut().enumerate() {
                *v = obs.continuous_at(k)[i] + mean[i] * dt;
            }
            crate::model::mat_vec(&inv, &tmp, &mut dw[k * m..(k + 1) * m]);
            s2inv.extend_from_slice(&inv);
        }
        Ok(ObservationDrivers { m, dw, s2inv })
    }

    pub fn dw(&self, k: usize) -> &[f64] {
        &self.dw[k * self.m..(k + 1) * self.m]
    }

    pub fn sigma2_inv(&self, k: usize) -> &[f64] {
        &self.s2inv[k * self.m * self.m..(k + 1) * self.m * self.m]
    }
}

/// Reusable per-particle buffers.
pub(crate) struct Scratch {
    pub b2: Vec<f64>,
    pub h: Vec<f64>,
    pub db: Vec<f64>,
    pub x: Vec<f64>,
    pub sig: SignalScratch,
    pub lw: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(spec: &ModelSpec, particles: usize) -> Self {
        Scratch {
            b2: vec![0.0; spec.dim_obs()],
            h: vec![0.0; spec.dim_obs()],
            db: vec![0.0; spec.dim_bm()],
            x: vec![0.0; spec.dim_signal()],
            sig: spec.signal_scratch(),
            lw: vec![0.0; particles],
        }
    }
}

/// `lambda(s, x, u)`, rejecting values that would make the log weight undefined.
#[inline]
pub(crate) fn event_intensity(spec: &ModelSpec, s: f64, x: &[f64], u: f64) -> Result<f64> {
    let l = spec.intensity(s, x, u);
    if l > 0.0 && l.is_finite() {
        Ok(l)
    } else {
        Err(Error::IntensityOutOfRange {
            t: s,
            x: x.to_vec(),
            u,
            value: l,
        })
    }
}

/// Log of the Zakai weight factor of one particle over one step.
#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn log_weight(
    spec: &ModelSpec,
    t: f64,
    dt: f64,
    x: &[f64],
    s2inv: &[f64],
    dw: &[f64],
    events: &[ObservedJump],
    with_compensator: bool,
    ws: &mut Scratch,
) -> Result<f64> {
    spec.obs_drift(t, x, s2inv, &mut ws.b2, &mut ws.h);
    let mut lg = 0.0;
    let mut h2 = 0.0;
    for (h, w) in ws.h.iter().zip(dw) {
        lg += h * w;
        h2 += h * h;
    }
    lg -= 0.5 * h2 * dt;
    for e in events.iter().filter(|e| e.region == Region::Small) {
        lg += event_intensity(spec, e.time, x, e.mark)?.ln();
    }
    if with_compensator {
        lg += dt * spec.intensity_deficit(t, x);
    }
    Ok(lg)
}

/// Multiplies the weights by `exp(lw)` and moves the new weight sum into the mass
/// scalar.
pub(crate) fn apply_log_weights(mu: &mut ParticleMeasure, lw: &[f64], node: usize) -> Result<()> {
    let max = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::degenerate(node, format!("log weight maximum {max}")));
    }
    let (_, weights, scale) = mu.parts_mut();
    for (w, l) in weights.iter_mut().zip(lw) {
        *w *= (l - max).exp();
    }
    *scale *= max.exp();
    let s = mu.absorb_weight_sum();
    if !(s > 0.0 && s.is_finite() && mu.scale() > 0.0 && mu.scale().is_finite()) {
        return Err(Error::degenerate(
            node,
            format!("mass {} after weighting", mu.scale() * s),
        ));
    }
    Ok(())
}

/// Moves every particle by one Euler step, drawing `d` normals per particle in order.
pub(crate) fn mutate(
    spec: &ModelSpec,
    t: f64,
    dt: f64,
    mu: &mut ParticleMeasure,
    rng: &mut StreamRng,
    ws: &mut Scratch,
    node: usize,
) -> Result<()> {
    let n = spec.dim_signal();
    let sq = dt.sqrt();
    let (points, _, _) = mu.parts_mut();
    for x in points.chunks_exact_mut(n) {
        for v in ws.db.iter_mut() {
            *v = sq * rng.sample::<f64, _>(StandardNormal);
        }
        ws.x.copy_from_slice(x);
        spec.signal_step(t, dt, &ws.x, &ws.db, &mut ws.sig, x);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: node });
        }
    }
    Ok(())
}

/// One weighting and mutation step of the unnormalized filter. `cont` is the
/// continuous observation increment over `(t, t + dt]` and `events` the accepted jumps in
/// that interval.
pub fn zakai_step(
    spec: &ModelSpec,
    state: &ParticleMeasure,
    t: f64,
    dt: f64,
    cont: &[f64],
    events: &[ObservedJump],
    rng: &mut StreamRng,
) -> Result<ParticleMeasure> {
    let m = spec.dim_obs();
    let s2inv = spec.sigma2_inverse(t)?;
    let mut mean = vec![0.0; m];
    spec.small_jump_mean(t, &mut mean);
    let shifted: Vec<f64> = cont.iter().zip(&mean).map(|(c, f)| c + f * dt).collect();
    let mut dw = vec![0.0; m];
    crate::model::mat_vec(&s2inv, &shifted, &mut dw);
    let mut mu = state.clone();
    let mut ws = Scratch::new(spec, mu.len());
    for i in 0..mu.len() {
        ws.lw[i] = log_weight(spec, t, dt, mu.point(i), &s2inv, &dw, events, true, &mut ws)?;
    }
    let lw = std::mem::take(&mut ws.lw);
    apply_log_weights(&mut mu, &lw, 0)?;
    mutate(spec, t, dt, &mut mu, rng, &mut ws, 0)?;
    Ok(mu)
}

/// `count` equally weighted draws from the initial law, from stream `initial/1` of
/// `seed`.
pub fn initial_cloud(spec: &ModelSpec, count: usize, seed: u64) -> Result<ParticleMeasure> {
    ParticleMeasure::sample_initial(spec, count, &mut rng::stream(seed, rng::INITIAL, 1))
}

/// Runs the Zakai particle filter from `mu0` over the observation's grid.
pub fn run_zakai(
    spec: &ModelSpec,
    mu0: &ParticleMeasure,
    obs: &ObservationRecord,
    cfg: &FilterConfig,
) -> Result<FilterRun> {
    check_initial(spec, mu0)?;
    let grid = obs.grid;
    let steps = grid.steps();
    let dt = grid.dt();
    let drivers = ObservationDrivers::new(spec, obs)?;
    let mut mu = mu0.normalize()?;
    let mut mut_rng = rng::stream(cfg.seed, rng::MUTATION, 0);
    let mut res_rng = rng::stream(cfg.seed, rng::RESAMPLE, 0);
    let mut ws = Scratch::new(spec, mu.len());
    let mut lw = vec![0.0; mu.len()];
    let mut run = FilterRun::new(FilterKind::Zakai, grid, cfg.seed, obs.jumps.len());
    run.record(0, &mu, false, true);
    for k in 0..steps {
        let t = grid.time(k);
        let events = obs.jumps_in_step(k);
        for (i, l) in lw.iter_mut().enumerate() {
            *l = log_weight(
                spec,
                t,
                dt,
                mu.point(i),
                drivers.sigma2_inv(k),
                drivers.dw(k),
                events,
                !cfg.omit_compensator,
                &mut ws,
            )?;
        }
        apply_log_weights(&mut mu, &lw, k + 1)?;
        mutate(spec, t, dt, &mut mu, &mut mut_rng, &mut ws, k + 1)?;
        let resampled = cfg.resample.should_resample(&mu);
        if resampled {
            mu = mu.resample_with(mu.len(), &mut res_rng)?;
        }
        run.record(k + 1, &mu, resampled, cfg.keeps(k + 1, steps));
    }
    Ok(run)
}

pub(crate) fn check_initial(spec: &ModelSpec, mu0: &ParticleMeasure) -> Result<()> {
    if mu0.dim() != spec.dim_signal() {
        return Err(Error::Dimension(format!(
            "initial measure has dimension {}, signal {}",
            mu0.dim(),
            spec.dim_signal()
        )));
    }
    if !mu0.is_normalized() {
        return Err(Error::Config(format!(
            "initial measure must be a probability measure (mass {})",
            mu0.total_mass()
        )));
    }
    Ok(())
}

/// `Lambda_k` along one signal path, split into its Brownian and jump parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodProcess {
    /// Cumulative `∑ h . dW~ - |h|^2 dt / 2`, one entry per node.
    pub log_continuous: Vec<f64>,
    /// Cumulative `∑ ln lambda + dt ∫ (1 - lambda) nu`, one entry per node.
    pub log_jump: Vec<f64>,
}

impl LikelihoodProcess {
    pub fn log_value(&self, k: usize) -> f64 {
        self.log_continuous[k] + self.log_jump[k]
    }
    pub fn value(&self, k: usize) -> f64 {
        self.log_value(k).exp()
    }
    /// `Lambda_k^{-1}`.
    pub fn inverse(&self, k: usize) -> f64 {
        (-self.log_value(k)).exp()
    }
    pub fn len(&self) -> usize {
        self.log_continuous.len()
    }
    pub fn is_empty(&self) -> bool {
        self.log_continuous.is_empty()
    }
}

/// Evaluates `Lambda` along the signal path `x` (`(steps + 1) x n`, row-major).
pub fn likelihood_process(
    spec: &ModelSpec,
    x: &[f64],
    obs: &ObservationRecord,
) -> Result<LikelihoodProcess> {
    let drivers = ObservationDrivers::new(spec, obs)?;
    likelihood_with(spec, x, obs, &drivers, obs.grid.steps())
}

pub(crate) fn likelihood_with(
    spec: &ModelSpec,
    x: &[f64],
    obs: &ObservationRecord,
    drivers: &ObservationDrivers,
    steps: usize,
) -> Result<LikelihoodProcess> {
    let n = spec.dim_signal();
    if x.len() < (steps + 1) * n {
        return Err(Error::Dimension(
            "signal path shorter than the observation grid".into(),
        ));
    }
    let dt = obs.grid.dt();
    let mut ws = Scratch::new(spec, 0);
    let mut lc = Vec::with_capacity(steps + 1);
    let mut lj = Vec::with_capacity(steps + 1);
    let (mut c, mut j) = (0.0, 0.0);
    lc.push(c);
    lj.push(j);
    for k in 0..steps {
        let t = obs.grid.time(k);
        let xk = &x[k * n..(k + 1) * n];
        spec.obs_drift(t, xk, drivers.sigma2_inv(k), &mut ws.b2, &mut ws.h);
        let dw = drivers.dw(k);
        let mut h2 = 0.0;
        for (h, w) in ws.h.iter().zip(dw) {
            c += h * w;
            h2 += h * h;
        }
        c -= 0.5 * h2 * dt;
        for e in obs.small_jumps_in_step(k) {
            j += event_intensity(spec, e.time, xk, e.mark)?.ln();
        }
        j += dt * spec.intensity_deficit(t, xk);
        lc.push(c);
        lj.push(j);
    }
    Ok(LikelihoodProcess {
        log_continuous: lc,
        log_jump: lj,
    })
}

/// Conditional Monte Carlo estimate of `P~_t(F) = E~[F(X_t) Lambda_t | Y]` and its
/// normalized version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub node: usize,
    pub label: String,
    /// `P~_t(F)`.
    pub unnormalized: McEstimate,
    /// `P~_t(1)`.
    pub mass: McEstimate,
    /// `P~_t(F) / P~_t(1)`.
    pub normalized: f64,
    /// Delta-method standard error of the ratio.
    pub normalized_se: f64,
}

/// Single-function, single-time oracle.
pub fn ks_oracle(
    spec: &ModelSpec,
    obs: &ObservationRecord,
    f: &TestFunction,
    node: usize,
    samples: usize,
    seed: u64,
) -> Result<OracleEstimate> {
    Ok(
        ks_oracle_table(spec, obs, std::slice::from_ref(f), &[node], samples, seed)?
            .remove(0)
            .remove(0),
    )
}

/// Oracle for every `(node, function)` pair, reusing the same signal draws. Sample `j`
/// uses streams `initial/j` and `bm_signal/j` of `seed`.
pub fn ks_oracle_table(
    spec: &ModelSpec,
    obs: &ObservationRecord,
    fs: &[TestFunction],
    nodes: &[usize],
    samples: usize,
    seed: u64,
) -> Result<Vec<Vec<OracleEstimate>>> {
    let n = spec.dim_signal();
    let last = nodes
        .iter()
        .copied()
        .max()
        .unwrap_or(0)
        .min(obs.grid.steps());
    let drivers = ObservationDrivers::new(spec, obs)?;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..samples as u64)
        .into_par_iter()
        .map(|j| {
            let mut init = rng::stream(seed, rng::INITIAL, j);
            let mut bm = rng::stream(seed, rng::BM_SIGNAL, j);
            let x = simulate_signal_with(spec, obs.grid, last, &mut init, &mut bm)?;
            let lp = likelihood_with(spec, &x, obs, &drivers, last)?;
            let mut fl = Vec::with_capacity(nodes.len() * fs.len());
            let mut l = Vec::with_capacity(nodes.len());
            for &k in nodes {
                let lam = lp.value(k);
                l.push(lam);
                for f in fs {
                    fl.push(f.eval(&x[k * n..(k + 1) * n]) * lam);
                }
            }
            Ok((fl, l))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(nodes.len());
    for (a, &k) in nodes.iter().enumerate() {
        let lam: Vec<f64> = rows.iter().map(|r| r.1[a]).collect();
        let mass = McEstimate::from_samples(&lam);
        let mut row = Vec::with_capacity(fs.len());
        for (b, f) in fs.iter().enumerate() {
            let fl: Vec<f64> = rows.iter().map(|r| r.0[a * fs.len() + b]).collect();
            let un = McEstimate::from_samples(&fl);
            let ratio = un.mean / mass.mean;
            let resid: Vec<f64> = fl
                .iter()
                .zip(&lam)
                .map(|(p, q)| (p - ratio * q) / mass.mean)
                .collect();
            let se = McEstimate::from_samples(&resid).std_error;
            row.push(OracleEstimate {
                node: k,
                label: f.label().to_string(),
                unnormalized: un,
                mass,
                normalized: ratio,
                normalized_se: se,
            });
        }
        out.push(row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;

//! Normalized particle solver for the Kushner-Stratonovich equation and the
//! reweighting that turns a normalized run back into an unnormalized one.
//!
//! Per step, from the normalized state `pi_k` at `t_k`:
//! 1. innovation `dW̄ = dW~ - pi_k(h) dt` and correction
//!    `w_i ∝ w_i exp{(h_i - pi_k(h)) . dW̄ - |h_i - pi_k(h)|^2 dt / 2}`;
//! 2. compensator `w_i ∝ w_i exp{-dt ∫ (lambda_i - pi_k(lambda)) nu(du)}`;
//! 3. each `U0` event in time order: `w_i ∝ w_i lambda(s, x_i, u) / pi_{s-}(lambda)`;
//! 4. Euler mutation, then optional resampling.
//!
//! Weights are renormalized after every substep. The reweighting factor `chi`
//! accumulates exactly the normalizing constants that the substeps divide out.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::measures::ParticleMeasure;
use crate::model::ModelSpec;
use crate::pathsim::{ObservationRecord, ObservedJump, Region};
use crate::rng::{self, StreamRng};
use crate::zakai::{
    check_initial, event_intensity, mutate, FilterConfig, FilterKind, FilterRun,
    ObservationDrivers, Scratch,
};
use crate::{Error, Result};

/// Filter quantities entering the innovation `dW̄` and the jump compensator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnovationRecord {
    pub dim_obs: usize,
    /// `dW̄_k`, `steps x m`.
    pub dw_bar: Vec<f64>,
    /// `pi_{t_k}(sigma2^{-1} b2)`, `steps x m`.
    pub pi_h: Vec<f64>,
    /// `∫_{U0} (1 - pi_{t_k}(lambda(t_k, ., u))) nu(du)`, one per step.
    pub pi_deficit: Vec<f64>,
    pub events: Vec<EventInnovation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventInnovation {
    pub step: usize,
    pub time: f64,
    pub mark: f64,
    /// `pi_{s-}(lambda(s, ., u))`.
    pub pi_lambda: f64,
}

/// Innovation data of a single step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInnovation {
    pub dw_bar: Vec<f64>,
    pub pi_h: Vec<f64>,
    pub pi_deficit: f64,
    pub pi_lambda: Vec<f64>,
}

/// A KS run together with the innovations it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct KsRun {
    pub run: FilterRun,
    pub innovations: InnovationRecord,
}

impl KsRun {
    /// Writes the run as in [`FilterRun::write`] plus `<stem>_innovations.json`.
    pub fn write(&self, dir: &Path, stem: &str, config_hash: &str) -> Result<()> {
        self.run.write(dir, stem, config_hash)?;
        let body =
            serde_json::json!({ "config_hash": config_hash, "innovations": self.innovations });
        fs::write(
            dir.join(format!("{stem}_innovations.json")),
            serde_json::to_string_pretty(&body)?,
        )?;
        Ok(())
    }

    pub fn read(dir: &Path, stem: &str) -> Result<(KsRun, String)> {
        let (run, hash) = FilterRun::read(dir, stem)?;
        let path = dir.join(format!("{stem}_innovations.json"));
        let mut body: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path)?)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let innovations = serde_json::from_value(body["innovations"].take())
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Ok((KsRun { run, innovations }, hash))
    }
}

/// Bayes update `w_i <- w_i lambda_i / sum_j w_j lambda_j` of normalized weights.
/// Returns the normalizer `pi(lambda)`.
pub(crate) fn jump_update(weights: &mut [f64], lambdas: &[f64], node: usize) -> Result<f64> {
    let pl: f64 = weights.iter().zip(lambdas).map(|(w, l)| w * l).sum();
    if !(pl > 0.0 && pl.is_finite()) {
        return Err(Error::degenerate(
            node,
            format!("pi(lambda) = {pl} at a jump"),
        ));
    }
    for (w, l) in weights.iter_mut().zip(lambdas) {
        *w = *w * l / pl;
    }
    Ok(pl)
}

/// Multiplies by `exp(lw)` and renormalizes to a probability measure.
fn reweight_normalized(mu: &mut ParticleMeasure, lw: &[f64], node: usize) -> Result<()> {
    crate::zakai::apply_log_weights(mu, lw, node)?;
    let (_, _, scale) = mu.parts_mut();
    *scale = 1.0;
    Ok(())
}

fn renormalize(mu: &mut ParticleMeasure, node: usize) -> Result<()> {
    let s = mu.absorb_weight_sum();
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::degenerate(node, format!("weight sum {s}")));
    }
    let (_, _, scale) = mu.parts_mut();
    *scale = 1.0;
    Ok(())
}

/// Weighting substeps 1-3 on a normalized state at the pre-mutation positions.
#[allow(clippy::too_many_arguments)]
fn correct(
    spec: &ModelSpec,
    mu: &mut ParticleMeasure,
    t: f64,
    dt: f64,
    s2inv: &[f64],
    dw: &[f64],
    events: &[ObservedJump],
    ws: &mut Scratch,
    node: usize,
) -> Result<StepInnovation> {
    let (n, m) = (spec.dim_signal(), spec.dim_obs());
    let len = mu.len();
    let mut hs = vec![0.0; len * m];
    let mut deficit = vec![0.0; len];
    let mut pi_h = vec![0.0; m];
    let mut pi_deficit = 0.0;
    for i in 0..len {
        let x = mu.point(i);
        spec.obs_drift(t, x, s2inv, &mut ws.b2, &mut ws.h);
        hs[i * m..(i + 1) * m].copy_from_slice(&ws.h);
        deficit[i] = spec.intensity_deficit(t, x);
        let w = mu.weights()[i];
        for (p, h) in pi_h.iter_mut().zip(&ws.h) {
            *p += w * h;
        }
        pi_deficit += w * deficit[i];
    }
    let dw_bar: Vec<f64> = dw.iter().zip(&pi_h).map(|(w, p)| w - p * dt).collect();

    for i in 0..len {
        let mut a = 0.0;
        let mut q = 0.0;
        for j in 0..m {
            let c = hs[i * m + j] - pi_h[j];
            a += c * dw_bar[j];
            q += c * c;
        }
        ws.lw[i] = a - 0.5 * q * dt;
    }
    reweight_normalized(mu, &ws.lw[..len], node)?;

    for (lw, d) in ws.lw[..len].iter_mut().zip(deficit) {
        *lw = dt * (d - pi_deficit);
    }
    reweight_normalized(mu, &ws.lw[..len], node)?;

    let mut pi_lambda = Vec::new();
    let mut lam = vec![0.0; len];
    for e in events.iter().filter(|e| e.region == Region::Small) {
        for (i, l) in lam.iter_mut().enumerate() {
            *l = event_intensity(spec, e.time, &mu.points()[i * n..(i + 1) * n], e.mark)?;
        }
        let (_, weights, _) = mu.parts_mut();
        pi_lambda.push(jump_update(weights, &lam, node)?);
        renormalize(mu, node)?;
    }
    Ok(StepInnovation {
        dw_bar,
        pi_h,
        pi_deficit,
        pi_lambda,
    })
}

/// One step of the normalized filter: correction at the pre-mutation positions, then
/// mutation.
pub fn ks_step(
    spec: &ModelSpec,
    state: &ParticleMeasure,
    t: f64,
    dt: f64,
    cont: &[f64],
    events: &[ObservedJump],
    rng: &mut StreamRng,
) -> Result<(ParticleMeasure, StepInnovation)> {
    let m = spec.dim_obs();
    let s2inv = spec.sigma2_inverse(t)?;
    let mut mean = vec![0.0; m];
    spec.small_jump_mean(t, &mut mean);
    let shifted: Vec<f64> = cont.iter().zip(&mean).map(|(c, f)| c + f * dt).collect();
    let mut dw = vec![0.0; m];
    crate::model::mat_vec(&s2inv, &shifted, &mut dw);
    let mut mu = state.normalize()?;
    let mut ws = Scratch::new(spec, mu.len());
    let inn = correct(spec, &mut mu, t, dt, &s2inv, &dw, events, &mut ws, 0)?;
    mutate(spec, t, dt, &mut mu, rng, &mut ws, 0)?;
    Ok((mu, inn))
}

/// Runs the KS particle filter. Uses the same mutation and resampling streams of
/// `cfg.seed` as [`crate::zakai::run_zakai`].
pub fn run_ks(
    spec: &ModelSpec,
    pi0: &ParticleMeasure,
    obs: &ObservationRecord,
    cfg: &FilterConfig,
) -> Result<KsRun> {
    check_initial(spec, pi0)?;
    let grid = obs.grid;
    let steps = grid.steps();
    let dt = grid.dt();
    let m = spec.dim_obs();
    let drivers = ObservationDrivers::new(spec, obs)?;
    let mut mu = pi0.normalize()?;
    let mut mut_rng = rng::stream(cfg.seed, rng::MUTATION, 0);
    let mut res_rng = rng::stream(cfg.seed, rng::RESAMPLE, 0);
    let mut ws = Scratch::new(spec, mu.len());
    let mut run = FilterRun::new(FilterKind::Ks, grid, cfg.seed, obs.jumps.len());
    let mut inn = InnovationRecord {
        dim_obs: m,
        dw_bar: Vec::with_capacity(steps * m),
        pi_h: Vec::with_capacity(steps * m),
        pi_deficit: Vec::with_capacity(steps),
        events: Vec::new(),
    };
    run.record(0, &mu, false, true);
    for k in 0..steps {
        let t = grid.time(k);
        let events = obs.jumps_in_step(k);
        let step = correct(
            spec,
            &mut mu,
            t,
            dt,
            drivers.sigma2_inv(k),
            drivers.dw(k),
            events,
            &mut ws,
            k + 1,
        )?;
        mutate(spec, t, dt, &mut mu, &mut mut_rng, &mut ws, k + 1)?;
        let resampled = cfg.resample.should_resample(&mu);
        if resampled {
            mu = mu.resample_with(mu.len(), &mut res_rng)?;
            let (_, _, scale) = mu.parts_mut();
            *scale = 1.0;
        }
        inn.dw_bar.extend_from_slice(&step.dw_bar);
        inn.pi_h.extend_from_slice(&step.pi_h);
        inn.pi_deficit.push(step.pi_deficit);
        for (e, pl) in events
            .iter()
            .filter(|e| e.region == Region::Small)
            .zip(step.pi_lambda)
        {
            inn.events.push(EventInnovation {
                step: k,
                time: e.time,
                mark: e.mark,
                pi_lambda: pl,
            });
        }
        run.record(k + 1, &mu, resampled, cfg.keeps(k + 1, steps));
    }
    Ok(KsRun {
        run,
        innovations: inn,
    })
}

/// `ln chi_k` at every node, from the innovations and the observation.
pub fn log_chi(spec: &ModelSpec, ks: &KsRun, obs: &ObservationRecord) -> Result<Vec<f64>> {
    let inn = &ks.innovations;
    let grid = obs.grid;
    let steps = grid.steps();
    let m = inn.dim_obs;
    if grid != ks.run.grid || inn.pi_deficit.len() != steps || inn.pi_h.len() != steps * m {
        return Err(Error::Dimension(
            "KS run and observation record cover different grids".into(),
        ));
    }
    let drivers = ObservationDrivers::new(spec, obs)?;
    let dt = grid.dt();
    let mut out = Vec::with_capacity(steps + 1);
    let mut acc = 0.0;
    out.push(acc);
    let mut ev = inn.events.iter().peekable();
    for k in 0..steps {
        let dw = drivers.dw(k);
        let p = &inn.pi_h[k * m..(k + 1) * m];
        for j in 0..m {
            let dw_bar = dw[j] - p[j] * dt;
            acc += p[j] * dw_bar + 0.5 * p[j] * p[j] * dt;
        }
        while let Some(e) = ev.next_if(|e| e.step == k) {
            if !(e.pi_lambda > 0.0 && e.pi_lambda.is_finite()) {
                return Err(Error::degenerate(
                    k + 1,
                    format!("pi(lambda) = {} at t = {}", e.pi_lambda, e.time),
                ));
            }
            acc += e.pi_lambda.ln();
        }
        acc += dt * inn.pi_deficit[k];
        out.push(acc);
    }
    if ev.next().is_some() {
        return Err(Error::Parse(
            "innovation events outside the observation grid".into(),
        ));
    }
    Ok(out)
}

/// Scales each stored KS state by `chi_t`, giving an unnormalized run whose
/// normalization returns the KS states unchanged.
pub fn reweight_ks_to_zakai(
    spec: &ModelSpec,
    ks: &KsRun,
    obs: &ObservationRecord,
) -> Result<FilterRun> {
    let lchi = log_chi(spec, ks, obs)?;
    let src = &ks.run;
    let mut out = FilterRun::new(
        FilterKind::Reweighted,
        src.grid,
        src.seed,
        src.observed_jumps,
    );
    for (k, d) in src.diagnostics.iter().enumerate() {
        let mut d = d.clone();
        d.mass *= lchi[k].exp();
        out.diagnostics.push(d);
    }
    for (k, mu) in src.states() {
        out.push_state(*k, mu.scaled(lchi[*k].exp()));
    }
    Ok(out)
}

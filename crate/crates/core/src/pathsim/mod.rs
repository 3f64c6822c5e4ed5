//! Simulation of the coupled system under the physical measure `P` and of the
//! decoupled system under the reference measure `P~`.
//!
//! The signal uses Euler-Maruyama. Jumps are simulated exactly: candidate events come
//! from a Poisson clock of rate `nu(U)`, each candidate at `(s, u)` is accepted with
//! probability `lambda(s, X_{t_k}, u)` where `t_k` is the last grid node before `s`.
//! Every noise source draws from its own named stream (see [`crate::rng`]).

mod io;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

pub use io::{read_path, write_path, PathFiles};

use crate::model::ModelSpec;
use crate::rng::{self, StreamRng};
use crate::{Error, Result};

/// Uniform grid `t_k = k T / steps`, with `t_steps = T` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) || steps == 0 {
            return Err(Error::Config(format!(
                "invalid grid: T = {horizon}, steps = {steps}"
            )));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn steps(&self) -> usize {
        self.steps
    }
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        if k >= self.steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// Node closest to time `t`.
    pub fn node_at(&self, t: f64) -> usize {
        ((t / self.dt()).round().max(0.0) as usize).min(self.steps)
    }

    /// `count` evenly spaced nodes ending at the last node.
    pub fn checkpoints(&self, count: usize) -> Vec<usize> {
        let count = count.clamp(1, self.steps);
        let mut out: Vec<usize> = (1..=count)
            .map(|i| (i * self.steps + count / 2) / count)
            .collect();
        out.dedup();
        out
    }

    /// The same horizon with twice the steps.
    pub fn refined(&self) -> TimeGrid {
        TimeGrid {
            horizon: self.horizon,
            steps: 2 * self.steps,
        }
    }
}

/// Probability measure a path was simulated under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    /// `P`: coupled system, observation drift `b2(t, X)`, small jumps thinned.
    Physical,
    /// `P~`: observation Brownian `W~`, small jumps with intensity `nu`.
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// `U0`.
    Small,
    /// `U \ U0`.
    Large,
}

/// A candidate jump of the marked point process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    /// Grid step containing the event: `t_step < time <= t_{step+1}`.
    pub step: usize,
    pub mark: f64,
    pub region: Region,
    pub accepted: bool,
    /// Jump of `Y`; zero when rejected.
    pub jump: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    /// Signal Brownian increments, `steps x d` row-major.
    pub bm_signal: Vec<f64>,
    /// Observation Brownian increments (`dW` under `P`, `dW~` under `P~`), `steps x m`.
    pub bm_obs: Vec<f64>,
    pub bm_obs_measure: Measure,
    pub events: Vec<JumpEvent>,
    pub seed: u64,
}

/// Discretized joint trajectory of `(X, Y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemPath {
    pub grid: TimeGrid,
    pub dim_signal: usize,
    pub dim_obs: usize,
    pub dim_bm: usize,
    /// `(steps + 1) x n`.
    pub x: Vec<f64>,
    /// `(steps + 1) x m`.
    pub y: Vec<f64>,
    /// Continuous part of each observation increment, `steps x m`.
    pub y_continuous: Vec<f64>,
    pub noise: NoiseRecord,
    pub measure: Measure,
}

impl SystemPath {
    pub fn x_at(&self, k: usize) -> &[f64] {
        &self.x[k * self.dim_signal..(k + 1) * self.dim_signal]
    }

    pub fn y_at(&self, k: usize) -> &[f64] {
        &self.y[k * self.dim_obs..(k + 1) * self.dim_obs]
    }

    pub fn accepted_events(&self, region: Region) -> impl Iterator<Item = &JumpEvent> {
        self.noise
            .events
            .iter()
            .filter(move |e| e.accepted && e.region == region)
    }
}

/// Simulates the coupled system under `P`.
pub fn simulate_system(spec: &ModelSpec, grid: TimeGrid, seed: u64) -> Result<SystemPath> {
    simulate(spec, grid, seed, Measure::Physical)
}

/// Simulates the decoupled system under `P~`. The signal path is identical to
/// [`simulate_system`] for the same seed.
pub fn simulate_decoupled(spec: &ModelSpec, grid: TimeGrid, seed: u64) -> Result<SystemPath> {
    simulate(spec, grid, seed, Measure::Reference)
}

/// Simulates the signal alone: the first stage of [`simulate_system`], drawing from the
/// `initial` and `bm_signal` streams of `seed`.
pub fn simulate_signal(spec: &ModelSpec, grid: TimeGrid, seed: u64) -> Result<Vec<f64>> {
    let mut init = rng::stream(seed, rng::INITIAL, 0);
    let mut bm = rng::stream(seed, rng::BM_SIGNAL, 0);
    simulate_signal_with(spec, grid, grid.steps(), &mut init, &mut bm)
}

pub(crate) fn simulate_signal_with(
    spec: &ModelSpec,
    grid: TimeGrid,
    steps: usize,
    init: &mut StreamRng,
    bm: &mut StreamRng,
) -> Result<Vec<f64>> {
    let (n, d) = (spec.dim_signal(), spec.dim_bm());
    let dt = grid.dt();
    let sq = dt.sqrt();
    let mut x = vec![0.0; (steps + 1) * n];
    spec.initial().sample(init, &mut x[..n]);
    let mut ws = spec.signal_scratch();
    let mut db = vec![0.0; d];
    for k in 0..steps {
        for v in db.iter_mut() {
            *v = sq * bm.sample::<f64, _>(StandardNormal);
        }
        let (head, tail) = x.split_at_mut((k + 1) * n);
        spec.signal_step(
            grid.time(k),
            dt,
            &head[k * n..],
            &db,
            &mut ws,
            &mut tail[..n],
        );
        if tail[..n].iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: k });
        }
    }
    Ok(x)
}

fn simulate(spec: &ModelSpec, grid: TimeGrid, seed: u64, measure: Measure) -> Result<SystemPath> {
    let (n, m, d) = (spec.dim_signal(), spec.dim_obs(), spec.dim_bm());
    let steps = grid.steps();
    let dt = grid.dt();
    let sq = dt.sqrt();

    let mut init_rng = rng::stream(seed, rng::INITIAL, 0);
    let mut bm_rng = rng::stream(seed, rng::BM_SIGNAL, 0);
    let mut obs_rng = rng::stream(seed, rng::BM_OBS, 0);
    let mut clock_rng = rng::stream(seed, rng::POISSON_CLOCK, 0);
    let mut mark_rng = rng::stream(seed, rng::MARKS, 0);
    let mut thin_rng = rng::stream(seed, rng::THINNING, 0);

    let small = spec.small_marks();
    let large = spec.large_marks();
    let small_rate = small.mass();
    let total_rate = small_rate + large.map_or(0.0, |r| r.mass());
    let next_arrival = |clock: &mut StreamRng| -> f64 {
        if total_rate > 0.0 {
            clock.sample::<f64, _>(Exp1) / total_rate
        } else {
            f64::INFINITY
        }
    };

    let mut x = vec![0.0; (steps + 1) * n];
    let mut y = vec![0.0; (steps + 1) * m];
    let mut y_cont = vec![0.0; steps * m];
    let mut bm_signal = vec![0.0; steps * d];
    let mut bm_obs = vec![0.0; steps * m];
    let mut events = Vec::new();

    spec.initial().sample(&mut init_rng, &mut x[..n]);

    let mut ws = spec.signal_scratch();
    let mut s2 = vec![0.0; m * m];
    let mut drift = vec![0.0; m];
    let mut comp = vec![0.0; m];
    let mut jump = vec![0.0; m];
    let mut arrival = next_arrival(&mut clock_rng);

    for k in 0..steps {
        let t = grid.time(k);
        let t_next = grid.time(k + 1);
        let xk = x[k * n..(k + 1) * n].to_vec();

        let db = &mut bm_signal[k * d..(k + 1) * d];
        for v in db.iter_mut() {
            *v = sq * bm_rng.sample::<f64, _>(StandardNormal);
        }
        let dw = &mut bm_obs[k * m..(k + 1) * m];
        for v in dw.iter_mut() {
            *v = sq * obs_rng.sample::<f64, _>(StandardNormal);
        }

        spec.sigma2(t, &mut s2);
        match measure {
            Measure::Physical => {
                spec.b2(t, &xk, &mut drift);
                spec.small_jump_compensator(t, &xk, &mut comp);
            }
            Measure::Reference => {
                drift.fill(0.0);
                spec.small_jump_mean(t, &mut comp);
            }
        }
        let cont = &mut y_cont[k * m..(k + 1) * m];
        for i in 0..m {
            let noise: f64 = (0..m).map(|j| s2[i * m + j] * dw[j]).sum();
            cont[i] = drift[i] * dt + noise - comp[i] * dt;
        }
        let (y_head, y_tail) = y.split_at_mut((k + 1) * m);
        let y_next = &mut y_tail[..m];
        for i in 0..m {
            y_next[i] = y_head[k * m + i] + cont[i];
        }

        while arrival <= t_next {
            let s = arrival;
            let region = if large.is_none() || mark_rng.random::<f64>() * total_rate < small_rate {
                Region::Small
            } else {
                Region::Large
            };
            let marks = match region {
                Region::Small => small,
                Region::Large => large.expect("large region present"),
            };
            let u = marks.sample(&mut mark_rng);
            let v: f64 = thin_rng.random();
            let accepted = match (region, measure) {
                (Region::Small, Measure::Reference) => true,
                _ => v < spec.intensity(s, &xk, u),
            };
            if accepted {
                match region {
                    Region::Small => spec.f2(s, u, &mut jump),
                    Region::Large => spec.g2(s, u, &mut jump),
                }
                for i in 0..m {
                    y_next[i] += jump[i];
                }
            } else {
                jump.fill(0.0);
            }
            events.push(JumpEvent {
                time: s,
                step: k,
                mark: u,
                region,
                accepted,
                jump: jump.clone(),
            });
            arrival += next_arrival(&mut clock_rng);
        }

        let (x_head, x_tail) = x.split_at_mut((k + 1) * n);
        spec.signal_step(
            t,
            dt,
            &x_head[k * n..],
            &bm_signal[k * d..(k + 1) * d],
            &mut ws,
            &mut x_tail[..n],
        );
        if x_tail[..n]
            .iter()
            .chain(y_tail[..m].iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite { step: k });
        }
    }

    Ok(SystemPath {
        grid,
        dim_signal: n,
        dim_obs: m,
        dim_bm: d,
        x,
        y,
        y_continuous: y_cont,
        noise: NoiseRecord {
            bm_signal,
            bm_obs,
            bm_obs_measure: measure,
            events,
            seed,
        },
        measure,
    })
}

/// An accepted jump as seen by a filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedJump {
    pub time: f64,
    pub step: usize,
    pub mark: f64,
    pub region: Region,
    pub size: Vec<f64>,
}

/// What a filter consumes: continuous increments and the accepted jump list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub grid: TimeGrid,
    pub dim_obs: usize,
    pub y0: Vec<f64>,
    /// `steps x m`.
    pub continuous: Vec<f64>,
    pub jumps: Vec<ObservedJump>,
    /// `jumps[offsets[k]..offsets[k + 1]]` fall in step `k`.
    offsets: Vec<usize>,
}

impl ObservationRecord {
    pub fn new(
        grid: TimeGrid,
        dim_obs: usize,
        y0: Vec<f64>,
        continuous: Vec<f64>,
        mut jumps: Vec<ObservedJump>,
    ) -> Result<Self> {
        if continuous.len() != grid.steps() * dim_obs || y0.len() != dim_obs {
            return Err(Error::Dimension(
                "observation record does not match grid".into(),
            ));
        }
        jumps.sort_by(|a, b| a.time.total_cmp(&b.time));
        let mut offsets = vec![0usize; grid.steps() + 1];
        for j in &jumps {
            if j.step >= grid.steps() || j.size.len() != dim_obs {
                return Err(Error::Dimension(format!(
                    "jump at t = {} outside grid",
                    j.time
                )));
            }
        }
        let mut idx = 0;
        for (k, off) in offsets.iter_mut().enumerate().skip(1) {
            while idx < jumps.len() && jumps[idx].step < k {
                idx += 1;
            }
            *off = idx;
        }
        Ok(ObservationRecord {
            grid,
            dim_obs,
            y0,
            continuous,
            jumps,
            offsets,
        })
    }

    pub fn continuous_at(&self, k: usize) -> &[f64] {
        &self.continuous[k * self.dim_obs..(k + 1) * self.dim_obs]
    }

    pub fn jumps_in_step(&self, k: usize) -> &[ObservedJump] {
        let end = if k + 1 < self.offsets.len() {
            self.offsets[k + 1]
        } else {
            self.jumps.len()
        };
        &self.jumps[self.offsets[k]..end]
    }

    pub fn small_jumps_in_step(&self, k: usize) -> impl Iterator<Item = &ObservedJump> {
        self.jumps_in_step(k)
            .iter()
            .filter(|j| j.region == Region::Small)
    }

    /// Re-sums the components into `Y` node by node, in the simulator's order.
    pub fn reconstruct(&self) -> Vec<f64> {
        let m = self.dim_obs;
        let steps = self.grid.steps();
        let mut y = vec![0.0; (steps + 1) * m];
        y[..m].copy_from_slice(&self.y0);
        for k in 0..steps {
            for i in 0..m {
                y[(k + 1) * m + i] = y[k * m + i] + self.continuous[k * m + i];
            }
            for j in self.jumps_in_step(k) {
                for i in 0..m {
                    y[(k + 1) * m + i] += j.size[i];
                }
            }
        }
        y
    }

    /// Restriction to the first `steps` steps of the grid.
    pub fn truncated(&self, steps: usize) -> Result<ObservationRecord> {
        let steps = steps.min(self.grid.steps());
        let grid = TimeGrid::new(self.grid.time(steps), steps)?;
        let jumps = self
            .jumps
            .iter()
            .filter(|j| j.step < steps)
            .cloned()
            .collect();
        ObservationRecord::new(
            grid,
            self.dim_obs,
            self.y0.clone(),
            self.continuous[..steps * self.dim_obs].to_vec(),
            jumps,
        )
    }
}

/// Splits the observation of `path` into continuous increments and accepted jumps.
pub fn extract_observation_events(path: &SystemPath) -> ObservationRecord {
    let jumps = path
        .noise
        .events
        .iter()
        .filter(|e| e.accepted)
        .map(|e| ObservedJump {
            time: e.time,
            step: e.step,
            mark: e.mark,
            region: e.region,
            size: e.jump.clone(),
        })
        .collect();
    ObservationRecord::new(
        path.grid,
        path.dim_obs,
        path.y_at(0).to_vec(),
        path.y_continuous.clone(),
        jumps,
    )
    .expect("simulated path is well formed")
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::model::{presets, Intensity, ModelSpec};

    fn grid(steps: usize) -> TimeGrid {
        TimeGrid::new(1.0, steps).unwrap()
    }

    #[test]
    fn grid_invariants() {
        let g = TimeGrid::new(0.7, 3).unwrap();
        let nodes = g.nodes();
        assert_eq!(nodes[0], 0.0);
        assert_eq!(*nodes.last().unwrap(), 0.7);
        assert!(nodes.windows(2).all(|w| w[0] < w[1]));
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert_eq!(
            grid(100).checkpoints(10),
            vec![10, 20, 30, 40, 50, 60, 70, 80, 90, 100]
        );
    }

    #[test]
    fn pure_diffusion_observation() {
        // b2 = 0, sigma2 = 1, no marks at all
        let spec = ModelSpec::builder(1, 1, 1)
            .small_marks(
                crate::model::MarkRegion::new(
                    crate::model::MarkLaw::Uniform { lo: 0.0, hi: 1.0 },
                    0.0,
                    4,
                )
                .unwrap(),
            )
            .build()
            .unwrap();
        let p = simulate_system(&spec, grid(50), 3).unwrap();
        assert!(p.noise.events.is_empty());
        let mut acc = 0.0;
        for k in 0..50 {
            acc += p.noise.bm_obs[k];
        }
        assert_eq!(p.y_at(50)[0], acc);
    }

    #[test]
    fn frozen_signal() {
        let spec = ModelSpec::builder(1, 1, 1)
            .sigma1(Arc::new(|_, _, o: &mut [f64]| o[0] = 0.0))
            .initial(crate::model::InitialLaw::point(vec![1.25]))
            .build()
            .unwrap();
        let p = simulate_system(&spec, grid(20), 9).unwrap();
        assert!(p.x.iter().all(|v| *v == 1.25));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = presets::tanh_drift().build().unwrap();
        let a = simulate_system(&spec, grid(100), 42).unwrap();
        let b = simulate_system(&spec, grid(100), 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_system(&spec, grid(100), 43).unwrap();
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn decoupled_shares_the_signal() {
        let spec = presets::linear_gaussian_jump().build().unwrap();
        let a = simulate_system(&spec, grid(200), 5).unwrap();
        let b = simulate_decoupled(&spec, grid(200), 5).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(b.measure, Measure::Reference);
        assert!(
            b.accepted_events(Region::Small).count()
                == b.noise
                    .events
                    .iter()
                    .filter(|e| e.region == Region::Small)
                    .count()
        );
        assert_eq!(simulate_signal(&spec, grid(200), 5).unwrap(), a.x);
    }

    #[test]
    fn jumps_land_on_accepted_events_only() {
        let spec = presets::linear_gaussian_jump().build().unwrap();
        let p = simulate_system(&spec, grid(100), 11).unwrap();
        for k in 0..100 {
            let jumps: f64 = p
                .noise
                .events
                .iter()
                .filter(|e| e.step == k && e.accepted)
                .map(|e| e.jump[0])
                .sum();
            let dy = p.y_at(k + 1)[0] - p.y_at(k)[0] - p.y_continuous[k];
            assert!((dy - jumps).abs() < 1e-12);
        }
        for e in &p.noise.events {
            assert!(e.time > p.grid.time(e.step) && e.time <= p.grid.time(e.step + 1));
            if !e.accepted {
                assert_eq!(e.jump, vec![0.0]);
            }
        }
        assert!(p.noise.events.windows(2).all(|w| w[0].time < w[1].time));
    }

    #[test]
    fn extraction_reconstructs_bit_exactly() {
        let spec = presets::linear_gaussian_jump().build().unwrap();
        for seed in 0..5 {
            let p = simulate_system(&spec, grid(300), seed).unwrap();
            let obs = extract_observation_events(&p);
            let y = obs.reconstruct();
            assert!(y.iter().zip(&p.y).all(|(a, b)| a.to_bits() == b.to_bits()));
            assert_eq!(
                obs.jumps.len(),
                p.noise.events.iter().filter(|e| e.accepted).count()
            );
        }
    }

    #[test]
    fn extraction_without_jumps() {
        let spec = ModelSpec::builder(1, 1, 1)
            .small_marks(
                crate::model::MarkRegion::new(
                    crate::model::MarkLaw::Uniform { lo: 0.0, hi: 1.0 },
                    0.0,
                    4,
                )
                .unwrap(),
            )
            .build()
            .unwrap();
        let p = simulate_system(&spec, grid(10), 1).unwrap();
        let obs = extract_observation_events(&p);
        assert!(obs.jumps.is_empty());
        for k in 0..10 {
            assert!((obs.continuous_at(k)[0] - (p.y_at(k + 1)[0] - p.y_at(k)[0])).abs() < 1e-14);
        }
    }

    #[test]
    fn single_small_event_carries_its_mark() {
        // atoms at u = 0.25 only, huge rate but tiny horizon: find a seed with one event
        let spec = ModelSpec::builder(1, 1, 1)
            .small_marks(
                crate::model::MarkRegion::new(
                    crate::model::MarkLaw::Atoms {
                        points: vec![0.25],
                        probs: vec![1.0],
                    },
                    1.0,
                    1,
                )
                .unwrap(),
            )
            .f2(Arc::new(|_, u, o: &mut [f64]| o[0] = u))
            .lambda(Intensity::mark_free(|_, _, _| 0.9))
            .build()
            .unwrap();
        let p = (0..200)
            .map(|s| simulate_system(&spec, grid(10), s).unwrap())
            .find(|p| p.accepted_events(Region::Small).count() == 1)
            .expect("some seed yields exactly one event");
        let obs = extract_observation_events(&p);
        assert_eq!(obs.jumps.len(), 1);
        assert_eq!(obs.jumps[0].mark, 0.25);
        assert_eq!(obs.jumps[0].size, vec![0.25]);
    }
}

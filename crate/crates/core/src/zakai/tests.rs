use std::sync::Arc;

use super::*;
use crate::measures::ResamplePolicy;
use crate::model::{presets, InitialLaw, Intensity, MarkLaw, MarkRegion};
use crate::pathsim::{
    extract_observation_events, simulate_decoupled, simulate_signal, simulate_system, TimeGrid,
};

fn x_free(c: f64, b2: f64) -> ModelSpec {
    ModelSpec::builder(1, 1, 1)
        .b1(Arc::new(|_, x: &[f64], o: &mut [f64]| o[0] = -x[0]))
        .b2(Arc::new(move |_, _, o: &mut [f64]| o[0] = b2))
        .f2(Arc::new(|_, u, o: &mut [f64]| o[0] = u - 0.5))
        .lambda(Intensity::mark_free(move |_, _, _| c))
        .small_marks(MarkRegion::new(MarkLaw::Uniform { lo: 0.0, hi: 1.0 }, 2.0, 8).unwrap())
        .initial(InitialLaw::gaussian(vec![0.0], vec![1.0]))
        .build()
        .unwrap()
}

fn small_events(obs: &ObservationRecord) -> usize {
    obs.jumps
        .iter()
        .filter(|j| j.region == Region::Small)
        .count()
}

#[test]
fn x_free_weights_leave_the_normalized_state_alone() {
    let spec = x_free(0.3, 0.0);
    let grid = TimeGrid::new(1.0, 50).unwrap();
    let obs = extract_observation_events(&simulate_decoupled(&spec, grid, 4).unwrap());
    let mu0 = initial_cloud(&spec, 64, 1).unwrap();
    let run = run_zakai(
        &spec,
        &mu0,
        &obs,
        &FilterConfig::new(9).with_resample(ResamplePolicy::Never),
    )
    .unwrap();
    let fin = run.final_state();
    assert!(fin.weights().iter().all(|w| (w - 1.0 / 64.0).abs() < 1e-15));
    let k = small_events(&obs) as i32;
    let closed = 0.3f64.powi(k) * ((1.0 - 0.3) * 2.0 * 1.0f64).exp();
    assert!(
        (fin.total_mass() / closed - 1.0).abs() < 1e-12,
        "{} vs {closed}",
        fin.total_mass()
    );
}

#[test]
fn single_event_factor_is_lambda() {
    let spec = ModelSpec::builder(1, 1, 1)
        .sigma1(Arc::new(|_, _, o: &mut [f64]| o[0] = 0.0))
        .lambda(Intensity::new(|_, x: &[f64], u| {
            0.2 + 0.5 * u * (x[0].tanh().abs())
        }))
        .build()
        .unwrap();
    let mu = ParticleMeasure::uniform(1, vec![0.8]).unwrap();
    let ev = ObservedJump {
        time: 0.05,
        step: 0,
        mark: 0.6,
        region: Region::Small,
        size: vec![0.0],
    };
    let dt = 0.1;
    let mut rng = rng::stream(0, rng::MUTATION, 0);
    let out = zakai_step(
        &spec,
        &mu,
        0.0,
        dt,
        &[0.0],
        std::slice::from_ref(&ev),
        &mut rng,
    )
    .unwrap();
    let lam = spec.intensity(0.05, &[0.8], 0.6);
    let comp = (dt * spec.intensity_deficit(0.0, &[0.8])).exp();
    assert!((out.total_mass() - lam * comp).abs() < 1e-15);
    assert_eq!(out.point(0), &[0.8]);
}

#[test]
fn deterministic_signal_keeps_particles() {
    let spec = ModelSpec::builder(1, 1, 1)
        .sigma1(Arc::new(|_, _, o: &mut [f64]| o[0] = 0.0))
        .b2(Arc::new(|_, x: &[f64], o: &mut [f64]| o[0] = x[0].tanh()))
        .build()
        .unwrap();
    let grid = TimeGrid::new(1.0, 40).unwrap();
    let obs = extract_observation_events(&simulate_decoupled(&spec, grid, 2).unwrap());
    let mu0 = ParticleMeasure::uniform(1, vec![-1.0, 0.0, 0.5, 2.0]).unwrap();
    let run = run_zakai(
        &spec,
        &mu0,
        &obs,
        &FilterConfig::new(1).with_resample(ResamplePolicy::Never),
    )
    .unwrap();
    assert_eq!(run.final_state().points(), mu0.points());
    assert!(run.final_state().weights() != mu0.weights());
}

#[test]
fn likelihood_closed_form_for_x_free_model() {
    let spec = x_free(0.4, 0.0);
    let grid = TimeGrid::new(1.0, 100).unwrap();
    let path = simulate_system(&spec, grid, 12).unwrap();
    let obs = extract_observation_events(&path);
    let lp = likelihood_process(&spec, &path.x, &obs).unwrap();
    assert_eq!(lp.value(0), 1.0);
    let k = small_events(&obs) as i32;
    let closed = 0.4f64.powi(k) * (0.6 * 2.0f64).exp();
    assert!((lp.value(100) / closed - 1.0).abs() < 1e-12);
    assert!((0..=100).all(|i| lp.value(i) > 0.0));
}

#[test]
fn likelihood_matches_girsanov_formula_without_events() {
    let beta = 0.7;
    let spec = x_free(0.99, beta);
    let grid = TimeGrid::new(1.0, 20).unwrap();
    let cont: Vec<f64> = (0..20).map(|k| 0.05 * ((k as f64) * 0.7).sin()).collect();
    let obs = ObservationRecord::new(grid, 1, vec![0.0], cont.clone(), Vec::new()).unwrap();
    let x = vec![0.3; 21];
    let lp = likelihood_process(&spec, &x, &obs).unwrap();
    // f2 has zero mean, so W~_T is the sum of the continuous increments
    let w: f64 = cont.iter().sum();
    let expected = (beta * w - 0.5 * beta * beta).exp() * (0.01 * 2.0f64).exp();
    assert!((lp.value(20) / expected - 1.0).abs() < 1e-12);
}

#[test]
fn oracle_is_exact_when_lambda_is_x_free() {
    let spec = x_free(0.25, 0.0);
    let grid = TimeGrid::new(1.0, 50).unwrap();
    let obs = extract_observation_events(&simulate_system(&spec, grid, 3).unwrap());
    let est = ks_oracle(&spec, &obs, &TestFunction::one(1), 50, 200, 5).unwrap();
    let k = small_events(&obs) as i32;
    let closed = 0.25f64.powi(k) * (0.75 * 2.0f64).exp();
    assert!((est.unnormalized.mean / closed - 1.0).abs() < 1e-12);
    assert!(est.unnormalized.std_error < 1e-12 * closed);
    assert!((est.normalized - 1.0).abs() < 1e-12);
}

#[test]
fn oracle_variance_halves_with_doubled_samples() {
    let spec = presets::tanh_drift().build().unwrap();
    let grid = TimeGrid::new(1.0, 50).unwrap();
    let obs = extract_observation_events(&simulate_system(&spec, grid, 8).unwrap());
    let f = TestFunction::gaussian(vec![0.0], 1.0);
    let v1 = ks_oracle(&spec, &obs, &f, 50, 4000, 1)
        .unwrap()
        .unnormalized
        .std_error
        .powi(2);
    let v2 = ks_oracle(&spec, &obs, &f, 50, 8000, 2)
        .unwrap()
        .unnormalized
        .std_error
        .powi(2);
    let ratio = v1 / v2;
    assert!((1.5..2.7).contains(&ratio), "variance ratio {ratio}");
}

#[test]
fn oracle_agrees_with_particle_filter() {
    let spec = presets::linear_gaussian_jump().build().unwrap();
    let grid = TimeGrid::new(1.0, 100).unwrap();
    let obs = extract_observation_events(&simulate_system(&spec, grid, 21).unwrap());
    let oracle = ks_oracle(&spec, &obs, &TestFunction::coordinate(1, 0), 100, 8000, 77).unwrap();
    let means: Vec<f64> = (0..16)
        .map(|r| {
            let mu0 = initial_cloud(&spec, 500, 1000 + r).unwrap();
            let run = run_zakai(&spec, &mu0, &obs, &FilterConfig::new(2000 + r)).unwrap();
            run.final_state().normalize().unwrap().integrate(|x| x[0])
        })
        .collect();
    let filt = McEstimate::from_samples(&means);
    let band = 4.0 * filt.std_error.hypot(oracle.normalized_se);
    assert!(
        (filt.mean - oracle.normalized).abs() <= band,
        "{filt:?} vs {oracle:?}"
    );
}

#[test]
fn zero_information_filter_follows_the_prior() {
    let spec = presets::constants().build().unwrap();
    let grid = TimeGrid::new(1.0, 100).unwrap();
    let obs = extract_observation_events(&simulate_system(&spec, grid, 6).unwrap());
    let mu0 = initial_cloud(&spec, 4000, 3).unwrap();
    let run = run_zakai(&spec, &mu0, &obs, &FilterConfig::new(4)).unwrap();
    let post = run.final_state().normalize().unwrap();
    let prior: Vec<f64> = (0..4000)
        .flat_map(|s| {
            simulate_signal(&spec, grid, 10_000 + s)
                .unwrap()
                .split_off(100)
        })
        .collect();
    let prior = ParticleMeasure::uniform(1, prior).unwrap();
    let d = crate::measures::distance_bl(&post, &prior, &crate::measures::ProbeSet::default_for(1));
    assert!(d < 0.06, "distance {d}");
    let se = (1.0f64 / 4000.0).sqrt() * 2f64.sqrt();
    assert!((post.mean()[0] - prior.mean()[0]).abs() < 4.0 * se);
}

#[test]
fn mass_is_a_martingale_under_the_reference_measure() {
    let spec = presets::tanh_drift().build().unwrap();
    let grid = TimeGrid::new(1.0, 50).unwrap();
    let masses: Vec<f64> = (0..400u64)
        .map(|r| {
            let obs = extract_observation_events(&simulate_decoupled(&spec, grid, r).unwrap());
            let mu0 = initial_cloud(&spec, 50, r).unwrap();
            run_zakai(&spec, &mu0, &obs, &FilterConfig::new(r))
                .unwrap()
                .final_state()
                .total_mass()
        })
        .collect();
    let est = McEstimate::from_samples(&masses);
    assert!((est.mean - 1.0).abs() < 4.0 * est.std_error, "{est:?}");
}

#[test]
fn zero_intensity_at_an_event_is_reported() {
    let spec = ModelSpec::builder(1, 1, 1)
        .lambda(Intensity::mark_free(
            |_, x: &[f64], _| if x[0] > 100.0 { 0.0 } else { 0.5 },
        ))
        .build()
        .unwrap();
    let mu = ParticleMeasure::uniform(1, vec![200.0]).unwrap();
    let ev = ObservedJump {
        time: 0.05,
        step: 0,
        mark: 0.5,
        region: Region::Small,
        size: vec![0.0],
    };
    let mut rng = rng::stream(0, rng::MUTATION, 0);
    let err = zakai_step(&spec, &mu, 0.0, 0.1, &[0.0], &[ev], &mut rng).unwrap_err();
    assert!(matches!(err, Error::IntensityOutOfRange { .. }));
}

#[test]
fn mass_underflow_is_degenerate() {
    let spec = x_free(0.5, 1e3);
    let grid = TimeGrid::new(1.0, 2).unwrap();
    let obs = ObservationRecord::new(grid, 1, vec![0.0], vec![-1e3, 0.0], Vec::new()).unwrap();
    let mu0 = ParticleMeasure::uniform(1, vec![0.0]).unwrap();
    let err = run_zakai(&spec, &mu0, &obs, &FilterConfig::new(0)).unwrap_err();
    assert!(matches!(err, Error::Degenerate { node: 1, .. }), "{err}");
}

#[test]
fn runs_are_reproducible_and_store_requested_nodes() {
    let spec = presets::tanh_drift().build().unwrap();
    let grid = TimeGrid::new(1.0, 30).unwrap();
    let obs = extract_observation_events(&simulate_system(&spec, grid, 1).unwrap());
    let mu0 = initial_cloud(&spec, 100, 1).unwrap();
    let cfg = FilterConfig::new(5).with_store(&[10, 20]);
    let a = run_zakai(&spec, &mu0, &obs, &cfg).unwrap();
    let b = run_zakai(&spec, &mu0, &obs, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.stored_nodes(), vec![0, 10, 20, 30]);
    assert_eq!(a.diagnostics.len(), 31);
    assert!(a.state_at(0).unwrap().is_normalized());
    let dir = tempfile::tempdir().unwrap();
    a.write(dir.path(), "run", "h").unwrap();
    let (c, hash) = FilterRun::read(dir.path(), "run").unwrap();
    assert_eq!(hash, "h");
    assert_eq!(c, a);
}

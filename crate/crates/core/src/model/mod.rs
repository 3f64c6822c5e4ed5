//! Signal-observation model, assumption checks and the signal generator.
//!
//! ```text
//! dX = b1(t, X) dt + sigma1(t, X) dB
//! dY = b2(t, X) dt + sigma2(t) dW + ∫_{U0} f2(t, u) Ñ_λ(dt, du) + ∫_{U \ U0} g2(t, u) N_λ(dt, du)
//! ```
//!
//! `N_λ` has compensator `lambda(t, X_{t-}, u) dt nu(du)` with `lambda` in `(0, 1)`.
//! Both `nu(U0)` and `nu(U \ U0)` are finite here, so jumps are simulated by exact
//! thinning.

pub mod coef;
pub mod generator;
pub mod marks;
pub mod presets;
pub mod validate;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

pub use coef::ModelConfig;
pub use generator::{apply_generator, TestFunction, TestFunctionKind};
pub use marks::{MarkLaw, MarkRegion};
pub use validate::{validate_model, AssumptionCheck, ProbePlan, ValidationReport};

use crate::{Error, Result};

/// `(t, x, out)`; writes a vector of the field's output dimension.
pub type VectorField = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `(t, x, out)`; writes a row-major matrix.
pub type MatrixField = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `(t, out)`; writes a row-major `m x m` matrix.
pub type TimeMatrix = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;
/// `(t, u, out)`; writes an `m`-vector.
pub type MarkField = Arc<dyn Fn(f64, f64, &mut [f64]) + Send + Sync>;
pub type EnvelopeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
/// `(t, x, u)`; returns the intensity.
pub type IntensityFn = Arc<dyn Fn(f64, &[f64], f64) -> f64 + Send + Sync>;

/// Thinning intensity `lambda(t, x, u)`.
#[derive(Clone)]
pub struct Intensity {
    f: IntensityFn,
    mark_free: bool,
}

impl Intensity {
    pub fn new(f: impl Fn(f64, &[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        Intensity {
            f: Arc::new(f),
            mark_free: false,
        }
    }

    /// An intensity known not to depend on the mark; mark integrals collapse to
    /// `nu(U0) * lambda`.
    pub fn mark_free(f: impl Fn(f64, &[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        Intensity {
            f: Arc::new(f),
            mark_free: true,
        }
    }

    #[inline]
    pub fn eval(&self, t: f64, x: &[f64], u: f64) -> f64 {
        (self.f)(t, x, u)
    }

    pub fn is_mark_free(&self) -> bool {
        self.mark_free
    }
}

/// Diagonal Gaussian law of `X_0`; a zero standard deviation gives a point mass.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialLaw {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InitialLaw {
    pub fn gaussian(mean: Vec<f64>, std: Vec<f64>) -> Self {
        InitialLaw { mean, std }
    }

    pub fn point(x: Vec<f64>) -> Self {
        let std = vec![0.0; x.len()];
        InitialLaw { mean: x, std }
    }

    pub fn is_deterministic(&self) -> bool {
        self.std.iter().all(|s| *s == 0.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for ((o, m), s) in out.iter_mut().zip(&self.mean).zip(&self.std) {
            let z: f64 = rng.sample(StandardNormal);
            *o = m + s * z;
        }
    }

    /// Same law with its mean moved by `shift` standard deviations in every coordinate.
    pub fn shifted_by_std(&self, shift: f64) -> Self {
        let mean = self
            .mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| m + shift * s)
            .collect();
        InitialLaw {
            mean,
            std: self.std.clone(),
        }
    }
}

/// Constants and envelope of the standing assumptions.
#[derive(Clone)]
pub struct AssumptionBounds {
    /// Growth constant for `b1`, `sigma1`.
    pub l1: f64,
    /// Bound on `b2`, `sigma2`, `sigma2^{-1}`.
    pub l2: f64,
    /// Lower bound `l` on the envelope.
    pub floor: f64,
    /// Envelope `L(u)` with `l <= L(u) < lambda(t, x, u)` on `U0`.
    pub envelope: EnvelopeFn,
}

/// The full model. Immutable after construction and cheap to clone.
#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    dim_signal: usize,
    dim_obs: usize,
    dim_bm: usize,
    horizon: f64,
    b1: VectorField,
    sigma1: MatrixField,
    b2: VectorField,
    sigma2: TimeMatrix,
    f2: MarkField,
    g2: MarkField,
    lambda: Intensity,
    small_marks: MarkRegion,
    large_marks: Option<MarkRegion>,
    bounds: AssumptionBounds,
    initial: InitialLaw,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dims", &(self.dim_signal, self.dim_obs, self.dim_bm))
            .field("horizon", &self.horizon)
            .field("small_marks", &self.small_marks)
            .field("large_marks", &self.large_marks)
            .field("initial", &self.initial)
            .finish_non_exhaustive()
    }
}

pub struct ModelBuilder {
    spec: ModelSpec,
}

impl ModelBuilder {
    pub fn name(mut self, name: &str) -> Self {
        self.spec.name = name.to_string();
        self
    }
    pub fn horizon(mut self, t: f64) -> Self {
        self.spec.horizon = t;
        self
    }
    pub fn b1(mut self, f: VectorField) -> Self {
        self.spec.b1 = f;
        self
    }
    pub fn sigma1(mut self, f: MatrixField) -> Self {
        self.spec.sigma1 = f;
        self
    }
    pub fn b2(mut self, f: VectorField) -> Self {
        self.spec.b2 = f;
        self
    }
    pub fn sigma2(mut self, f: TimeMatrix) -> Self {
        self.spec.sigma2 = f;
        self
    }
    pub fn f2(mut self, f: MarkField) -> Self {
        self.spec.f2 = f;
        self
    }
    pub fn g2(mut self, f: MarkField) -> Self {
        self.spec.g2 = f;
        self
    }
    pub fn lambda(mut self, l: Intensity) -> Self {
        self.spec.lambda = l;
        self
    }
    pub fn small_marks(mut self, r: MarkRegion) -> Self {
        self.spec.small_marks = r;
        self
    }
    pub fn large_marks(mut self, r: MarkRegion) -> Self {
        self.spec.large_marks = Some(r);
        self
    }
    pub fn bounds(mut self, l1: f64, l2: f64, floor: f64, envelope: EnvelopeFn) -> Self {
        self.spec.bounds = AssumptionBounds {
            l1,
            l2,
            floor,
            envelope,
        };
        self
    }
    pub fn initial(mut self, law: InitialLaw) -> Self {
        self.spec.initial = law;
        self
    }

    pub fn build(self) -> Result<ModelSpec> {
        let s = self.spec;
        if s.dim_signal == 0 || s.dim_obs == 0 || s.dim_bm == 0 {
            return Err(Error::InvalidModel("dimensions must be positive".into()));
        }
        if !(s.horizon.is_finite() && s.horizon > 0.0) {
            return Err(Error::InvalidModel(format!(
                "horizon {} must be > 0",
                s.horizon
            )));
        }
        if s.initial.mean.len() != s.dim_signal || s.initial.std.len() != s.dim_signal {
            return Err(Error::Dimension(
                "initial law does not match signal dimension".into(),
            ));
        }
        Ok(s)
    }
}

impl ModelSpec {
    /// Starts from a zero-drift model: `b1 = 0`, `sigma1 = [I | 0]`, `b2 = 0`,
    /// `sigma2 = I`, no jumps coefficients, `lambda = 0.5`, `U0 = [0, 1]` with unit mass,
    /// `X_0 = 0`.
    pub fn builder(dim_signal: usize, dim_obs: usize, dim_bm: usize) -> ModelBuilder {
        let (n, m, d) = (dim_signal, dim_obs, dim_bm);
        let spec = ModelSpec {
            name: "custom".into(),
            dim_signal: n,
            dim_obs: m,
            dim_bm: d,
            horizon: 1.0,
            b1: Arc::new(|_, _, out: &mut [f64]| out.fill(0.0)),
            sigma1: Arc::new(move |_, _, out: &mut [f64]| {
                out.fill(0.0);
                for i in 0..n.min(d) {
                    out[i * d + i] = 1.0;
                }
            }),
            b2: Arc::new(|_, _, out: &mut [f64]| out.fill(0.0)),
            sigma2: Arc::new(move |_, out: &mut [f64]| {
                out.fill(0.0);
                for i in 0..m {
                    out[i * m + i] = 1.0;
                }
            }),
            f2: Arc::new(|_, _, out: &mut [f64]| out.fill(0.0)),
            g2: Arc::new(|_, _, out: &mut [f64]| out.fill(0.0)),
            lambda: Intensity::mark_free(|_, _, _| 0.5),
            small_marks: MarkRegion::new(MarkLaw::Uniform { lo: 0.0, hi: 1.0 }, 1.0, 8)
                .expect("default marks"),
            large_marks: None,
            bounds: AssumptionBounds {
                l1: 1.0,
                l2: 1.0,
                floor: 0.1,
                envelope: Arc::new(|_| 0.1),
            },
            initial: InitialLaw::point(vec![0.0; n]),
        };
        ModelBuilder { spec }
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn dim_signal(&self) -> usize {
        self.dim_signal
    }
    pub fn dim_obs(&self) -> usize {
        self.dim_obs
    }
    pub fn dim_bm(&self) -> usize {
        self.dim_bm
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn small_marks(&self) -> &MarkRegion {
        &self.small_marks
    }
    pub fn large_marks(&self) -> Option<&MarkRegion> {
        self.large_marks.as_ref()
    }
    pub fn bounds(&self) -> &AssumptionBounds {
        &self.bounds
    }
    pub fn initial(&self) -> &InitialLaw {
        &self.initial
    }
    pub fn lambda(&self) -> &Intensity {
        &self.lambda
    }

    /// Copy of the model with a different initial law.
    pub fn with_initial(&self, initial: InitialLaw) -> Result<ModelSpec> {
        if initial.mean.len() != self.dim_signal {
            return Err(Error::Dimension(
                "initial law does not match signal dimension".into(),
            ));
        }
        let mut s = self.clone();
        s.initial = initial;
        Ok(s)
    }

    /// Copy of the model with a different horizon.
    pub fn with_horizon(&self, horizon: f64) -> ModelSpec {
        let mut s = self.clone();
        s.horizon = horizon;
        s
    }

    #[inline]
    pub fn b1(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.b1)(t, x, out)
    }
    #[inline]
    pub fn sigma1(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.sigma1)(t, x, out)
    }
    #[inline]
    pub fn b2(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.b2)(t, x, out)
    }
    #[inline]
    pub fn sigma2(&self, t: f64, out: &mut [f64]) {
        (self.sigma2)(t, out)
    }
    #[inline]
    pub fn f2(&self, t: f64, u: f64, out: &mut [f64]) {
        (self.f2)(t, u, out)
    }
    #[inline]
    pub fn g2(&self, t: f64, u: f64, out: &mut [f64]) {
        (self.g2)(t, u, out)
    }
    #[inline]
    pub fn intensity(&self, t: f64, x: &[f64], u: f64) -> f64 {
        self.lambda.eval(t, x, u)
    }
    #[inline]
    pub fn envelope(&self, u: f64) -> f64 {
        (self.bounds.envelope)(u)
    }

    /// Row-major `sigma2(t)^{-1}`.
    pub fn sigma2_inverse(&self, t: f64) -> Result<Vec<f64>> {
        let m = self.dim_obs;
        let mut s = vec![0.0; m * m];
        self.sigma2(t, &mut s);
        let mat = DMatrix::from_row_slice(m, m, &s);
        let inv = mat
            .try_inverse()
            .ok_or(Error::SingularObservationDiffusion { t })?;
        if inv.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularObservationDiffusion { t });
        }
        Ok(inv.transpose().as_slice().to_vec())
    }

    /// Observation signal-to-noise drift `h = sigma2^{-1} b2(t, x)`, given the inverse.
    #[inline]
    pub fn obs_drift(
        &self,
        t: f64,
        x: &[f64],
        sigma2_inv: &[f64],
        scratch: &mut [f64],
        out: &mut [f64],
    ) {
        self.b2(t, x, scratch);
        mat_vec(sigma2_inv, scratch, out);
    }

    /// `∫_{U0} (1 - lambda(t, x, u)) nu(du)`.
    #[inline]
    pub fn intensity_deficit(&self, t: f64, x: &[f64]) -> f64 {
        let region = &self.small_marks;
        if self.lambda.mark_free {
            let u0 = region.nodes().first().map_or(0.0, |n| n.0);
            region.mass() * (1.0 - self.intensity(t, x, u0))
        } else {
            region.integrate(|u| 1.0 - self.intensity(t, x, u))
        }
    }

    /// `∫_{U0} f2(t, u) nu(du)`, the small-jump compensator under the reference measure.
    pub fn small_jump_mean(&self, t: f64, out: &mut [f64]) {
        let mut tmp = vec![0.0; self.dim_obs];
        out.fill(0.0);
        for &(u, w) in self.small_marks.nodes() {
            self.f2(t, u, &mut tmp);
            for (o, v) in out.iter_mut().zip(&tmp) {
                *o += w * v;
            }
        }
    }

    /// `∫_{U0} f2(t, u) lambda(t, x, u) nu(du)`, the small-jump compensator under the
    /// physical measure.
    pub fn small_jump_compensator(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; self.dim_obs];
        out.fill(0.0);
        for &(u, w) in self.small_marks.nodes() {
            self.f2(t, u, &mut tmp);
            let l = self.intensity(t, x, u);
            for (o, v) in out.iter_mut().zip(&tmp) {
                *o += w * l * v;
            }
        }
    }

    /// One Euler-Maruyama step of the signal: `out = x + b1 dt + sigma1 dB`.
    #[inline]
    pub fn signal_step(
        &self,
        t: f64,
        dt: f64,
        x: &[f64],
        db: &[f64],
        ws: &mut SignalScratch,
        out: &mut [f64],
    ) {
        let d = self.dim_bm;
        self.b1(t, x, &mut ws.drift);
        self.sigma1(t, x, &mut ws.diffusion);
        for (i, o) in out.iter_mut().enumerate() {
            let row = &ws.diffusion[i * d..(i + 1) * d];
            *o = x[i] + ws.drift[i] * dt + row.iter().zip(db).map(|(s, b)| s * b).sum::<f64>();
        }
    }

    pub fn signal_scratch(&self) -> SignalScratch {
        SignalScratch {
            drift: vec![0.0; self.dim_signal],
            diffusion: vec![0.0; self.dim_signal * self.dim_bm],
        }
    }
}

/// Reusable buffers for [`ModelSpec::signal_step`].
#[derive(Debug, Clone)]
pub struct SignalScratch {
    drift: Vec<f64>,
    diffusion: Vec<f64>,
}

/// `out = a * v` for row-major square `a`.
#[inline]
pub(crate) fn mat_vec(a: &[f64], v: &[f64], out: &mut [f64]) {
    let k = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = a[i * k..(i + 1) * k]
            .iter()
            .zip(v)
            .map(|(x, y)| x * y)
            .sum();
    }
}

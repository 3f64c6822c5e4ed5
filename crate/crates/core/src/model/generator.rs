//! Test functions with analytic derivatives and the signal generator
//! `(L_t F)(x) = ∂_i F b1^i + 1/2 ∂_ij F (sigma1 sigma1^T)^{ij}`.

use std::fmt;
use std::sync::Arc;

use super::ModelSpec;

type EvalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type DerivFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFunctionKind {
    /// Smooth with compact support.
    CompactSupportSmooth,
    /// The constant function 1.
    ConstantOne,
    /// Smooth and bounded with its derivatives, support not compact (Gaussians,
    /// polynomial probes used in unit tests).
    Smooth,
}

/// A test function with its gradient and row-major Hessian.
#[derive(Clone)]
pub struct TestFunction {
    kind: TestFunctionKind,
    dim: usize,
    label: String,
    eval: EvalFn,
    grad: DerivFn,
    hess: DerivFn,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("kind", &self.kind)
            .field("label", &self.label)
            .finish()
    }
}

impl TestFunction {
    pub fn new(
        kind: TestFunctionKind,
        dim: usize,
        label: impl Into<String>,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        hess: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        TestFunction {
            kind,
            dim,
            label: label.into(),
            eval: Arc::new(eval),
            grad: Arc::new(grad),
            hess: Arc::new(hess),
        }
    }

    pub fn one(dim: usize) -> Self {
        TestFunction::new(
            TestFunctionKind::ConstantOne,
            dim,
            "one",
            |_| 1.0,
            |_, g| g.fill(0.0),
            |_, h| h.fill(0.0),
        )
    }

    /// `exp(1 - 1/(1 - |x - c|^2 / r^2))` inside the ball of radius `r`, zero outside;
    /// peak value 1 at the center.
    pub fn bump(center: Vec<f64>, radius: f64) -> Self {
        let dim = center.len();
        let r2 = radius * radius;
        let label = format!("bump(c={center:?}, r={radius})");
        let c1 = center.clone();
        let c2 = center.clone();
        let c3 = center;
        // s = |x - c|^2 / r^2, g(s) = exp(1 - 1/(1 - s))
        let s_of = |x: &[f64], c: &[f64], r2: f64| {
            x.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / r2
        };
        TestFunction::new(
            TestFunctionKind::CompactSupportSmooth,
            dim,
            label,
            move |x| {
                let s = s_of(x, &c1, r2);
                if s < 1.0 {
                    (1.0 - 1.0 / (1.0 - s)).exp()
                } else {
                    0.0
                }
            },
            move |x, g| {
                let s = s_of(x, &c2, r2);
                if s >= 1.0 {
                    g.fill(0.0);
                    return;
                }
                let q = 1.0 - s;
                let gs = (1.0 - 1.0 / q).exp();
                let dg = -gs / (q * q);
                for (i, gi) in g.iter_mut().enumerate() {
                    *gi = dg * 2.0 * (x[i] - c2[i]) / r2;
                }
            },
            move |x, h| {
                let s = s_of(x, &c3, r2);
                if s >= 1.0 {
                    h.fill(0.0);
                    return;
                }
                let q = 1.0 - s;
                let gs = (1.0 - 1.0 / q).exp();
                let dg = -gs / (q * q);
                let d2g = gs * (1.0 / q.powi(4) - 2.0 / q.powi(3));
                let n = x.len();
                for i in 0..n {
                    for j in 0..n {
                        let di = x[i] - c3[i];
                        let dj = x[j] - c3[j];
                        let delta = if i == j { 1.0 } else { 0.0 };
                        h[i * n + j] = d2g * 4.0 * di * dj / (r2 * r2) + dg * 2.0 * delta / r2;
                    }
                }
            },
        )
    }

    /// The coordinate projection `x_i`.
    pub fn coordinate(dim: usize, i: usize) -> Self {
        TestFunction::new(
            TestFunctionKind::Smooth,
            dim,
            format!("x_{}", i + 1),
            move |x| x[i],
            move |_, g| {
                g.fill(0.0);
                g[i] = 1.0;
            },
            |_, h| h.fill(0.0),
        )
    }

    /// `sin(freq * x_i)`.
    pub fn sine(dim: usize, i: usize, freq: f64) -> Self {
        TestFunction::new(
            TestFunctionKind::Smooth,
            dim,
            format!("sin({freq} x_{})", i + 1),
            move |x| (freq * x[i]).sin(),
            move |x, g| {
                g.fill(0.0);
                g[i] = freq * (freq * x[i]).cos();
            },
            move |x, h| {
                h.fill(0.0);
                h[i * dim + i] = -freq * freq * (freq * x[i]).sin();
            },
        )
    }

    /// `exp(-|x - c|^2 / (2 w^2))`.
    pub fn gaussian(center: Vec<f64>, width: f64) -> Self {
        let dim = center.len();
        let w2 = width * width;
        let label = format!("gaussian(c={center:?}, w={width})");
        let (c1, c2, c3) = (center.clone(), center.clone(), center);
        let val = |x: &[f64], c: &[f64], w2: f64| {
            (-x.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (2.0 * w2)).exp()
        };
        TestFunction::new(
            TestFunctionKind::Smooth,
            dim,
            label,
            move |x| val(x, &c1, w2),
            move |x, g| {
                let v = val(x, &c2, w2);
                for (i, gi) in g.iter_mut().enumerate() {
                    *gi = -v * (x[i] - c2[i]) / w2;
                }
            },
            move |x, h| {
                let v = val(x, &c3, w2);
                let n = x.len();
                for i in 0..n {
                    for j in 0..n {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        h[i * n + j] =
                            v * ((x[i] - c3[i]) * (x[j] - c3[j]) / (w2 * w2) - delta / w2);
                    }
                }
            },
        )
    }

    /// `a F + b G`.
    pub fn linear_combination(a: f64, f: &TestFunction, b: f64, g: &TestFunction) -> Self {
        assert_eq!(f.dim, g.dim, "dimension mismatch");
        let n = f.dim;
        let (f1, g1, f2, g2, f3, g3) = (
            f.clone(),
            g.clone(),
            f.clone(),
            g.clone(),
            f.clone(),
            g.clone(),
        );
        let kind = match (f.kind, g.kind) {
            (TestFunctionKind::CompactSupportSmooth, TestFunctionKind::CompactSupportSmooth) => {
                TestFunctionKind::CompactSupportSmooth
            }
            _ => TestFunctionKind::Smooth,
        };
        TestFunction::new(
            kind,
            n,
            format!("{a}*{} + {b}*{}", f.label, g.label),
            move |x| a * f1.eval(x) + b * g1.eval(x),
            move |x, out| {
                let mut tmp = vec![0.0; n];
                f2.grad(x, out);
                g2.grad(x, &mut tmp);
                for (o, t) in out.iter_mut().zip(&tmp) {
                    *o = a * *o + b * t;
                }
            },
            move |x, out| {
                let mut tmp = vec![0.0; n * n];
                f3.hess(x, out);
                g3.hess(x, &mut tmp);
                for (o, t) in out.iter_mut().zip(&tmp) {
                    *o = a * *o + b * t;
                }
            },
        )
    }

    pub fn kind(&self) -> TestFunctionKind {
        self.kind
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn label(&self) -> &str {
        &self.label
    }
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }
    pub fn grad(&self, x: &[f64], out: &mut [f64]) {
        (self.grad)(x, out)
    }
    pub fn hess(&self, x: &[f64], out: &mut [f64]) {
        (self.hess)(x, out)
    }
}

/// `(L_t F)(x)`. Non-finite coefficients propagate into a non-finite result.
pub fn apply_generator(spec: &ModelSpec, f: &TestFunction, t: f64, x: &[f64]) -> f64 {
    let (n, d) = (spec.dim_signal(), spec.dim_bm());
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n * n];
    let mut b1 = vec![0.0; n];
    let mut s1 = vec![0.0; n * d];
    f.grad(x, &mut grad);
    f.hess(x, &mut hess);
    spec.b1(t, x, &mut b1);
    spec.sigma1(t, x, &mut s1);
    let drift: f64 = grad.iter().zip(&b1).map(|(g, b)| g * b).sum();
    let mut diffusion = 0.0;
    for i in 0..n {
        for j in 0..n {
            let a_ij: f64 = (0..d).map(|k| s1[i * d + k] * s1[j * d + k]).sum();
            diffusion += hess[i * n + j] * a_ij;
        }
    }
    drift + 0.5 * diffusion
}

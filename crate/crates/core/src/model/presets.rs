//! Named scenarios.
//!
//! All presets are scalar (`n = m = d = 1`), use marks uniform on `U0 = [0, 1]` with
//! mass 2 and a mean-zero small-jump size `f2(u) = u - 1/2`, so the small-jump
//! compensator drift `∫ f2 lambda nu(du)` vanishes whenever `lambda` does not depend on
//! the mark.

use super::coef::{
    BoundsConfig, InitialConfig, IntensityConfig, MarkConfig, MarkFieldConfig, MatrixFieldConfig,
    ModelConfig, VectorFieldConfig,
};
use super::marks::MarkLaw;
use crate::{Error, Result};

pub const SCENARIOS: &[&str] = &["linear_gaussian_jump", "tanh_drift", "constants"];

fn unit_marks(mass: f64) -> MarkConfig {
    MarkConfig {
        law: MarkLaw::Uniform { lo: 0.0, hi: 1.0 },
        mass,
        quadrature_nodes: 8,
    }
}

fn centered_jump() -> MarkFieldConfig {
    MarkFieldConfig::Affine {
        slope: vec![1.0],
        offset: vec![-0.5],
    }
}

/// `dX = -X dt + dB`, `dY = X dt + dW + jumps`, `lambda = 0.5`. Jumps carry no
/// information, so the filter is the Kalman-Bucy filter.
pub fn linear_gaussian_jump() -> ModelConfig {
    ModelConfig {
        name: "linear_gaussian_jump".into(),
        dim_signal: 1,
        dim_obs: 1,
        dim_bm: 1,
        horizon: 1.0,
        b1: VectorFieldConfig::Affine {
            matrix: vec![vec![-1.0]],
            offset: vec![0.0],
        },
        sigma1: MatrixFieldConfig::Constant {
            value: vec![vec![1.0]],
        },
        b2: VectorFieldConfig::Affine {
            matrix: vec![vec![1.0]],
            offset: vec![0.0],
        },
        sigma2: vec![vec![1.0]],
        f2: centered_jump(),
        g2: MarkFieldConfig::Affine {
            slope: vec![1.0],
            offset: vec![0.0],
        },
        lambda: IntensityConfig::Constant { value: 0.5 },
        small_marks: unit_marks(2.0),
        large_marks: Some(MarkConfig {
            law: MarkLaw::Uniform { lo: 1.0, hi: 2.0 },
            mass: 0.5,
            quadrature_nodes: 8,
        }),
        // b2(x) = x is only bounded on a box; L2 = 6 covers the default probe box [-5, 5].
        bounds: BoundsConfig {
            l1: 2.0,
            l2: 6.0,
            envelope: 0.4,
            floor: 0.4,
        },
        initial: InitialConfig {
            mean: vec![0.0],
            std: vec![1.0],
        },
    }
}

/// Bounded nonlinear model: `b1 = -tanh x`, `b2 = tanh x`,
/// `lambda = 0.5 + 0.3 tanh x`.
pub fn tanh_drift() -> ModelConfig {
    ModelConfig {
        name: "tanh_drift".into(),
        dim_signal: 1,
        dim_obs: 1,
        dim_bm: 1,
        horizon: 1.0,
        b1: VectorFieldConfig::Tanh {
            scale: vec![-1.0],
            weights: vec![vec![1.0]],
            offset: vec![0.0],
            shift: vec![0.0],
        },
        sigma1: MatrixFieldConfig::Constant {
            value: vec![vec![1.0]],
        },
        b2: VectorFieldConfig::Tanh {
            scale: vec![1.0],
            weights: vec![vec![1.0]],
            offset: vec![0.0],
            shift: vec![0.0],
        },
        sigma2: vec![vec![1.0]],
        f2: centered_jump(),
        g2: MarkFieldConfig::Constant { value: vec![0.0] },
        lambda: IntensityConfig::Tanh {
            base: 0.5,
            amplitude: 0.3,
            weights: vec![1.0],
            mark_weight: 0.0,
            offset: 0.0,
        },
        small_marks: unit_marks(2.0),
        large_marks: None,
        bounds: BoundsConfig {
            l1: 2.0,
            l2: 1.0,
            envelope: 0.2,
            floor: 0.2,
        },
        initial: InitialConfig {
            mean: vec![0.0],
            std: vec![1.0],
        },
    }
}

/// Zero-information model: `b2 = 0.5`, `lambda = 0.3`, both free of `x`.
pub fn constants() -> ModelConfig {
    ModelConfig {
        name: "constants".into(),
        dim_signal: 1,
        dim_obs: 1,
        dim_bm: 1,
        horizon: 1.0,
        b1: VectorFieldConfig::Affine {
            matrix: vec![vec![-1.0]],
            offset: vec![0.0],
        },
        sigma1: MatrixFieldConfig::Constant {
            value: vec![vec![1.0]],
        },
        b2: VectorFieldConfig::Constant { value: vec![0.5] },
        sigma2: vec![vec![1.0]],
        f2: centered_jump(),
        g2: MarkFieldConfig::Constant { value: vec![0.0] },
        lambda: IntensityConfig::Constant { value: 0.3 },
        small_marks: unit_marks(2.0),
        large_marks: None,
        bounds: BoundsConfig {
            l1: 2.0,
            l2: 1.0,
            envelope: 0.25,
            floor: 0.25,
        },
        initial: InitialConfig {
            mean: vec![0.0],
            std: vec![1.0],
        },
    }
}

pub fn preset(name: &str) -> Result<ModelConfig> {
    match name {
        "linear_gaussian_jump" | "linear" => Ok(linear_gaussian_jump()),
        "tanh_drift" => Ok(tanh_drift()),
        "constants" => Ok(constants()),
        other => Err(Error::UnknownScenario(other.to_string())),
    }
}

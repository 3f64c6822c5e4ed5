//! Registry of built-in coefficient families and the serializable model
//! configuration built from them.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::marks::{MarkLaw, MarkRegion};
use super::{InitialLaw, Intensity, ModelSpec};
use crate::{Error, Result};

/// Vector field `(t, x) -> R^k` (used for `b1` and `b2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum VectorFieldConfig {
    Constant {
        value: Vec<f64>,
    },
    /// `matrix * x + offset`.
    Affine {
        matrix: Vec<Vec<f64>>,
        offset: Vec<f64>,
    },
    /// `scale_i * tanh(weights_i . x + offset_i) + shift_i`.
    Tanh {
        scale: Vec<f64>,
        weights: Vec<Vec<f64>>,
        offset: Vec<f64>,
        shift: Vec<f64>,
    },
}

/// Matrix field `(t, x) -> R^{rows x cols}` (used for `sigma1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MatrixFieldConfig {
    Constant {
        value: Vec<Vec<f64>>,
    },
    /// `base + sum_j x_j * slopes[j]`.
    Affine {
        base: Vec<Vec<f64>>,
        slopes: Vec<Vec<Vec<f64>>>,
    },
    /// `base + amplitude * tanh(weights . x + offset)` elementwise in `amplitude`.
    Tanh {
        base: Vec<Vec<f64>>,
        amplitude: Vec<Vec<f64>>,
        weights: Vec<f64>,
        offset: f64,
    },
}

/// Mark coefficient `(t, u) -> R^m` (used for `f2` and `g2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MarkFieldConfig {
    Constant {
        value: Vec<f64>,
    },
    /// `slope * u + offset`.
    Affine {
        slope: Vec<f64>,
        offset: Vec<f64>,
    },
    /// `scale * tanh(slope * u + offset) + shift`.
    Tanh {
        scale: Vec<f64>,
        slope: Vec<f64>,
        offset: Vec<f64>,
        shift: Vec<f64>,
    },
}

/// Thinning intensity `lambda(t, x, u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum IntensityConfig {
    Constant {
        value: f64,
    },
    /// `base + amplitude * tanh(weights . x + mark_weight * u + offset)`.
    Tanh {
        base: f64,
        amplitude: f64,
        weights: Vec<f64>,
        #[serde(default)]
        mark_weight: f64,
        #[serde(default)]
        offset: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkConfig {
    #[serde(flatten)]
    pub law: MarkLaw,
    pub mass: f64,
    #[serde(default = "default_quadrature")]
    pub quadrature_nodes: usize,
}

fn default_quadrature() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsConfig {
    pub l1: f64,
    pub l2: f64,
    /// Constant envelope `L(u)` on `U0`.
    pub envelope: f64,
    /// Lower bound `l` with `0 < l <= L(u)`.
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialConfig {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Complete, serializable description of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub dim_signal: usize,
    pub dim_obs: usize,
    pub dim_bm: usize,
    pub horizon: f64,
    pub b1: VectorFieldConfig,
    pub sigma1: MatrixFieldConfig,
    pub b2: VectorFieldConfig,
    /// Constant invertible `m x m` matrix.
    pub sigma2: Vec<Vec<f64>>,
    pub f2: MarkFieldConfig,
    pub g2: MarkFieldConfig,
    pub lambda: IntensityConfig,
    pub small_marks: MarkConfig,
    #[serde(default)]
    pub large_marks: Option<MarkConfig>,
    pub bounds: BoundsConfig,
    pub initial: InitialConfig,
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Config(format!(
            "{what}: expected length {want}, got {got}"
        )));
    }
    Ok(())
}

fn flatten(what: &str, rows: &[Vec<f64>], r: usize, c: usize) -> Result<Vec<f64>> {
    check_len(what, rows.len(), r)?;
    let mut out = Vec::with_capacity(r * c);
    for row in rows {
        check_len(what, row.len(), c)?;
        out.extend_from_slice(row);
    }
    Ok(out)
}

impl VectorFieldConfig {
    pub fn build(&self, dim_in: usize, dim_out: usize) -> Result<super::VectorField> {
        Ok(match self.clone() {
            VectorFieldConfig::Constant { value } => {
                check_len("constant vector", value.len(), dim_out)?;
                Arc::new(move |_t, _x, out: &mut [f64]| out.copy_from_slice(&value))
            }
            VectorFieldConfig::Affine { matrix, offset } => {
                let a = flatten("affine matrix", &matrix, dim_out, dim_in)?;
                check_len("affine offset", offset.len(), dim_out)?;
                Arc::new(move |_t, x: &[f64], out: &mut [f64]| {
                    for (i, o) in out.iter_mut().enumerate() {
                        let row = &a[i * dim_in..(i + 1) * dim_in];
                        *o = offset[i] + row.iter().zip(x).map(|(r, v)| r * v).sum::<f64>();
                    }
                })
            }
            VectorFieldConfig::Tanh {
                scale,
                weights,
                offset,
                shift,
            } => {
                let w = flatten("tanh weights", &weights, dim_out, dim_in)?;
                check_len("tanh scale", scale.len(), dim_out)?;
                check_len("tanh offset", offset.len(), dim_out)?;
                check_len("tanh shift", shift.len(), dim_out)?;
                Arc::new(move |_t, x: &[f64], out: &mut [f64]| {
                    for (i, o) in out.iter_mut().enumerate() {
                        let row = &w[i * dim_in..(i + 1) * dim_in];
                        let arg = offset[i] + row.iter().zip(x).map(|(r, v)| r * v).sum::<f64>();
                        *o = scale[i] * arg.tanh() + shift[i];
                    }
                })
            }
        })
    }
}

impl MatrixFieldConfig {
    pub fn build(&self, dim_in: usize, rows: usize, cols: usize) -> Result<super::MatrixField> {
        Ok(match self.clone() {
            MatrixFieldConfig::Constant { value } => {
                let v = flatten("constant matrix", &value, rows, cols)?;
                Arc::new(move |_t, _x, out: &mut [f64]| out.copy_from_slice(&v))
            }
            MatrixFieldConfig::Affine { base, slopes } => {
                let b = flatten("affine base", &base, rows, cols)?;
                check_len("affine slopes", slopes.len(), dim_in)?;
                let s = slopes
                    .iter()
                    .map(|m| flatten("affine slope", m, rows, cols))
                    .collect::<Result<Vec<_>>>()?;
                Arc::new(move |_t, x: &[f64], out: &mut [f64]| {
                    out.copy_from_slice(&b);
                    for (xj, sj) in x.iter().zip(&s) {
                        for (o, v) in out.iter_mut().zip(sj) {
                            *o += xj * v;
                        }
                    }
                })
            }
            MatrixFieldConfig::Tanh {
                base,
                amplitude,
                weights,
                offset,
            } => {
                let b = flatten("tanh base", &base, rows, cols)?;
                let a = flatten("tanh amplitude", &amplitude, rows, cols)?;
                check_len("tanh weights", weights.len(), dim_in)?;
                Arc::new(move |_t, x: &[f64], out: &mut [f64]| {
                    let th =
                        (offset + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).tanh();
                    for ((o, bv), av) in out.iter_mut().zip(&b).zip(&a) {
                        *o = bv + av * th;
                    }
                })
            }
        })
    }
}

impl MarkFieldConfig {
    pub fn build(&self, dim_out: usize) -> Result<super::MarkField> {
        Ok(match self.clone() {
            MarkFieldConfig::Constant { value } => {
                check_len("constant mark field", value.len(), dim_out)?;
                Arc::new(move |_t, _u, out: &mut [f64]| out.copy_from_slice(&value))
            }
            MarkFieldConfig::Affine { slope, offset } => {
                check_len("mark slope", slope.len(), dim_out)?;
                check_len("mark offset", offset.len(), dim_out)?;
                Arc::new(move |_t, u: f64, out: &mut [f64]| {
                    for (i, o) in out.iter_mut().enumerate() {
                        *o = slope[i] * u + offset[i];
                    }
                })
            }
            MarkFieldConfig::Tanh {
                scale,
                slope,
                offset,
                shift,
            } => {
                for (w, v) in [
                    ("scale", &scale),
                    ("slope", &slope),
                    ("offset", &offset),
                    ("shift", &shift),
                ] {
                    check_len(w, v.len(), dim_out)?;
                }
                Arc::new(move |_t, u: f64, out: &mut [f64]| {
                    for (i, o) in out.iter_mut().enumerate() {
                        *o = scale[i] * (slope[i] * u + offset[i]).tanh() + shift[i];
                    }
                })
            }
        })
    }
}

impl IntensityConfig {
    pub fn build(&self, dim_in: usize) -> Result<Intensity> {
        Ok(match self.clone() {
            IntensityConfig::Constant { value } => Intensity::mark_free(move |_t, _x, _u| value),
            IntensityConfig::Tanh {
                base,
                amplitude,
                weights,
                mark_weight,
                offset,
            } => {
                check_len("intensity weights", weights.len(), dim_in)?;
                let f = move |_t: f64, x: &[f64], u: f64| {
                    let arg = offset
                        + mark_weight * u
                        + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                    base + amplitude * arg.tanh()
                };
                if mark_weight == 0.0 {
                    Intensity::mark_free(f)
                } else {
                    Intensity::new(f)
                }
            }
        })
    }
}

impl MarkConfig {
    pub fn build(&self) -> Result<MarkRegion> {
        MarkRegion::new(self.law.clone(), self.mass, self.quadrature_nodes)
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelSpec> {
        let (n, m, d) = (self.dim_signal, self.dim_obs, self.dim_bm);
        let sigma2 = flatten("sigma2", &self.sigma2, m, m)?;
        check_len("initial mean", self.initial.mean.len(), n)?;
        check_len("initial std", self.initial.std.len(), n)?;
        let envelope = self.bounds.envelope;
        let mut builder = ModelSpec::builder(n, m, d)
            .name(&self.name)
            .horizon(self.horizon)
            .b1(self.b1.build(n, n)?)
            .sigma1(self.sigma1.build(n, n, d)?)
            .b2(self.b2.build(n, m)?)
            .sigma2(Arc::new(move |_t, out: &mut [f64]| {
                out.copy_from_slice(&sigma2)
            }))
            .f2(self.f2.build(m)?)
            .g2(self.g2.build(m)?)
            .lambda(self.lambda.build(n)?)
            .small_marks(self.small_marks.build()?)
            .bounds(
                self.bounds.l1,
                self.bounds.l2,
                self.bounds.floor,
                Arc::new(move |_u| envelope),
            )
            .initial(InitialLaw::gaussian(
                self.initial.mean.clone(),
                self.initial.std.clone(),
            ));
        if let Some(large) = &self.large_marks {
            builder = builder.large_marks(large.build()?);
        }
        builder.build()
    }
}

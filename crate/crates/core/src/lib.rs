//! Weighted-particle solvers for the Zakai and Kushner-Stratonovich equations of a
//! jump-diffusion signal-observation system.
//!
//! The signal `X` is an Itô diffusion; the observation `Y` carries a drift `b2(t, X)`,
//! an additive Brownian part and marked jumps whose acceptance intensity
//! `lambda(t, X, u)` depends on the hidden state. The crate is split into:
//!
//! - [`model`]: coefficient functions, assumption checks and the signal generator.
//! - [`pathsim`]: Euler/thinning simulation of the coupled system under the physical
//!   measure and of the decoupled system under the reference measure.
//! - [`measures`]: the particle-measure algebra shared by both filters.
//! - [`zakai`]: the unnormalized filter, the likelihood process and the conditional
//!   Monte Carlo oracle.
//! - [`ks`]: the normalized filter with innovations and the reweighting bridge back to
//!   the unnormalized filter.
//! - [`verify`]: Monte Carlo checks of moment duality, martingale normalization,
//!   pathwise agreement and equality in law.
//! - [`cli`]: the command-line front end.

pub mod cli;
pub mod error;
pub mod ks;
pub mod measures;
pub mod model;
pub mod pathsim;
pub mod rng;
pub mod stats;
pub mod verify;
pub mod zakai;

pub use error::{Error, Result};

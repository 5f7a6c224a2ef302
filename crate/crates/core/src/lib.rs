//! Bridge matching samplers for unnormalized densities.
//!
//! The crate trains a control `u_θ(x, t)` so that the controlled diffusion
//! `dX = σ(t) u(X, t) dt + σ(t) dB`, started from a prior, ends in a target
//! distribution known only up to its normalizing constant.

pub mod cli;
pub mod config;
pub mod couplings;
pub mod drift_model;
pub mod error;
pub mod evaluate;
pub mod io;
pub mod oracle;
pub mod reference;
pub mod schedules;
pub mod targets;
pub mod trainer;

pub use error::{BmsError, Result};

//! Unnormalized target densities and prior distributions.

mod gaussian;
mod gmm;
mod particles;
mod prior;

use ndarray::Array2;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{BmsError, Result};

pub use gaussian::{gaussian_target, GaussianTarget};
pub use gmm::{gmm_target, mode_assignment, GmmTarget};
pub use particles::{dw4_energy, interatomic_distances, lj_energy, Dw4Target, LjEnergy, LjTarget, DW4_DIM};
pub use prior::PriorDistribution;

/// An unnormalized density `ρ(x) = exp(log_rho(x))` over `R^dim`.
pub trait Target: Send + Sync {
    fn dim(&self) -> usize;

    /// Natural log of the unnormalized density.
    fn log_rho(&self, x: &[f64]) -> f64;

    /// `∇ log ρ(x)` written into `out`.
    fn score(&self, x: &[f64], out: &mut [f64]);

    /// Exact i.i.d. samples, when the target admits them.
    fn sample(&self, _n: usize, _rng: &mut dyn RngCore) -> Option<Array2<f64>> {
        None
    }

    /// Energy `E(x) = −log ρ(x)`.
    fn energy(&self, x: &[f64]) -> f64 {
        -self.log_rho(x)
    }

    fn score_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.score(x, &mut out);
        out
    }
}

/// Serializable description of a target, as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    Gaussian {
        mean: Vec<f64>,
        scale: f64,
        #[serde(default)]
        log_z: f64,
    },
    Gmm {
        modes: usize,
        dim: usize,
        box_halfwidth: f64,
        seed: u64,
        #[serde(default = "unit")]
        component_var: f64,
    },
    Dw4 {
        #[serde(default = "unit")]
        d0: f64,
    },
    Lj {
        particles: usize,
    },
}

fn unit() -> f64 {
    1.0
}

/// A constructed target. GMM targets keep their concrete type so mode
/// metrics can reach the component means.
pub enum BuiltTarget {
    Gaussian(GaussianTarget),
    Gmm(GmmTarget),
    Dw4(Dw4Target),
    Lj(LjTarget),
}

impl BuiltTarget {
    pub fn as_target(&self) -> &dyn Target {
        match self {
            BuiltTarget::Gaussian(t) => t,
            BuiltTarget::Gmm(t) => t,
            BuiltTarget::Dw4(t) => t,
            BuiltTarget::Lj(t) => t,
        }
    }

    pub fn as_gmm(&self) -> Option<&GmmTarget> {
        match self {
            BuiltTarget::Gmm(g) => Some(g),
            _ => None,
        }
    }

    pub fn is_particle_system(&self) -> bool {
        matches!(self, BuiltTarget::Dw4(_) | BuiltTarget::Lj(_))
    }
}

impl TargetSpec {
    pub fn build(&self) -> Result<BuiltTarget> {
        Ok(match self {
            TargetSpec::Gaussian { mean, scale, log_z } => {
                BuiltTarget::Gaussian(gaussian_target(mean.clone(), *scale)?.with_log_z(*log_z))
            }
            TargetSpec::Gmm { modes, dim, box_halfwidth, seed, component_var } => {
                BuiltTarget::Gmm(gmm_target(*modes, *dim, *box_halfwidth, *seed)?.with_component_var(*component_var)?)
            }
            TargetSpec::Dw4 { d0 } => BuiltTarget::Dw4(Dw4Target::new(*d0)),
            TargetSpec::Lj { particles } => {
                if !matches!(particles, 13 | 55) {
                    return Err(BmsError::Config(format!(
                        "Lennard-Jones benchmark supports 13 or 55 particles, got {particles}"
                    )));
                }
                BuiltTarget::Lj(LjTarget::new(*particles))
            }
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            TargetSpec::Gaussian { mean, .. } => mean.len(),
            TargetSpec::Gmm { dim, .. } => *dim,
            TargetSpec::Dw4 { .. } => DW4_DIM,
            TargetSpec::Lj { particles } => 3 * particles,
        }
    }
}

#[cfg(test)]
pub(crate) fn fd_score(t: &dyn Target, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += h;
            m[i] -= h;
            (t.log_rho(&p) - t.log_rho(&m)) / (2.0 * h)
        })
        .collect()
}

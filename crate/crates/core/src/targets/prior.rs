use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{BmsError, Result};
use crate::reference::gaussian_log_density;

/// Initial distribution of the controlled process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorDistribution {
    Gaussian { mean: Vec<f64>, scale: f64 },
    Dirac { point: Vec<f64> },
}

impl PriorDistribution {
    pub fn gaussian(mean: Vec<f64>, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(BmsError::InvalidParameter(format!("prior scale must be positive, got {scale}")));
        }
        Ok(PriorDistribution::Gaussian { mean, scale })
    }

    pub fn standard(dim: usize, scale: f64) -> Result<Self> {
        Self::gaussian(vec![0.0; dim], scale)
    }

    pub fn dirac(point: Vec<f64>) -> Self {
        PriorDistribution::Dirac { point }
    }

    pub fn dim(&self) -> usize {
        match self {
            PriorDistribution::Gaussian { mean, .. } => mean.len(),
            PriorDistribution::Dirac { point } => point.len(),
        }
    }

    pub fn mean(&self) -> &[f64] {
        match self {
            PriorDistribution::Gaussian { mean, .. } => mean,
            PriorDistribution::Dirac { point } => point,
        }
    }

    /// Per-coordinate variance; zero for a Dirac prior.
    pub fn variance(&self) -> f64 {
        match self {
            PriorDistribution::Gaussian { scale, .. } => scale * scale,
            PriorDistribution::Dirac { .. } => 0.0,
        }
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            PriorDistribution::Gaussian { mean, scale } => {
                for (o, m) in out.iter_mut().zip(mean) {
                    let eps: f64 = rng.sample(StandardNormal);
                    *o = m + scale * eps;
                }
            }
            PriorDistribution::Dirac { point } => out.copy_from_slice(point),
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        match self {
            PriorDistribution::Gaussian { mean, scale } => Ok(gaussian_log_density(x, mean, scale * scale)),
            PriorDistribution::Dirac { .. } => {
                Err(BmsError::UnsupportedCoupling("a Dirac prior has no density".into()))
            }
        }
    }

    pub fn score_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            PriorDistribution::Gaussian { mean, scale } => {
                let var = scale * scale;
                for ((o, a), m) in out.iter_mut().zip(x).zip(mean) {
                    *o = (m - a) / var;
                }
                Ok(())
            }
            PriorDistribution::Dirac { .. } => {
                Err(BmsError::UnsupportedCoupling("the score of a Dirac prior is undefined".into()))
            }
        }
    }

    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.len()];
        self.score_into(x, &mut out)?;
        Ok(out)
    }
}

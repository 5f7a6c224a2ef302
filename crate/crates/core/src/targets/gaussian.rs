use ndarray::Array2;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::Target;
use crate::error::{BmsError, Result};
use crate::reference::gaussian_log_density;

/// Isotropic Gaussian `N(mean, scale² I)` whose unnormalized density is
/// `Z · N(x; mean, scale² I)` with a known `log Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTarget {
    pub mean: Vec<f64>,
    pub scale: f64,
    pub log_z: f64,
}

pub fn gaussian_target(mean: Vec<f64>, scale: f64) -> Result<GaussianTarget> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(BmsError::InvalidParameter(format!("scale must be positive, got {scale}")));
    }
    Ok(GaussianTarget { mean, scale, log_z: 0.0 })
}

impl GaussianTarget {
    pub fn with_log_z(mut self, log_z: f64) -> Self {
        self.log_z = log_z;
        self
    }

    pub fn variance(&self) -> f64 {
        self.scale * self.scale
    }
}

impl Target for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_rho(&self, x: &[f64]) -> f64 {
        self.log_z + gaussian_log_density(x, &self.mean, self.variance())
    }

    fn score(&self, x: &[f64], out: &mut [f64]) {
        let var = self.variance();
        for ((o, a), m) in out.iter_mut().zip(x).zip(&self.mean) {
            *o = (m - a) / var;
        }
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Option<Array2<f64>> {
        let d = self.dim();
        Some(Array2::from_shape_fn((n, d), |(_, j)| {
            let eps: f64 = rng.sample(StandardNormal);
            self.mean[j] + self.scale * eps
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::fd_score;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn score_vanishes_at_mean() {
        let g = gaussian_target(vec![1.0, -2.0], 0.7).unwrap();
        assert_eq!(g.score_vec(&[1.0, -2.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn score_matches_fd() {
        let g = gaussian_target(vec![0.5, -1.0, 2.0], 1.3).unwrap().with_log_z(4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let fd = fd_score(&g, &x, 1e-5);
            for (a, b) in g.score_vec(&x).iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-4 * b.abs().max(1e-2));
            }
        }
    }

    #[test]
    fn sampler_moments() {
        let g = gaussian_target(vec![2.0, -1.0], 1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 100_000;
        let s = g.sample(n, &mut rng).unwrap();
        for j in 0..2 {
            let col = s.column(j);
            let mean = col.mean().unwrap();
            assert!((mean - g.mean[j]).abs() < 4.0 * 1.5 / (n as f64).sqrt());
            let var = col.iter().map(|v| (v - g.mean[j]).powi(2)).sum::<f64>() / n as f64;
            assert!((var - 2.25).abs() < 4.0 * 2.25 * (2.0 / n as f64).sqrt());
        }
        let cross = (0..n).map(|i| (s[[i, 0]] - 2.0) * (s[[i, 1]] + 1.0)).sum::<f64>() / n as f64;
        assert!(cross.abs() < 4.0 * 2.25 / (n as f64).sqrt());
    }
}

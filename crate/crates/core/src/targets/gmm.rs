use ndarray::Array2;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Target;
use crate::error::{BmsError, Result};

/// Equal-weight mixture of isotropic Gaussians with shared variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmTarget {
    pub means: Array2<f64>,
    pub component_var: f64,
}

/// Draws `modes` means uniformly from `[-box_halfwidth, box_halfwidth]^dim`.
pub fn gmm_target(modes: usize, dim: usize, box_halfwidth: f64, seed: u64) -> Result<GmmTarget> {
    if modes == 0 || dim == 0 {
        return Err(BmsError::InvalidParameter("GMM needs at least one mode and one dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = Array2::from_shape_fn((modes, dim), |_| rng.gen_range(-box_halfwidth..=box_halfwidth));
    Ok(GmmTarget { means, component_var: 1.0 })
}

impl GmmTarget {
    pub fn from_means(means: Array2<f64>) -> Result<Self> {
        if means.nrows() == 0 || means.ncols() == 0 {
            return Err(BmsError::InvalidParameter("GMM needs at least one mode and one dimension".into()));
        }
        Ok(GmmTarget { means, component_var: 1.0 })
    }

    pub fn with_component_var(mut self, var: f64) -> Result<Self> {
        if !(var > 0.0 && var.is_finite()) {
            return Err(BmsError::InvalidParameter(format!("component variance must be positive, got {var}")));
        }
        self.component_var = var;
        Ok(self)
    }

    pub fn modes(&self) -> usize {
        self.means.nrows()
    }

    pub fn weights(&self) -> Vec<f64> {
        vec![1.0 / self.modes() as f64; self.modes()]
    }

    /// Log of `π_k N(x; μ_k, var I)` for every component.
    pub fn component_log_densities(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len() as f64;
        let norm = -0.5 * d * (2.0 * std::f64::consts::PI * self.component_var).ln() - (self.modes() as f64).ln();
        self.means
            .rows()
            .into_iter()
            .map(|mu| {
                let sq: f64 = mu.iter().zip(x).map(|(m, a)| (a - m) * (a - m)).sum();
                norm - 0.5 * sq / self.component_var
            })
            .collect()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|a| (a - max).exp()).sum::<f64>().ln()
}

impl Target for GmmTarget {
    fn dim(&self) -> usize {
        self.means.ncols()
    }

    fn log_rho(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.component_log_densities(x))
    }

    fn score(&self, x: &[f64], out: &mut [f64]) {
        let logs = self.component_log_densities(x);
        let total = log_sum_exp(&logs);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (mu, l) in self.means.rows().into_iter().zip(&logs) {
            let r = (l - total).exp();
            for ((o, m), a) in out.iter_mut().zip(mu).zip(x) {
                *o += r * (m - a) / self.component_var;
            }
        }
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Option<Array2<f64>> {
        let d = self.dim();
        let std = self.component_var.sqrt();
        let mut out = Array2::zeros((n, d));
        for mut row in out.rows_mut() {
            let k = rng.gen_range(0..self.modes());
            for (j, v) in row.iter_mut().enumerate() {
                let eps: f64 = rng.sample(StandardNormal);
                *v = self.means[[k, j]] + std * eps;
            }
        }
        Some(out)
    }
}

/// Index of the component with the largest weighted density at `x`;
/// ties go to the lowest index.
pub fn mode_assignment(g: &GmmTarget, x: &[f64]) -> usize {
    let logs = g.component_log_densities(x);
    let mut best = 0;
    for (k, l) in logs.iter().enumerate().skip(1) {
        if *l > logs[best] {
            best = k;
        }
    }
    best
}

//! Closed forms for a Gaussian prior and Gaussian target under the scaled
//! Brownian reference.
//!
//! Everything is isotropic, so each quantity is a per-coordinate scalar
//! formula lifted to vectors. With `K = κ(T)`, `g = γ(t)`, prior
//! `N(μ0, s0²)` and target `N(μT, sT²)`, the independent-coupling marginal is
//! `N(m, V)` with `m = (1−g)μ0 + gμT` and `V = (1−g)²s0² + g²sT² + Kg(1−g)`.
//!
//! The Schrödinger bridge between the same marginals couples the endpoints
//! with cross-covariance `c = (√(K² + 4 s0² sT²) − K)/2`. Its terminal
//! potential has `∇log φ_T(y) = B − A y`, with `Λ22 = s0²/(s0² sT² − c²)`,
//! `A = Λ22 − 1/K` and `B = Λ22 μT − μ0/K`.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::couplings::{JointScoreFn, ScoreFn};
use crate::error::{BmsError, Result};
use crate::schedules::NoiseSchedule;
use crate::targets::{gaussian_target, GaussianTarget, PriorDistribution};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPair {
    pub mu0: Vec<f64>,
    /// Prior scale; zero means a Dirac prior at `mu0`.
    pub s0: f64,
    pub mu_end: Vec<f64>,
    pub s_end: f64,
    pub schedule: NoiseSchedule,
}

/// Terminal potential `∇log φ_T(y) = B − A y` of the Gaussian bridge.
#[derive(Debug, Clone, PartialEq)]
pub struct SbPotential {
    pub cross_cov: f64,
    pub a: f64,
    pub b: Vec<f64>,
}

/// Per-coordinate least-squares fit `y ≈ intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regression {
    pub intercept: f64,
    pub slope: f64,
    pub se_intercept: f64,
    pub se_slope: f64,
}

pub fn simple_regression(x: &[f64], y: &[f64]) -> Regression {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let s2 = rss / (n - 2.0);
    Regression {
        intercept,
        slope,
        se_intercept: (s2 * (1.0 / n + mx * mx / sxx)).sqrt(),
        se_slope: (s2 / sxx).sqrt(),
    }
}

impl GaussianPair {
    pub fn new(mu0: Vec<f64>, s0: f64, mu_end: Vec<f64>, s_end: f64, schedule: NoiseSchedule) -> Result<Self> {
        if !(s0 >= 0.0 && s0.is_finite() && s_end > 0.0 && s_end.is_finite()) {
            return Err(BmsError::InvalidParameter(format!("scales must be positive, got ({s0}, {s_end})")));
        }
        if mu0.len() != mu_end.len() {
            return Err(BmsError::SizeMismatch("prior and target means differ in dimension".into()));
        }
        Ok(GaussianPair { mu0, s0, mu_end, s_end, schedule })
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    pub fn prior(&self) -> PriorDistribution {
        if self.s0 == 0.0 {
            PriorDistribution::dirac(self.mu0.clone())
        } else {
            PriorDistribution::Gaussian { mean: self.mu0.clone(), scale: self.s0 }
        }
    }

    pub fn target(&self) -> GaussianTarget {
        gaussian_target(self.mu_end.clone(), self.s_end).expect("validated scale")
    }

    fn parts(&self, t: f64) -> Result<(f64, f64, f64, f64)> {
        let k = self.schedule.kappa_total();
        let g = self.schedule.gamma_at(t)?;
        let h = self.schedule.kappa_remaining_at(t)? / k;
        let v = h * h * self.s0 * self.s0 + g * g * self.s_end * self.s_end + k * g * h;
        Ok((k, g, h, v))
    }

    /// Mean and per-coordinate variance of the independent-coupling marginal `Π*_t`.
    pub fn marginal(&self, t: f64) -> Result<(Vec<f64>, f64)> {
        let (_, g, h, v) = self.parts(t)?;
        Ok((self.mu0.iter().zip(&self.mu_end).map(|(a, b)| h * a + g * b).collect(), v))
    }

    /// `σ ∇log Π*_t(x) = σ (m − x)/V`.
    pub fn marginal_score(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let (m, v) = self.marginal(t)?;
        Ok(x.iter().zip(&m).map(|(a, b)| (b - a) / v).collect())
    }

    /// `(slope, intercepts)` with `u*(x, t) = slope·x + intercept`.
    pub fn optimal_drift_coefficients(&self, t: f64) -> Result<(f64, Vec<f64>)> {
        let (k, g, h, v) = self.parts(t)?;
        let sigma = self.schedule.sigma_at(t)?;
        let (a, b) = (self.s0 * self.s0, self.s_end * self.s_end);
        let scale = sigma / (k * v);
        let slope = scale * (g * b - h * a - k * g);
        let icpt = self.mu0.iter().zip(&self.mu_end).map(|(m0, mt)| scale * (h * a * mt + k * g * mt - g * b * m0)).collect();
        Ok((slope, icpt))
    }

    /// `(slope, intercepts)` with `v*(x, t) = slope·x + intercept`.
    pub fn backward_drift_coefficients(&self, t: f64) -> Result<(f64, Vec<f64>)> {
        let (k, g, h, v) = self.parts(t)?;
        let sigma = self.schedule.sigma_at(t)?;
        let (a, b) = (self.s0 * self.s0, self.s_end * self.s_end);
        let scale = sigma / (k * v);
        let slope = scale * (h * a - g * b - k * h);
        let icpt = self.mu0.iter().zip(&self.mu_end).map(|(m0, mt)| scale * (g * b * m0 + k * h * m0 - h * a * mt)).collect();
        Ok((slope, icpt))
    }

    fn guard(&self, t: f64) -> Result<()> {
        let (_, g, h, _) = self.parts(t)?;
        if g <= 0.0 || h <= 0.0 {
            return Err(BmsError::SingularTime { t });
        }
        Ok(())
    }

    /// `u*(x, t) = σ E[∇_{x_t} log P_{T|t}(X_T | X_t) | X_t = x]`.
    pub fn optimal_drift(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.guard(t)?;
        let (slope, icpt) = self.optimal_drift_coefficients(t)?;
        Ok(x.iter().zip(&icpt).map(|(a, c)| slope * a + c).collect())
    }

    /// `v*(x, t) = σ E[∇_{x_t} log P_{t|0}(X_t | X_0) | X_t = x]`.
    pub fn backward_drift(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.guard(t)?;
        let (slope, icpt) = self.backward_drift_coefficients(t)?;
        Ok(x.iter().zip(&icpt).map(|(a, c)| slope * a + c).collect())
    }

    /// Exact i.i.d. draws of `(X0, XT)` from the independent coupling.
    pub fn sample_endpoints<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let x0 = self.mu0.iter().map(|m| m + self.s0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let xe = self.mu_end.iter().map(|m| m + self.s_end * rng.sample::<f64, _>(StandardNormal)).collect();
        (x0, xe)
    }

    pub fn sb_potential(&self) -> SbPotential {
        let k = self.schedule.kappa_total();
        let (a, b) = (self.s0 * self.s0, self.s_end * self.s_end);
        let c = 0.5 * ((k * k + 4.0 * a * b).sqrt() - k);
        // Λ22 = a/(ab − c²) = a/(Kc); the Dirac limit a → 0 gives 1/b.
        let lambda22 = if a == 0.0 { 1.0 / b } else { a / (a * b - c * c) };
        let a_coef = lambda22 - 1.0 / k;
        let b_coef = self.mu_end.iter().zip(&self.mu0).map(|(mt, m0)| lambda22 * mt - m0 / k).collect();
        SbPotential { cross_cov: c, a: a_coef, b: b_coef }
    }

    /// Corrector `∇log φ̂_T = ∇log p_target − ∇log φ_T`.
    pub fn sb_corrector(&self) -> ScoreFn {
        let pot = self.sb_potential();
        let mu = self.mu_end.clone();
        let var = self.s_end * self.s_end;
        Arc::new(move |y: &[f64]| {
            y.iter().zip(&mu).zip(&pot.b).map(|((yi, m), bi)| (m - yi) / var - (bi - pot.a * yi)).collect()
        })
    }

    /// Markov drift of the Gaussian Schrödinger bridge, `σ (B − A x)/(1 + A κ(T)(1−γ))`.
    pub fn sb_drift(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let pot = self.sb_potential();
        let sigma = self.schedule.sigma_at(t)?;
        let rem = self.schedule.kappa_remaining_at(t)?;
        let den = 1.0 + pot.a * rem;
        Ok(x.iter().zip(&pot.b).map(|(xi, bi)| sigma * (bi - pot.a * xi) / den).collect())
    }

    /// Law of `X_T | X_t = x` under the bridge: per-coordinate means and variance.
    pub fn sb_terminal_given(&self, x: &[f64], t: f64) -> Result<(Vec<f64>, f64)> {
        let pot = self.sb_potential();
        let rem = self.schedule.kappa_remaining_at(t)?;
        if rem <= 0.0 {
            return Ok((x.to_vec(), 0.0));
        }
        let precision = 1.0 / rem + pot.a;
        Ok((x.iter().zip(&pot.b).map(|(xi, bi)| (xi / rem + bi) / precision).collect(), 1.0 / precision))
    }

    /// Joint scores of the bridge coupling `N((μ0, μT), [[s0², c], [c, sT²]])`.
    pub fn sb_joint_scores(&self) -> Result<(JointScoreFn, JointScoreFn)> {
        if self.s0 == 0.0 {
            return Err(BmsError::UnsupportedCoupling("a Dirac prior has no joint score".into()));
        }
        let (a, b) = (self.s0 * self.s0, self.s_end * self.s_end);
        let c = self.sb_potential().cross_cov;
        let det = a * b - c * c;
        let (l11, l12, l22) = (b / det, -c / det, a / det);
        let (m0, mt) = (self.mu0.clone(), self.mu_end.clone());
        let (m0b, mtb) = (m0.clone(), mt.clone());
        let s0: JointScoreFn = Arc::new(move |x0: &[f64], y: &[f64]| {
            (0..x0.len()).map(|i| -l11 * (x0[i] - m0[i]) - l12 * (y[i] - mt[i])).collect()
        });
        let se: JointScoreFn = Arc::new(move |x0: &[f64], y: &[f64]| {
            (0..x0.len()).map(|i| -l12 * (x0[i] - m0b[i]) - l22 * (y[i] - mtb[i])).collect()
        });
        Ok((s0, se))
    }

    /// Exact draws of `(X0, XT)` from the bridge coupling.
    pub fn sample_sb_endpoints<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let (a, b) = (self.s0 * self.s0, self.s_end * self.s_end);
        let c = self.sb_potential().cross_cov;
        let cond_sd = if a == 0.0 { b.sqrt() } else { (b - c * c / a).max(0.0).sqrt() };
        let mut x0 = Vec::with_capacity(self.dim());
        let mut xe = Vec::with_capacity(self.dim());
        for i in 0..self.dim() {
            let z0: f64 = rng.sample(StandardNormal);
            let z1: f64 = rng.sample(StandardNormal);
            let d0 = self.s0 * z0;
            let slope = if a == 0.0 { 0.0 } else { c / a };
            x0.push(self.mu0[i] + d0);
            xe.push(self.mu_end[i] + slope * d0 + cond_sd * z1);
        }
        (x0, xe)
    }
}

/// Outcome of one registered identity check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub tolerance: String,
    pub observed: String,
    pub passed: bool,
}

pub mod checks;

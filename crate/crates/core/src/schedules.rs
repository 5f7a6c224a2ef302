//! Diffusion coefficient schedules.
//!
//! A schedule provides the diffusion coefficient `σ(t)` of the reference
//! process `dX = σ(t) dB`, its cumulative variance `κ(t) = ∫₀ᵗ σ²(s) ds`,
//! the normalized interpolation weight `γ(t) = κ(t)/κ(T)` and the
//! noise-prediction loss weight `ω(t) = κ(t)/σ²(t)`.
//!
//! All three supported kinds admit a closed-form antiderivative of `σ²`,
//! so `κ` is evaluated exactly rather than by quadrature.

use serde::{Deserialize, Serialize};

use crate::error::{BmsError, Result};

/// Slack allowed when checking `t ∈ [0, T]`, relative to `T`.
const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant {
        sigma: f64,
    },
    /// `σ(t) = σ_min (σ_max/σ_min)^{1−t/T} √(2 ln(σ_max/σ_min))`.
    Geometric {
        sigma_min: f64,
        sigma_max: f64,
    },
    /// Variance-exploding EDM schedule `σ(t) = [(1−s) σ_max^{1/ρ} + s σ_min^{1/ρ}]^ρ`, `s = t/T`.
    EdmVe {
        sigma_min: f64,
        sigma_max: f64,
        rho: f64,
    },
}

impl ScheduleKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleKind::Constant { .. } => "constant",
            ScheduleKind::Geometric { .. } => "geometric",
            ScheduleKind::EdmVe { .. } => "edm_ve",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    horizon: f64,
    kappa_total: f64,
    kappa_fault: Option<f64>,
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(BmsError::InvalidParameter(format!("horizon must be positive, got {horizon}")));
        }
        match kind {
            ScheduleKind::Constant { sigma } => {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(BmsError::InvalidParameter(format!("sigma must be positive, got {sigma}")));
                }
            }
            ScheduleKind::Geometric { sigma_min, sigma_max } => {
                if !(sigma_min > 0.0 && sigma_max > sigma_min && sigma_max.is_finite()) {
                    return Err(BmsError::InvalidParameter(format!(
                        "geometric schedule needs 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})"
                    )));
                }
            }
            ScheduleKind::EdmVe { sigma_min, sigma_max, rho } => {
                if !(sigma_min > 0.0 && sigma_max > 0.0 && rho > 0.0)
                    || !(sigma_min.is_finite() && sigma_max.is_finite() && rho.is_finite())
                {
                    return Err(BmsError::InvalidParameter(format!(
                        "edm schedule needs positive parameters, got ({sigma_min}, {sigma_max}, {rho})"
                    )));
                }
            }
        }
        let mut schedule = NoiseSchedule { kind, horizon, kappa_total: 0.0, kappa_fault: None };
        schedule.kappa_total = schedule.kappa_unchecked(horizon);
        Ok(schedule)
    }

    pub fn constant(sigma: f64) -> Result<Self> {
        Self::new(ScheduleKind::Constant { sigma }, 1.0)
    }

    pub fn geometric(sigma_min: f64, sigma_max: f64) -> Result<Self> {
        Self::new(ScheduleKind::Geometric { sigma_min, sigma_max }, 1.0)
    }

    pub fn edm_ve(sigma_min: f64, sigma_max: f64, rho: f64) -> Result<Self> {
        Self::new(ScheduleKind::EdmVe { sigma_min, sigma_max, rho }, 1.0)
    }

    pub fn kind(&self) -> &ScheduleKind {
        &self.kind
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `κ(T)`, the total variance of the reference process.
    pub fn kappa_total(&self) -> f64 {
        self.kappa_total
    }

    /// Fault injection for self-checks: scales every subsequent `κ(t)`
    /// evaluation while leaving the cached `κ(T)` untouched.
    #[doc(hidden)]
    pub fn inject_kappa_fault(&mut self, scale: f64) {
        self.kappa_fault = Some(scale);
    }

    fn check_domain(&self, t: f64) -> Result<f64> {
        let slack = DOMAIN_SLACK * self.horizon;
        if !(t >= -slack && t <= self.horizon + slack) {
            return Err(BmsError::Domain { t, lo: 0.0, hi: self.horizon });
        }
        Ok(t.clamp(0.0, self.horizon))
    }

    pub fn sigma_at(&self, t: f64) -> Result<f64> {
        let t = self.check_domain(t)?;
        Ok(self.sigma_unchecked(t))
    }

    pub fn kappa_at(&self, t: f64) -> Result<f64> {
        let t = self.check_domain(t)?;
        let kappa = self.kappa_unchecked(t);
        Ok(match self.kappa_fault {
            Some(scale) => kappa * scale,
            None => kappa,
        })
    }

    /// `κ(T) − κ(t)`, evaluated without cancellation near `T`.
    pub fn kappa_remaining_at(&self, t: f64) -> Result<f64> {
        let t = self.check_domain(t)?;
        Ok(match self.kappa_fault {
            Some(scale) => self.kappa_total - scale * self.kappa_unchecked(t),
            None => self.remaining_unchecked(t),
        })
    }

    pub fn gamma_at(&self, t: f64) -> Result<f64> {
        Ok(self.kappa_at(t)? / self.kappa_total)
    }

    /// Noise-prediction weight `κ(t)/σ²(t)`; zero at `t = 0`.
    pub fn omega_at(&self, t: f64) -> Result<f64> {
        let kappa = self.kappa_at(t)?;
        if kappa == 0.0 {
            return Ok(0.0);
        }
        let sigma = self.sigma_unchecked(t.clamp(0.0, self.horizon));
        Ok(kappa / (sigma * sigma))
    }

    fn sigma_unchecked(&self, t: f64) -> f64 {
        let s = t / self.horizon;
        match self.kind {
            ScheduleKind::Constant { sigma } => sigma,
            ScheduleKind::Geometric { sigma_min, sigma_max } => {
                let ratio = sigma_max / sigma_min;
                sigma_min * ratio.powf(1.0 - s) * (2.0 * ratio.ln()).sqrt()
            }
            ScheduleKind::EdmVe { sigma_min, sigma_max, rho } => {
                let a = sigma_max.powf(1.0 / rho);
                let b = sigma_min.powf(1.0 / rho);
                ((1.0 - s) * a + s * b).powf(rho)
            }
        }
    }

    fn remaining_unchecked(&self, t: f64) -> f64 {
        let s = t / self.horizon;
        let horizon = self.horizon;
        match self.kind {
            ScheduleKind::Constant { sigma } => sigma * sigma * (horizon - t),
            ScheduleKind::Geometric { sigma_min, sigma_max } => {
                let ratio = sigma_max / sigma_min;
                horizon * sigma_min * sigma_min * (2.0 * ratio.ln() * (1.0 - s)).exp_m1()
            }
            ScheduleKind::EdmVe { sigma_min, sigma_max, rho } => {
                let a = sigma_max.powf(1.0 / rho);
                let b = sigma_min.powf(1.0 / rho);
                let p = 2.0 * rho + 1.0;
                if (b - a).abs() < 1e-300 {
                    return horizon * a.powf(2.0 * rho) * (1.0 - s);
                }
                // b^p − end^p = end^p · expm1(p ln(b/end)), with b − end = −(1−s)(a−b)
                let end = (1.0 - s) * a + s * b;
                let log_ratio = (-(1.0 - s) * (a - b) / end).ln_1p();
                horizon * end.powf(p) * (p * log_ratio).exp_m1() / (p * (b - a))
            }
        }
    }

    fn kappa_unchecked(&self, t: f64) -> f64 {
        let s = t / self.horizon;
        let horizon = self.horizon;
        match self.kind {
            ScheduleKind::Constant { sigma } => sigma * sigma * t,
            ScheduleKind::Geometric { sigma_min, sigma_max } => {
                // σ² = 2 ln r σ_min² r^{2(1−s)} integrates to σ_min² (r² − r^{2(1−s)}).
                let ratio = sigma_max / sigma_min;
                let two_log = 2.0 * ratio.ln();
                horizon * sigma_min * sigma_min * (ratio * ratio) * (-(-two_log * s).exp_m1())
            }
            ScheduleKind::EdmVe { sigma_min, sigma_max, rho } => {
                let a = sigma_max.powf(1.0 / rho);
                let b = sigma_min.powf(1.0 / rho);
                let p = 2.0 * rho + 1.0;
                if (b - a).abs() < 1e-300 {
                    return horizon * a.powf(2.0 * rho) * s;
                }
                let end = (1.0 - s) * a + s * b;
                horizon * (end.powf(p) - a.powf(p)) / (p * (b - a))
            }
        }
    }
}

//! Closed-form transition densities of the scaled Brownian reference
//! process `dX = σ(t) dB` and its bridge.
//!
//! With `κ` and `γ` from the schedule:
//!
//! * `P_{t|0}(x_t | x_0) = N(x_0, κ(t) I)`
//! * `P_{T|t}(x_T | x_t) = N(x_t, (κ(T) − κ(t)) I)`
//! * `P_{t|0,T}(x_t | x_0, x_T) = N((1−γ) x_0 + γ x_T, κ(T) γ (1−γ) I)`

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{BmsError, Result};
use crate::schedules::NoiseSchedule;

/// Distance from a singular endpoint inside which score evaluations are refused.
pub const SINGULAR_GUARD: f64 = 1e-9;

fn guard_low(s: &NoiseSchedule, t: f64) -> Result<()> {
    if t <= SINGULAR_GUARD * s.horizon() {
        return Err(BmsError::SingularTime { t });
    }
    Ok(())
}

fn guard_high(s: &NoiseSchedule, t: f64) -> Result<()> {
    if t >= s.horizon() * (1.0 - SINGULAR_GUARD) {
        return Err(BmsError::SingularTime { t });
    }
    Ok(())
}

/// A draw from the reference bridge pinned at `x0` and `xT`.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgePoint {
    pub x_t: Vec<f64>,
    pub t: f64,
    pub x0: Vec<f64>,
    pub x_end: Vec<f64>,
}

/// Samples `X_t ~ P_{t|0,T}(· | x0, xT)` as the stochastic interpolant.
pub fn sample_bridge<R: Rng + ?Sized>(
    s: &NoiseSchedule,
    x0: &[f64],
    x_end: &[f64],
    t: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x0.len()];
    sample_bridge_into(s, x0, x_end, t, rng, &mut out)?;
    Ok(out)
}

pub fn sample_bridge_into<R: Rng + ?Sized>(
    s: &NoiseSchedule,
    x0: &[f64],
    x_end: &[f64],
    t: f64,
    rng: &mut R,
    out: &mut [f64],
) -> Result<()> {
    let gamma = s.gamma_at(t)?;
    let one_minus = if gamma == 0.0 { 1.0 } else { s.kappa_remaining_at(t)? / s.kappa_total() };
    let std = (gamma * s.kappa_remaining_at(t)?).max(0.0).sqrt();
    for ((o, &a), &b) in out.iter_mut().zip(x0).zip(x_end) {
        let eps: f64 = rng.sample(StandardNormal);
        *o = one_minus * a + gamma * b + std * eps;
    }
    Ok(())
}

/// Same as [`BridgePoint`] sampling but keeps the endpoints alongside.
pub fn bridge_point<R: Rng + ?Sized>(
    s: &NoiseSchedule,
    x0: &[f64],
    x_end: &[f64],
    t: f64,
    rng: &mut R,
) -> Result<BridgePoint> {
    Ok(BridgePoint {
        x_t: sample_bridge(s, x0, x_end, t, rng)?,
        t,
        x0: x0.to_vec(),
        x_end: x_end.to_vec(),
    })
}

/// `∇_{x_t} log P_{t|0}(x_t | x_0) = (x_0 − x_t)/κ(t)`.
pub fn score_t_given_0(s: &NoiseSchedule, x0: &[f64], xt: &[f64], t: f64) -> Result<Vec<f64>> {
    guard_low(s, t)?;
    let kappa = s.kappa_at(t)?;
    Ok(x0.iter().zip(xt).map(|(a, b)| (a - b) / kappa).collect())
}

/// `∇_{x_t} log P_{T|t}(x_T | x_t) = (x_T − x_t)/(κ(T) − κ(t))`.
#[allow(non_snake_case)]
pub fn score_T_given_t(s: &NoiseSchedule, xt: &[f64], x_end: &[f64], t: f64) -> Result<Vec<f64>> {
    guard_high(s, t)?;
    let remaining = s.kappa_remaining_at(t)?;
    Ok(x_end.iter().zip(xt).map(|(b, x)| (b - x) / remaining).collect())
}

/// `∇_{x_t} log P_{t|0,T}(x_t | x_0, x_T)`.
pub fn score_bridge(s: &NoiseSchedule, x0: &[f64], x_end: &[f64], xt: &[f64], t: f64) -> Result<Vec<f64>> {
    guard_low(s, t)?;
    guard_high(s, t)?;
    let gamma = s.gamma_at(t)?;
    let var = gamma * s.kappa_remaining_at(t)?;
    let one_minus = s.kappa_remaining_at(t)? / s.kappa_total();
    Ok(x0
        .iter()
        .zip(x_end)
        .zip(xt)
        .map(|((a, b), x)| (-x + one_minus * a + gamma * b) / var)
        .collect())
}

/// Brownian-bridge control `σ(t) (x_T − x)/(κ(T) − κ(t))`.
///
/// The controlled SDE is `dX = σ(t) ξ dt + σ(t) dB`, so this is the control
/// `ξ`, not the full drift.
pub fn brownian_bridge_drift(s: &NoiseSchedule, x: &[f64], x_end: &[f64], t: f64) -> Result<Vec<f64>> {
    let sigma = s.sigma_at(t)?;
    let score = score_T_given_t(s, x, x_end, t)?;
    Ok(score.into_iter().map(|v| sigma * v).collect())
}

/// Log-density of the isotropic Gaussian `N(mean, var I)` at `x`.
pub fn gaussian_log_density(x: &[f64], mean: &[f64], var: f64) -> f64 {
    let d = x.len() as f64;
    let sq: f64 = x.iter().zip(mean).map(|(a, m)| (a - m) * (a - m)).sum();
    -0.5 * sq / var - 0.5 * d * (2.0 * std::f64::consts::PI * var).ln()
}

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::drift_model::ControlField;
use crate::error::{BmsError, Result};
use crate::schedules::NoiseSchedule;
use crate::targets::{PriorDistribution, Target};
use crate::trainer::{par_chunks, time_grid, Trajectory};

/// Largest dimension for which likelihoods use exact divergences.
pub const PF_ODE_MAX_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEstimate {
    pub log_weights: Vec<f64>,
    /// `(Σw)²/Σw²`.
    pub ess: f64,
    /// `log mean w`.
    pub log_z: f64,
    /// Delta-method standard error of `log_z`.
    pub log_z_se: f64,
    /// Self-normalized mean of the observable.
    pub estimate: f64,
}

/// Log importance weight of each recorded path,
///
/// `log ρ(X_N) − log p_prior(X_0) + Σ_k [−(u_k + v_{k+1})·ΔX_k/σ_k + ½(‖u_k‖² − ‖v_{k+1}‖²)Δt_k]`,
///
/// the exact log-ratio of the discretized backward chain with kernels
/// `N(X_{k+1} + σ_k v(X_{k+1}, t_{k+1}) Δt, σ_k² Δt)` started at the target to
/// the Euler chain of `u` started at the prior. Its mean is the normalizing
/// constant of `ρ` for any `u`, `v`.
pub fn path_log_weight(
    u: &dyn ControlField,
    v: &dyn ControlField,
    traj: &Trajectory,
    prior: &PriorDistribution,
    target: &dyn Target,
    s: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if matches!(prior, PriorDistribution::Dirac { .. }) {
        return Err(BmsError::Unsupported("path weights need a prior density; the prior is a Dirac mass".into()));
    }
    if !traj.recorded {
        return Err(BmsError::InvalidParameter("path weights need a recorded trajectory".into()));
    }
    let n = traj.n_paths();
    let x0 = traj.x0();
    let x_end = traj.x_end();
    let mut lw = Vec::with_capacity(n);
    for p in 0..n {
        let a = x0.row(p).to_vec();
        let b = x_end.row(p).to_vec();
        lw.push(target.log_rho(&b) - prior.log_density(&a)?);
    }
    for k in 0..traj.times.len() - 1 {
        let (t, t_next) = (traj.times[k], traj.times[k + 1]);
        let dt = t_next - t;
        let sigma = s.sigma_at(t)?;
        let uk = u.eval_batch(traj.states[k].view(), &vec![t; n])?;
        let v_next = v.eval_batch(traj.states[k + 1].view(), &vec![t_next; n])?;
        let dx = traj.increment(k);
        for p in 0..n {
            let mut acc = 0.0;
            for j in 0..dx.ncols() {
                let (a, b) = (uk[[p, j]], v_next[[p, j]]);
                acc += -(a + b) * dx[[p, j]] / sigma + 0.5 * (a * a - b * b) * dt;
            }
            lw[p] += acc;
        }
    }
    Ok(lw)
}

/// Self-normalized importance estimate of `E_target[obs]`, with the effective
/// sample size and `log Z = log mean w`.
pub fn snis_estimate(log_weights: &[f64], observable: &[f64]) -> Result<ImportanceEstimate> {
    if log_weights.is_empty() || log_weights.len() != observable.len() {
        return Err(BmsError::SizeMismatch("need one observable per weight and at least one weight".into()));
    }
    if log_weights.iter().any(|w| w.is_nan()) {
        return Err(BmsError::Numerical("NaN log-weight".into()));
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(BmsError::DegenerateWeights);
    }
    if max == f64::INFINITY {
        return Err(BmsError::Numerical("infinite log-weight".into()));
    }
    let w: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let n = w.len() as f64;
    let sum: f64 = w.iter().sum();
    let sum_sq: f64 = w.iter().map(|x| x * x).sum();
    let estimate = w.iter().zip(observable).map(|(a, b)| a * b).sum::<f64>() / sum;
    let mean = sum / n;
    let var = if w.len() > 1 { w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Ok(ImportanceEstimate {
        log_weights: log_weights.to_vec(),
        ess: sum * sum / sum_sq,
        log_z: max + mean.ln(),
        log_z_se: (var / n).sqrt() / mean,
        estimate,
    })
}

/// Integrates the probability-flow ODE `dX = σ(u − ½ s) dt` from `t_start`
/// to `T` with RK4, where `s = σ ∇ log Π_t`, and returns the end points with
/// `log p_prior(X_start) − ∫ ∇·f dt`.
pub fn pf_ode_log_likelihood(
    u: &dyn ControlField,
    score: &dyn ControlField,
    x_start: ArrayView2<f64>,
    prior: &PriorDistribution,
    s: &NoiseSchedule,
    t_start: f64,
    n_steps: usize,
) -> Result<(Array2<f64>, Vec<f64>)> {
    let d = x_start.ncols();
    if d > PF_ODE_MAX_DIM {
        return Err(BmsError::Unsupported(format!("exact divergences are limited to d ≤ {PF_ODE_MAX_DIM}, got {d}")));
    }
    if n_steps == 0 {
        return Err(BmsError::InvalidParameter("the ODE needs at least one step".into()));
    }
    let times = time_grid(s, t_start, n_steps);
    let n = x_start.nrows();
    let chunks = par_chunks(n, |_, rows| {
        let mut x = x_start.slice(s![rows.clone(), ..]).to_owned();
        let mut logp: Vec<f64> = x.rows().into_iter().map(|r| prior.log_density(&r.to_vec())).collect::<Result<_>>()?;
        for k in 0..n_steps {
            let (t, h) = (times[k], times[k + 1] - times[k]);
            let (k1, l1) = flow(u, score, s, &x, t)?;
            let (k2, l2) = flow(u, score, s, &(&x + &(&k1 * (h / 2.0))), t + h / 2.0)?;
            let (k3, l3) = flow(u, score, s, &(&x + &(&k2 * (h / 2.0))), t + h / 2.0)?;
            let (k4, l4) = flow(u, score, s, &(&x + &(&k3 * h)), t + h)?;
            x = &x + &((&k1 + &(&k2 * 2.0) + &(&k3 * 2.0) + &k4) * (h / 6.0));
            for (i, lp) in logp.iter_mut().enumerate() {
                *lp -= h / 6.0 * (l1[i] + 2.0 * l2[i] + 2.0 * l3[i] + l4[i]);
            }
        }
        if x.iter().chain(&logp).any(|v| !v.is_finite()) {
            return Err(BmsError::Numerical("probability-flow integration produced non-finite values".into()));
        }
        Ok((x, logp))
    })?;
    let mut out = Array2::zeros((n, d));
    let mut logp = Vec::with_capacity(n);
    let mut offset = 0;
    for (x, l) in chunks {
        out.slice_mut(s![offset..offset + x.nrows(), ..]).assign(&x);
        offset += x.nrows();
        logp.extend(l);
    }
    Ok((out, logp))
}

/// `f = σ(u − ½ s)` and `∇·f` at every row.
fn flow(
    u: &dyn ControlField,
    score: &dyn ControlField,
    s: &NoiseSchedule,
    x: &Array2<f64>,
    t: f64,
) -> Result<(Array2<f64>, Vec<f64>)> {
    let ts = vec![t; x.nrows()];
    let sigma = s.sigma_at(t)?;
    let uu = u.eval_batch(x.view(), &ts)?;
    let ss = score.eval_batch(x.view(), &ts)?;
    let du = u.divergence_rows(x.view(), &ts)?;
    let ds = score.divergence_rows(x.view(), &ts)?;
    let f = (&uu - &(&ss * 0.5)) * sigma;
    let div = du.iter().zip(&ds).map(|(a, b)| sigma * (a - 0.5 * b)).collect::<Vec<_>>();
    if div.iter().any(|v| v.is_nan()) {
        return Err(BmsError::Numerical(format!("divergence is NaN at t = {t}")));
    }
    Ok((f, div))
}

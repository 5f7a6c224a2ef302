use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{damped_loss, draw_times, loss_weights, ReplayBuffer, TrainConfig};
use crate::drift_model::{AdamW, ControlField, DriftField, OutputScaling};
use crate::error::{BmsError, Result};
use crate::reference::sample_bridge_into;
use crate::targets::PriorDistribution;

use super::CouplingSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodRecord {
    pub step: u64,
    pub loss: f64,
    /// RMS of `u + v − s` over the logged batch.
    pub nelson_rms: f64,
}

/// Two-head field: head 0 is the backward drift `v`, head 1 the scaled
/// score `s = σ ∇ log Π_t`.
pub struct LikelihoodFit {
    pub heads: DriftField,
    pub log: Vec<LikelihoodRecord>,
}

/// Fits `v` and `s` by bridge regression on `buffer` with targets
/// `ξ^v = σ (x0 − xt)/κ(t)` and `ξ^s = σ [∇log p_prior(x0) + ∇log ρ(xT)]`.
pub fn train_likelihood_heads<R: Rng + ?Sized>(
    config: &TrainConfig,
    u: &dyn ControlField,
    buffer: &ReplayBuffer,
    rng: &mut R,
) -> Result<LikelihoodFit> {
    let spec = config.likelihood.ok_or_else(|| BmsError::Config("likelihood mode is not enabled".into()))?;
    if !matches!(config.prior, PriorDistribution::Gaussian { .. }) || config.coupling != CouplingSpec::Bms {
        return Err(BmsError::UnsupportedCoupling(
            "likelihood heads need the independent coupling with a Gaussian prior".into(),
        ));
    }
    let schedule = config.noise_schedule()?;
    let target = config.target.build()?;
    let target = target.as_target();
    let d = config.prior.dim();
    let net = config.network;
    let scaling = OutputScaling { schedule: schedule.clone(), t_cut: config.t_cut };
    let mut heads = DriftField::new(d, 2, net.width, net.layers, net.n_freq, Some(scaling), rng);
    let mut opt = AdamW::new(heads.params().len(), config.lr, config.weight_decay, config.clip);
    let mut log = Vec::new();
    let b = config.batch_size;
    let mut xt = vec![0.0; d];
    for step in 1..=spec.steps {
        let idx = buffer.sample_indices(b, rng)?;
        let ts = draw_times(b, config.t_cut, schedule.horizon(), config.stratified_time, rng);
        let mut xs = Array2::zeros((b, d));
        let mut targets = Array2::zeros((b, 2 * d));
        let mut bad = vec![false; b];
        for (k, &i) in idx.iter().enumerate() {
            let (x0, x_end) = buffer.pair(i);
            let t = ts[k];
            sample_bridge_into(&schedule, x0, x_end, t, rng, &mut xt)?;
            let sigma = schedule.sigma_at(t)?;
            let kappa = schedule.kappa_at(t)?;
            let s0 = config.prior.score(x0)?;
            let s_end = target.score_vec(x_end);
            for j in 0..d {
                xs[[k, j]] = xt[j];
                targets[[k, j]] = sigma * (x0[j] - xt[j]) / kappa;
                targets[[k, d + j]] = sigma * (s0[j] + s_end[j]);
            }
            if targets.row(k).iter().any(|v| !v.is_finite()) {
                bad[k] = true;
                targets.row_mut(k).fill(0.0);
            }
        }
        let skipped = bad.iter().filter(|&&x| x).count();
        if skipped * 10 > b {
            return Err(BmsError::DataQuality { skipped, total: b });
        }
        let mut weights = loss_weights(heads.scaling(), &ts)?;
        for (w, _) in weights.iter_mut().zip(&bad).filter(|(_, &x)| x) {
            *w = 0.0;
        }
        let mut seen = None;
        let (loss, grads) = heads.loss_and_gradient(xs.view(), &ts, |out| {
            seen = Some(out.clone());
            damped_loss(out, &targets, None, &weights, 0.0)
        })?;
        opt.step(heads.params_mut(), &grads);
        if step % spec.log_every.max(1) == 0 || step == spec.steps {
            let out = seen.expect("loss closure ran");
            let uu = u.eval_batch(xs.view(), &ts)?;
            let r = &uu + &out.slice(s![.., ..d]) - &out.slice(s![.., d..]);
            let nelson_rms = (r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64).sqrt();
            log.push(LikelihoodRecord { step, loss, nelson_rms });
        }
    }
    Ok(LikelihoodFit { heads, log })
}

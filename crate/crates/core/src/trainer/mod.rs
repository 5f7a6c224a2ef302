//! Damped fixed-point diffusion matching with a replay buffer.

mod buffer;
mod likelihood;
mod simulate;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use buffer::ReplayBuffer;
pub use likelihood::{train_likelihood_heads, LikelihoodFit, LikelihoodRecord};
pub use simulate::{par_chunks, simulate_forward, time_grid, worker_count, Trajectory, SIM_CHUNK};

use crate::couplings::{
    learned_coefficients, memoryless_corrector, reference_terminal, xi_as, xi_bms, xi_general, xi_sb, CouplingKind,
    CvSchedule, CvSpec,
};
use crate::drift_model::{AdamW, Checkpoint, ControlField, DriftField, FrozenField, OutputScaling, TrainingState};
use crate::error::{BmsError, Result};
use crate::oracle::GaussianPair;
use crate::schedules::{NoiseSchedule, ScheduleKind};
use crate::targets::{BuiltTarget, PriorDistribution, TargetSpec};

/// Corrector `∇ log φ̂_T` used by the Schrödinger-bridge coupling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectorSpec {
    /// Score of the uncontrolled terminal marginal.
    Memoryless,
    /// Closed-form corrector for a Gaussian prior and Gaussian target.
    GaussianOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CouplingSpec {
    Bms,
    As,
    Sb { corrector: CorrectorSpec },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub width: usize,
    pub layers: usize,
    pub n_freq: usize,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec { width: 128, layers: 3, n_freq: 16 }
    }
}

/// Fitting of the backward-drift and score heads after training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LikelihoodSpec {
    pub steps: u64,
    pub log_every: u64,
}

impl Default for LikelihoodSpec {
    fn default() -> Self {
        LikelihoodSpec { steps: 1000, log_every: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub coupling: CouplingSpec,
    pub cv: CvSpec,
    pub schedule: ScheduleKind,
    pub horizon: f64,
    pub prior: PriorDistribution,
    pub target: TargetSpec,
    /// Outer fixed-point iterations `I`.
    pub outer_steps: u64,
    /// Gradient steps per outer iteration `M`.
    pub inner_steps: u64,
    pub buffer_size: usize,
    pub batch_size: usize,
    pub em_steps: usize,
    /// Damping `η`; the step size is `α = 1/(1+η)`.
    pub eta: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip: f64,
    pub seed: u64,
    pub t_cut: f64,
    pub network: NetworkSpec,
    /// Stratify training times over the batch instead of drawing them i.i.d.
    pub stratified_time: bool,
    /// Fraction of buffer pairs kept across outer steps; 0 refreshes wholesale.
    pub reuse_fraction: f64,
    pub likelihood: Option<LikelihoodSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            coupling: CouplingSpec::Bms,
            cv: CvSpec::Gamma,
            schedule: ScheduleKind::Constant { sigma: 2.5 },
            horizon: 1.0,
            prior: PriorDistribution::Gaussian { mean: vec![0.0; 2], scale: 1.0 },
            target: TargetSpec::Gmm { modes: 4, dim: 2, box_halfwidth: 4.0, seed: 0, component_var: 1.0 },
            outer_steps: 1000,
            inner_steps: 1000,
            buffer_size: 30_000,
            batch_size: 1024,
            em_steps: 100,
            eta: 0.0,
            lr: 1e-4,
            weight_decay: 0.0,
            clip: 1.0,
            seed: 0,
            t_cut: 1e-3,
            network: NetworkSpec::default(),
            stratified_time: false,
            reuse_fraction: 0.0,
            likelihood: None,
        }
    }
}

impl TrainConfig {
    pub fn alpha(&self) -> f64 {
        1.0 / (1.0 + self.eta)
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.schedule, self.horizon)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BmsError::Config(m));
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be a finite nonnegative number, got {}", self.eta));
        }
        if !(self.t_cut > 0.0 && self.t_cut < self.horizon) {
            return bad(format!("t_cut must lie in (0, horizon), got {}", self.t_cut));
        }
        if self.buffer_size == 0 || self.batch_size == 0 || self.em_steps == 0 {
            return bad("buffer_size, batch_size and em_steps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.reuse_fraction) {
            return bad(format!("reuse_fraction must lie in [0, 1), got {}", self.reuse_fraction));
        }
        if !(self.lr > 0.0 && self.clip > 0.0 && self.weight_decay >= 0.0) {
            return bad("lr and clip must be positive and weight_decay nonnegative".into());
        }
        if self.prior.dim() != self.target.dim() {
            return bad(format!("prior dimension {} differs from target dimension {}", self.prior.dim(), self.target.dim()));
        }
        if let CvSpec::Constant { c } = self.cv {
            if !(0.0..=1.0).contains(&c) {
                return bad(format!("constant control variate must lie in [0, 1], got {c}"));
            }
        }
        let dirac = matches!(self.prior, PriorDistribution::Dirac { .. });
        if dirac && self.coupling == CouplingSpec::Bms {
            return Err(BmsError::UnsupportedCoupling(
                "the independent coupling needs a prior score; use the half-bridge coupling for a Dirac prior".into(),
            ));
        }
        self.noise_schedule()?;
        Ok(())
    }
}

/// Applies the coupling to simulated endpoints: joint pairs are kept, the
/// half bridge redraws `X_0` from the prior, and the independent coupling
/// permutes each column separately.
pub fn build_coupling<R: Rng + ?Sized>(
    kind: &CouplingKind,
    x0: &Array2<f64>,
    x_end: &Array2<f64>,
    prior: &PriorDistribution,
    rng: &mut R,
) -> (Array2<f64>, Array2<f64>) {
    match kind {
        CouplingKind::SbJoint { .. } | CouplingKind::GeneralAnalytic { .. } => (x0.clone(), x_end.clone()),
        CouplingKind::AsReverseConditional => {
            let mut fresh = Array2::zeros(x0.raw_dim());
            for mut row in fresh.rows_mut() {
                prior.sample_into(rng, row.as_slice_mut().expect("contiguous"));
            }
            (fresh, x_end.clone())
        }
        CouplingKind::BmsIndependent => {
            let n = x0.nrows();
            let mut p0: Vec<usize> = (0..n).collect();
            let mut p_end: Vec<usize> = (0..n).collect();
            p0.shuffle(rng);
            p_end.shuffle(rng);
            (x0.select(ndarray::Axis(0), &p0), x_end.select(ndarray::Axis(0), &p_end))
        }
    }
}

/// Weighted damped matching loss
/// `mean_b w_b [½‖ξ_b − u_b‖² + (η/2)‖u_i,b − u_b‖²]` and its gradient in `u`.
pub fn damped_loss(
    u: &Array2<f64>,
    xi: &Array2<f64>,
    ui: Option<&Array2<f64>>,
    weights: &[f64],
    eta: f64,
) -> (f64, Array2<f64>) {
    let n = u.nrows() as f64;
    let mut grad = Array2::zeros(u.raw_dim());
    let mut loss = 0.0;
    for b in 0..u.nrows() {
        let w = weights[b];
        for j in 0..u.ncols() {
            let r = u[[b, j]] - xi[[b, j]];
            let mut l = 0.5 * r * r;
            let mut g = r;
            if let Some(ui) = ui {
                let q = u[[b, j]] - ui[[b, j]];
                l += 0.5 * eta * q * q;
                g += eta * q;
            }
            loss += w * l;
            grad[[b, j]] = w * g / n;
        }
    }
    (loss / n, grad)
}

/// Training times for one batch, uniform on `(t_cut, T)`.
pub(crate) fn draw_times<R: Rng + ?Sized>(n: usize, t_cut: f64, horizon: f64, stratified: bool, rng: &mut R) -> Vec<f64> {
    let width = horizon - t_cut;
    (0..n)
        .map(|k| {
            let u: f64 = rng.gen();
            let t = if stratified { t_cut + (k as f64 + u) / n as f64 * width } else { t_cut + u * width };
            t.clamp(t_cut, horizon - width * 1e-12)
        })
        .collect()
}

/// Loss weights `1/factor(t)²` matching the output reparameterization.
pub(crate) fn loss_weights(scaling: Option<&OutputScaling>, ts: &[f64]) -> Result<Vec<f64>> {
    ts.iter()
        .map(|&t| match scaling {
            Some(s) => s.factor(t).map(|f| 1.0 / (f * f)),
            None => Ok(1.0),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub outer_step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<LogRecord>,
}

impl RunLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("outer_step,loss,grad_norm,wall_ms\n");
        for r in &self.records {
            out.push_str(&format!("{},{:e},{:e},{:.3}\n", r.outer_step, r.loss, r.grad_norm, r.wall_ms));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn summary(&self) -> serde_json::Value {
        let last = self.records.last();
        serde_json::json!({
            "outer_steps": self.records.len(),
            "final_loss": last.map(|r| r.loss),
            "final_grad_norm": last.map(|r| r.grad_norm),
            "total_wall_ms": self.records.iter().map(|r| r.wall_ms).sum::<f64>(),
        })
    }

    fn flatten(&self) -> Vec<f64> {
        self.records.iter().flat_map(|r| [r.outer_step as f64, r.loss, r.grad_norm, r.wall_ms]).collect()
    }

    fn unflatten(v: &[f64]) -> Self {
        let records = v
            .chunks_exact(4)
            .map(|c| LogRecord { outer_step: c[0] as u64, loss: c[1], grad_norm: c[2], wall_ms: c[3] })
            .collect();
        RunLog { records }
    }
}

/// Where and how often `Trainer::run` writes checkpoints. Every save writes
/// `step_NNNNNN.ckpt` and overwrites `latest.ckpt`.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointPolicy {
    pub dir: PathBuf,
    /// Save every this many outer steps; 0 saves only at the end.
    pub every: u64,
}

impl CheckpointPolicy {
    pub fn latest(&self) -> PathBuf {
        self.dir.join("latest.ckpt")
    }
}

/// Training state: the field being fitted, its optimizer, the buffer and the
/// master random stream.
pub struct Trainer {
    config: TrainConfig,
    schedule: NoiseSchedule,
    target: BuiltTarget,
    coupling: CouplingKind,
    terminal: (Vec<f64>, f64),
    field: DriftField,
    opt: AdamW,
    cv: CvSchedule,
    cv_opt: Option<AdamW>,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    outer_step: u64,
    last_finite_loss: f64,
    log: RunLog,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let schedule = config.noise_schedule()?;
        let target = config.target.build()?;
        let coupling = match config.coupling {
            CouplingSpec::Bms => CouplingKind::BmsIndependent,
            CouplingSpec::As => CouplingKind::AsReverseConditional,
            CouplingSpec::Sb { corrector: CorrectorSpec::Memoryless } => {
                CouplingKind::SbJoint { corrector: memoryless_corrector(&config.prior, &schedule) }
            }
            CouplingSpec::Sb { corrector: CorrectorSpec::GaussianOracle } => {
                let pair = gaussian_pair(&config, &schedule)?;
                CouplingKind::SbJoint { corrector: pair.sb_corrector() }
            }
        };
        let terminal = reference_terminal(&config.prior, &schedule);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let dim = config.prior.dim();
        let net = config.network;
        let scaling = OutputScaling { schedule: schedule.clone(), t_cut: config.t_cut };
        let field = DriftField::new(dim, 1, net.width, net.layers, net.n_freq, Some(scaling), &mut rng);
        let opt = AdamW::new(field.params().len(), config.lr, config.weight_decay, config.clip);
        let cv = config.cv.build(&schedule, net.n_freq, &mut rng);
        let cv_opt = match &cv {
            CvSchedule::Learned(n) => Some(AdamW::new(n.network().params().len(), config.lr, 0.0, config.clip)),
            _ => None,
        };
        let buffer = ReplayBuffer::new(config.buffer_size, dim);
        Ok(Trainer {
            config,
            schedule,
            target,
            coupling,
            terminal,
            field,
            opt,
            cv,
            cv_opt,
            buffer,
            rng,
            outer_step: 0,
            last_finite_loss: f64::NAN,
            log: RunLog::default(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn field(&self) -> &DriftField {
        &self.field
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn target(&self) -> &BuiltTarget {
        &self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn outer_step(&self) -> u64 {
        self.outer_step
    }

    pub fn cv(&self) -> &CvSchedule {
        &self.cv
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn into_parts(self) -> (DriftField, RunLog) {
        (self.field, self.log)
    }

    /// `ξ` for one sample, with `∂ξ/∂NN(t)` when the control variate is learned.
    fn xi_sample(&self, x0: &[f64], x_end: &[f64], xt: &[f64], t: f64, nn: Option<f64>) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let target = self.target.as_target();
        let s = &self.schedule;
        match &self.coupling {
            CouplingKind::BmsIndependent => match (nn, &self.cv) {
                (Some(nn), CvSchedule::Learned(_)) => {
                    let gamma = s.gamma_at(t)?;
                    let one_minus = s.kappa_remaining_at(t)? / s.kappa_total();
                    let (a0, a_end) = learned_coefficients(gamma, nn);
                    let kappa = s.kappa_at(t)?;
                    let sigma = s.sigma_at(t)?;
                    let s0 = self.config.prior.score(x0)?;
                    let s_end = target.score_vec(x_end);
                    let xi = (0..x0.len())
                        .map(|i| sigma * (a0 * s0[i] + a_end * s_end[i] - (x0[i] - xt[i]) / kappa))
                        .collect();
                    let dxi = (0..x0.len()).map(|i| sigma * (-gamma * s0[i] + one_minus * s_end[i])).collect();
                    Ok((xi, Some(dxi)))
                }
                _ => Ok((xi_bms(&self.config.prior, target, s, &self.cv, x0, x_end, xt, t)?, None)),
            },
            CouplingKind::AsReverseConditional => {
                Ok((xi_as((&self.terminal.0, self.terminal.1), target, s, x_end, t)?, None))
            }
            CouplingKind::SbJoint { corrector } => Ok((xi_sb(Some(corrector), target, s, x_end, t)?, None)),
            CouplingKind::GeneralAnalytic { joint_score_0, joint_score_end } => {
                Ok((xi_general(joint_score_0, joint_score_end, s, &self.cv, x0, x_end, xt, t)?, None))
            }
        }
    }

    /// One gradient step on a fresh mini-batch; returns `(loss, gradient norm)`.
    pub fn gradient_step(&mut self, frozen: Option<&FrozenField>) -> Result<(f64, f64)> {
        let b = self.config.batch_size;
        let d = self.config.prior.dim();
        let horizon = self.schedule.horizon();
        let idx = self.buffer.sample_indices(b, &mut self.rng)?;
        let ts_all = draw_times(b, self.config.t_cut, horizon, self.config.stratified_time, &mut self.rng);
        let nn_all = match &self.cv {
            CvSchedule::Learned(net) => Some(net.values(&ts_all)),
            _ => None,
        };
        let mut xs = Vec::with_capacity(b * d);
        let mut ts = Vec::with_capacity(b);
        let mut xis = Vec::with_capacity(b * d);
        let mut dxis = Vec::new();
        let mut skipped = 0;
        let mut xt = vec![0.0; d];
        for (k, &i) in idx.iter().enumerate() {
            let (x0, x_end) = self.buffer.pair(i);
            let t = ts_all[k];
            crate::reference::sample_bridge_into(&self.schedule, x0, x_end, t, &mut self.rng, &mut xt)?;
            let (xi, dxi) = self.xi_sample(x0, x_end, &xt, t, nn_all.as_ref().map(|v| v[k]))?;
            if xi.iter().any(|v| !v.is_finite()) {
                skipped += 1;
                continue;
            }
            xs.extend_from_slice(&xt);
            ts.push(t);
            xis.extend_from_slice(&xi);
            if let Some(dxi) = dxi {
                dxis.extend_from_slice(&dxi);
            }
        }
        if skipped * 10 > b {
            return Err(BmsError::DataQuality { skipped, total: b });
        }
        let n = ts.len();
        let xs = Array2::from_shape_vec((n, d), xs).expect("rows of length d");
        let xi = Array2::from_shape_vec((n, d), xis).expect("rows of length d");
        let weights = loss_weights(self.field.scaling(), &ts)?;
        let eta = self.config.eta;
        let ui = match frozen {
            Some(f) if eta > 0.0 => Some(f.eval_batch(xs.view(), &ts)?),
            _ => None,
        };
        let mut u_seen = None;
        let last = self.last_finite_loss;
        let (loss, grads) = self
            .field
            .loss_and_gradient(xs.view(), &ts, |u| {
                u_seen = Some(u.clone());
                damped_loss(u, &xi, ui.as_ref(), &weights, eta)
            })
            .map_err(|e| match e {
                BmsError::TrainingDivergence { .. } => BmsError::TrainingDivergence { last_finite_loss: last },
                e => e,
            })?;
        let grad_norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        if let (CvSchedule::Learned(net), Some(opt), Some(u)) = (&mut self.cv, &mut self.cv_opt, u_seen) {
            let g_nn: Vec<f64> = (0..n)
                .map(|r| {
                    let dot: f64 = (0..d).map(|j| (xi[[r, j]] - u[[r, j]]) * dxis[r * d + j]).sum();
                    weights[r] * dot / n as f64
                })
                .collect();
            let cv_grads = net.backward(&ts, &g_nn);
            opt.step(net.params_mut(), &cv_grads);
        }
        self.opt.step(self.field.params_mut(), &grads);
        if self.field.params().iter().any(|p| !p.is_finite()) {
            return Err(BmsError::TrainingDivergence { last_finite_loss: last });
        }
        self.last_finite_loss = loss;
        Ok((loss, grad_norm))
    }

    /// Refreshes the buffer from the current control and runs `M` gradient steps.
    pub fn outer_step_once(&mut self) -> Result<LogRecord> {
        let start = Instant::now();
        let frozen = self.field.snapshot();
        let k = self.config.buffer_size;
        let partial = self.config.reuse_fraction > 0.0 && self.buffer.len() == k;
        let n_new = if partial { ((k as f64) * (1.0 - self.config.reuse_fraction)).ceil() as usize } else { k };
        let traj = simulate_forward(
            &frozen,
            &self.config.prior,
            &self.schedule,
            self.config.t_cut,
            self.config.em_steps,
            n_new,
            &mut self.rng,
            false,
        )?;
        let (x0, x_end) = build_coupling(&self.coupling, traj.x0(), traj.x_end(), &self.config.prior, &mut self.rng);
        if partial {
            self.buffer.push_batch(x0.view(), x_end.view())?;
        } else {
            self.buffer.refresh(x0.view(), x_end.view())?;
        }
        let (mut loss_sum, mut norm_sum) = (0.0, 0.0);
        for _ in 0..self.config.inner_steps {
            let (loss, norm) = self.gradient_step(Some(&frozen))?;
            loss_sum += loss;
            norm_sum += norm;
        }
        let m = self.config.inner_steps as f64;
        self.outer_step += 1;
        let record = LogRecord {
            outer_step: self.outer_step,
            loss: loss_sum / m,
            grad_norm: norm_sum / m,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        self.log.records.push(record);
        Ok(record)
    }

    /// Runs outer steps until `I` is reached. On error the last checkpoint
    /// on disk is left in place.
    pub fn run(&mut self, policy: Option<&CheckpointPolicy>) -> Result<()> {
        while self.outer_step < self.config.outer_steps {
            self.outer_step_once()?;
            if let Some(p) = policy {
                if p.every > 0 && self.outer_step % p.every == 0 && self.outer_step < self.config.outer_steps {
                    self.save(p)?;
                }
            }
        }
        if let Some(p) = policy {
            self.save(p)?;
        }
        Ok(())
    }

    pub fn save(&self, policy: &CheckpointPolicy) -> Result<PathBuf> {
        fs::create_dir_all(&policy.dir)?;
        let ck = self.to_checkpoint()?;
        let path = policy.dir.join(format!("step_{:06}.ckpt", self.outer_step));
        ck.save(&path)?;
        ck.save(&policy.latest())?;
        Ok(path)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::from_field(&self.field, &self.schedule, self.config.seed);
        ck.header.training = Some(TrainingState {
            outer_step: self.outer_step,
            adam_step: self.opt.step,
            rng_seed: self.config.seed,
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
            last_finite_loss: self.last_finite_loss,
        });
        ck.header.config = Some(serde_json::to_value(&self.config)?);
        ck.push_section("adam_m", self.opt.m.clone());
        ck.push_section("adam_v", self.opt.v.clone());
        ck.push_section("buffer_x0", self.buffer.x0_raw().to_vec());
        ck.push_section("buffer_x_end", self.buffer.x_end_raw().to_vec());
        ck.push_section("buffer_meta", vec![self.buffer.len() as f64, self.buffer.cursor() as f64]);
        ck.push_section("log", self.log.flatten());
        if let (CvSchedule::Learned(net), Some(opt)) = (&self.cv, &self.cv_opt) {
            ck.push_section("cv_params", net.network().params().to_vec());
            ck.push_section("cv_adam_m", opt.m.clone());
            ck.push_section("cv_adam_v", opt.v.clone());
        }
        Ok(ck)
    }

    /// Restores a trainer saved by [`Trainer::to_checkpoint`]; continuing it
    /// reproduces the uninterrupted run.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let missing = |what: &str| BmsError::Checkpoint(format!("missing {what}"));
        let config: TrainConfig =
            serde_json::from_value(ck.header.config.clone().ok_or_else(|| missing("training configuration"))?)?;
        let state = ck.header.training.clone().ok_or_else(|| missing("training state"))?;
        let mut tr = Trainer::new(config)?;
        let field = ck.field()?;
        if field.network().architecture() != tr.field.network().architecture() || field.heads() != 1 {
            return Err(BmsError::Checkpoint("field architecture does not match the configuration".into()));
        }
        tr.field = field;
        let section = |name: &str| ck.section(name).ok_or_else(|| missing(name)).map(|s| s.to_vec());
        tr.opt.m = section("adam_m")?;
        tr.opt.v = section("adam_v")?;
        tr.opt.step = state.adam_step;
        if tr.opt.m.len() != tr.field.params().len() || tr.opt.v.len() != tr.field.params().len() {
            return Err(BmsError::Checkpoint("optimizer state length mismatch".into()));
        }
        let meta = section("buffer_meta")?;
        if meta.len() != 2 {
            return Err(BmsError::Checkpoint("malformed buffer metadata".into()));
        }
        tr.buffer.restore(&section("buffer_x0")?, &section("buffer_x_end")?, meta[0] as usize, meta[1] as usize)?;
        tr.log = RunLog::unflatten(&section("log")?);
        if let (CvSchedule::Learned(net), Some(opt)) = (&mut tr.cv, &mut tr.cv_opt) {
            let params = section("cv_params")?;
            if params.len() != net.params_mut().len() {
                return Err(BmsError::Checkpoint("control-variate network size mismatch".into()));
            }
            net.params_mut().copy_from_slice(&params);
            opt.m = section("cv_adam_m")?;
            opt.v = section("cv_adam_v")?;
            opt.step = state.adam_step;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(state.rng_seed);
        rng.set_stream(state.rng_stream);
        let pos: u128 = state.rng_word_pos.parse().map_err(|_| BmsError::Checkpoint("bad RNG position".into()))?;
        rng.set_word_pos(pos);
        tr.rng = rng;
        tr.outer_step = state.outer_step;
        tr.last_finite_loss = state.last_finite_loss;
        Ok(tr)
    }

    pub fn resume(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn gaussian_pair(config: &TrainConfig, schedule: &NoiseSchedule) -> Result<GaussianPair> {
    let (mu0, s0) = match &config.prior {
        PriorDistribution::Gaussian { mean, scale } => (mean.clone(), *scale),
        PriorDistribution::Dirac { point } => (point.clone(), 0.0),
    };
    match &config.target {
        TargetSpec::Gaussian { mean, scale, .. } => GaussianPair::new(mu0, s0, mean.clone(), *scale, schedule.clone()),
        _ => Err(BmsError::Config("the Gaussian-oracle corrector needs a Gaussian target".into())),
    }
}

/// Runs `config.outer_steps` outer iterations from scratch.
pub fn train(config: TrainConfig, policy: Option<&CheckpointPolicy>) -> Result<(DriftField, RunLog)> {
    let mut tr = Trainer::new(config)?;
    tr.run(policy)?;
    Ok(tr.into_parts())
}

//! Path-dependent regression targets `ξ` for each endpoint coupling, and the
//! control-variate weights that mix the two boundary-score estimators.
//!
//! Every `ξ` is returned as a control: the controlled SDE is
//! `dX = σ(t) ξ dt + σ(t) dB`, so `ξ` carries one factor of `σ(t)` and the
//! drift carries another.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::drift_model::{Activation, Architecture, Mlp};
use crate::error::{BmsError, Result};
use crate::schedules::NoiseSchedule;
use crate::targets::{PriorDistribution, Target};

/// `x ↦ ∇ log f(x)`.
pub type ScoreFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
/// `(x0, xT) ↦ ∇ log Π(x0, xT)` with respect to one of the endpoints.
pub type JointScoreFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;

/// Endpoint coupling `Π*_{0,T}` whose reciprocal class is matched.
#[derive(Clone)]
pub enum CouplingKind {
    /// Independent coupling `p_prior ⊗ p_target`.
    BmsIndependent,
    /// Schrödinger half bridge: prior redrawn, terminal state kept.
    AsReverseConditional,
    /// Schrödinger bridge with an injected corrector `∇ log φ̂_T`.
    SbJoint { corrector: ScoreFn },
    /// Any coupling with known joint scores.
    GeneralAnalytic { joint_score_0: JointScoreFn, joint_score_end: JointScoreFn },
}

impl CouplingKind {
    pub fn name(&self) -> &'static str {
        match self {
            CouplingKind::BmsIndependent => "bms",
            CouplingKind::AsReverseConditional => "as",
            CouplingKind::SbJoint { .. } => "sb",
            CouplingKind::GeneralAnalytic { .. } => "general",
        }
    }
}

impl fmt::Debug for CouplingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Tiny scalar network `NN^φ(t)` over the Fourier time embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct CvNet {
    net: Mlp,
}

impl CvNet {
    /// Two hidden layers of the given width; the output layer starts at zero.
    pub fn new<R: Rng + ?Sized>(width: usize, n_freq: usize, horizon: f64, rng: &mut R) -> Self {
        let arch = Architecture {
            state_dim: 0,
            out_dim: 1,
            hidden_width: width,
            hidden_layers: 2,
            n_freq,
            horizon,
            activation: Activation::Silu,
        };
        CvNet { net: Mlp::new(arch, rng) }
    }

    pub fn from_mlp(net: Mlp) -> Result<Self> {
        let a = net.architecture();
        if a.state_dim != 0 || a.out_dim != 1 {
            return Err(BmsError::InvalidParameter("control-variate net maps time to one scalar".into()));
        }
        Ok(CvNet { net })
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    fn empty(n: usize) -> ArrayView2<'static, f64> {
        ArrayView2::from_shape((n, 0), &[]).expect("empty view")
    }

    pub fn values(&self, ts: &[f64]) -> Vec<f64> {
        self.net.forward(Self::empty(ts.len()), ts).into_raw_vec()
    }

    pub fn value(&self, t: f64) -> f64 {
        self.values(&[t])[0]
    }

    /// Parameter gradient of `Σ_i grad[i] · NN(ts[i])`.
    pub fn backward(&self, ts: &[f64], grad: &[f64]) -> Vec<f64> {
        let (_, cache) = self.net.forward_with_cache(Self::empty(ts.len()), ts);
        let g = Array2::from_shape_vec((ts.len(), 1), grad.to_vec()).expect("one gradient per time");
        self.net.backward(&cache, &g).0
    }
}

/// Control-variate weight `c(t)` between the two boundary-score estimators.
#[derive(Clone)]
pub enum CvSchedule {
    /// `c = γ`.
    FixedGamma,
    FixedFunction(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    /// `c = γ + γ(1−γ) NN^φ(t)`.
    Learned(CvNet),
}

impl fmt::Debug for CvSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CvSchedule::FixedGamma => f.write_str("FixedGamma"),
            CvSchedule::FixedFunction(_) => f.write_str("FixedFunction"),
            CvSchedule::Learned(_) => f.write_str("Learned"),
        }
    }
}

/// Config-level choice of the control-variate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CvSpec {
    Gamma,
    Constant { c: f64 },
    Learned { width: usize },
}

impl CvSpec {
    pub fn build<R: Rng + ?Sized>(&self, schedule: &NoiseSchedule, n_freq: usize, rng: &mut R) -> CvSchedule {
        match *self {
            CvSpec::Gamma => CvSchedule::FixedGamma,
            CvSpec::Constant { c } => CvSchedule::FixedFunction(Arc::new(move |_| c)),
            CvSpec::Learned { width } => CvSchedule::Learned(CvNet::new(width, n_freq, schedule.horizon(), rng)),
        }
    }
}

/// `(a0, aT)` multiplying the boundary scores: `a0 = (1−c)/(1−γ)`, `aT = c/γ`.
pub fn cv_coefficients(cv: &CvSchedule, s: &NoiseSchedule, t: f64) -> Result<(f64, f64)> {
    match cv {
        CvSchedule::FixedGamma => {
            s.gamma_at(t)?;
            Ok((1.0, 1.0))
        }
        CvSchedule::Learned(net) => Ok(learned_coefficients(s.gamma_at(t)?, net.value(t))),
        CvSchedule::FixedFunction(c) => {
            let gamma = s.gamma_at(t)?;
            let one_minus = s.kappa_remaining_at(t)? / s.kappa_total();
            if gamma <= 0.0 || one_minus <= 0.0 {
                return Err(BmsError::SingularTime { t });
            }
            let c = c(t);
            if !(0.0..=1.0).contains(&c) {
                return Err(BmsError::InvalidParameter(format!("control variate c({t}) = {c} outside [0, 1]")));
            }
            Ok(((1.0 - c) / one_minus, c / gamma))
        }
    }
}

/// `(1 − γ·nn, 1 + (1−γ)·nn)`.
pub fn learned_coefficients(gamma: f64, nn: f64) -> (f64, f64) {
    (1.0 - gamma * nn, 1.0 + (1.0 - gamma) * nn)
}

fn combine(sigma: f64, a0: f64, s0: &[f64], a_end: f64, s_end: &[f64], x0: &[f64], xt: &[f64], kappa: f64) -> Vec<f64> {
    (0..s0.len()).map(|i| sigma * (a0 * s0[i] + a_end * s_end[i] - (x0[i] - xt[i]) / kappa)).collect()
}

fn guard_kappa(s: &NoiseSchedule, t: f64) -> Result<f64> {
    let kappa = s.kappa_at(t)?;
    if kappa <= 0.0 {
        return Err(BmsError::SingularTime { t });
    }
    Ok(kappa)
}

/// `σ [a0 ∇log p_prior(x0) + aT ∇log p_target(xT) − (x0 − xt)/κ(t)]`.
#[allow(clippy::too_many_arguments)]
pub fn xi_bms(
    prior: &PriorDistribution,
    target: &dyn Target,
    s: &NoiseSchedule,
    cv: &CvSchedule,
    x0: &[f64],
    x_end: &[f64],
    xt: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    let s0 = prior.score(x0)?;
    let s_end = target.score_vec(x_end);
    let (a0, a_end) = cv_coefficients(cv, s, t)?;
    let kappa = guard_kappa(s, t)?;
    Ok(combine(s.sigma_at(t)?, a0, &s0, a_end, &s_end, x0, xt, kappa))
}

/// Terminal marginal `P_T = N(mean, var I)` of the uncontrolled process.
/// A Gaussian prior adds its variance to `κ(T)`.
pub fn reference_terminal(prior: &PriorDistribution, s: &NoiseSchedule) -> (Vec<f64>, f64) {
    (prior.mean().to_vec(), prior.variance() + s.kappa_total())
}

/// Score of the reference terminal marginal, the memoryless corrector.
pub fn memoryless_corrector(prior: &PriorDistribution, s: &NoiseSchedule) -> ScoreFn {
    let (mean, var) = reference_terminal(prior, s);
    Arc::new(move |y: &[f64]| y.iter().zip(&mean).map(|(a, m)| (m - a) / var).collect())
}

/// `σ ∇ log(ρ_target / P_T)(xT)` for the half bridge.
pub fn xi_as(terminal: (&[f64], f64), target: &dyn Target, s: &NoiseSchedule, x_end: &[f64], t: f64) -> Result<Vec<f64>> {
    let (mean, var) = terminal;
    let sigma = s.sigma_at(t)?;
    let score = target.score_vec(x_end);
    Ok(score.iter().zip(x_end).zip(mean).map(|((g, y), m)| sigma * (g - (m - y) / var)).collect())
}

/// `σ [∇log ρ_target(xT) − ∇log φ̂_T(xT)]`.
pub fn xi_sb(corrector: Option<&ScoreFn>, target: &dyn Target, s: &NoiseSchedule, x_end: &[f64], t: f64) -> Result<Vec<f64>> {
    let corrector = corrector.ok_or_else(|| BmsError::Config("the Schrödinger-bridge coupling needs a corrector".into()))?;
    let sigma = s.sigma_at(t)?;
    let score = target.score_vec(x_end);
    let corr = corrector(x_end);
    if corr.len() != score.len() {
        return Err(BmsError::SizeMismatch("corrector output dimension".into()));
    }
    Ok(score.iter().zip(&corr).map(|(g, c)| sigma * (g - c)).collect())
}

/// `σ [a0 ∇_{x0} log Π(x0, xT) + aT ∇_{xT} log Π(x0, xT) − (x0 − xt)/κ(t)]`.
#[allow(clippy::too_many_arguments)]
pub fn xi_general(
    joint_score_0: &JointScoreFn,
    joint_score_end: &JointScoreFn,
    s: &NoiseSchedule,
    cv: &CvSchedule,
    x0: &[f64],
    x_end: &[f64],
    xt: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    let s0 = joint_score_0(x0, x_end);
    let s_end = joint_score_end(x0, x_end);
    let (a0, a_end) = cv_coefficients(cv, s, t)?;
    let kappa = guard_kappa(s, t)?;
    Ok(combine(s.sigma_at(t)?, a0, &s0, a_end, &s_end, x0, xt, kappa))
}

/// `σ [((1−c)γ/(1−γ)) ∇_{x0} log Π + c ∇_{xT} log Π − (x0 − xT)/κ(T)]`, free of `1/κ(t)`.
pub fn xi_alternative(
    joint_score_0: &JointScoreFn,
    joint_score_end: &JointScoreFn,
    s: &NoiseSchedule,
    cv: &CvSchedule,
    x0: &[f64],
    x_end: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    let gamma = s.gamma_at(t)?;
    let (a0, a_end) = match cv {
        // c = γ needs no division, so it stays defined down to t = 0.
        CvSchedule::FixedGamma => (1.0, 1.0),
        _ => cv_coefficients(cv, s, t)?,
    };
    // (1−c)γ/(1−γ) = a0 γ and c = aT γ
    let s0 = joint_score_0(x0, x_end);
    let s_end = joint_score_end(x0, x_end);
    let sigma = s.sigma_at(t)?;
    let k = s.kappa_total();
    Ok((0..x0.len())
        .map(|i| sigma * (a0 * gamma * s0[i] + a_end * gamma * s_end[i] - (x0[i] - x_end[i]) / k))
        .collect())
}

/// Independent-coupling joint scores `(∇log p_prior(x0), ∇log ρ_target(xT))`.
pub fn independent_joint_scores(prior: PriorDistribution, target: Arc<dyn Target>) -> Result<(JointScoreFn, JointScoreFn)> {
    if matches!(prior, PriorDistribution::Dirac { .. }) {
        return Err(BmsError::UnsupportedCoupling(
            "independent coupling needs a prior score; use the half-bridge coupling for a Dirac prior".into(),
        ));
    }
    let s0: JointScoreFn = Arc::new(move |x0: &[f64], _: &[f64]| prior.score(x0).expect("Gaussian prior score"));
    let s_end: JointScoreFn = Arc::new(move |_: &[f64], y: &[f64]| target.score_vec(y));
    Ok((s0, s_end))
}

/// One sample `(x0, xT, xt)` drawn at a common time.
#[derive(Debug, Clone, PartialEq)]
pub struct CvSample {
    pub x0: Vec<f64>,
    pub x_end: Vec<f64>,
    pub xt: Vec<f64>,
}

/// Empirical optimal scalar control variate
/// `c* = [Var G0 − Cov(G0,GT) − Cov(G0,Gv) + Cov(GT,Gv)] / [Var G0 + Var GT − 2 Cov(G0,GT)]`
/// with `G0 = ∇_{x0} log Π/(1−γ)`, `GT = ∇_{xT} log Π/γ` and
/// `Gv = ∇_{xt} log P_{t|0}`. Variances are mean squared norms and
/// covariances mean inner products; `centered` subtracts batch means first.
pub fn optimal_scalar_cv(
    samples: &[CvSample],
    t: f64,
    joint_score_0: &JointScoreFn,
    joint_score_end: &JointScoreFn,
    s: &NoiseSchedule,
    centered: bool,
) -> Result<f64> {
    if samples.len() < 2 {
        return Err(BmsError::InvalidParameter("optimal control variate needs at least two samples".into()));
    }
    let gamma = s.gamma_at(t)?;
    let one_minus = s.kappa_remaining_at(t)? / s.kappa_total();
    let kappa = guard_kappa(s, t)?;
    if one_minus <= 0.0 {
        return Err(BmsError::SingularTime { t });
    }
    let mut g0 = Vec::with_capacity(samples.len());
    let mut g_end = Vec::with_capacity(samples.len());
    let mut gv = Vec::with_capacity(samples.len());
    for smp in samples {
        g0.push(joint_score_0(&smp.x0, &smp.x_end).into_iter().map(|v| v / one_minus).collect::<Vec<_>>());
        g_end.push(joint_score_end(&smp.x0, &smp.x_end).into_iter().map(|v| v / gamma).collect::<Vec<_>>());
        gv.push(smp.x0.iter().zip(&smp.xt).map(|(a, b)| (a - b) / kappa).collect::<Vec<_>>());
    }
    if centered {
        for g in [&mut g0, &mut g_end, &mut gv] {
            center(g);
        }
    }
    let cov = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        a.iter().zip(b).map(|(u, v)| u.iter().zip(v).map(|(p, q)| p * q).sum::<f64>()).sum::<f64>() / a.len() as f64
    };
    let v0 = cov(&g0, &g0);
    let c0t = cov(&g0, &g_end);
    let num = v0 - c0t - cov(&g0, &gv) + cov(&g_end, &gv);
    let den = v0 + cov(&g_end, &g_end) - 2.0 * c0t;
    if den.abs() <= 1e-14 * (v0.abs() + 1e-300) || den == 0.0 {
        return Err(BmsError::DegenerateVariate);
    }
    Ok(num / den)
}

fn center(rows: &mut [Vec<f64>]) {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    for r in rows.iter_mut() {
        for (v, m) in r.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
}

//! Identity checks run by `bms oracle-check`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{simple_regression, CheckResult, GaussianPair};
use crate::couplings::{
    cv_coefficients, independent_joint_scores, memoryless_corrector, reference_terminal, xi_alternative, xi_as, xi_bms,
    xi_sb, CvNet, CvSchedule,
};
use crate::error::Result;
use crate::reference::{sample_bridge, score_bridge, score_t_given_0, score_T_given_t};
use crate::schedules::NoiseSchedule;

/// A registered check: name, tolerance description and runner.
pub struct OracleCheck {
    pub name: &'static str,
    pub tolerance: &'static str,
    run: fn(&Fault) -> Result<(bool, String)>,
}

/// Optional κ corruption applied to every schedule a check builds.
#[derive(Debug, Clone, Copy, Default)]
pub struct Fault {
    pub kappa_scale: Option<f64>,
}

impl Fault {
    fn apply(&self, mut s: NoiseSchedule) -> NoiseSchedule {
        if let Some(scale) = self.kappa_scale {
            s.inject_kappa_fault(scale);
        }
        s
    }

    fn schedules(&self) -> Vec<NoiseSchedule> {
        [
            NoiseSchedule::constant(2.5).unwrap(),
            NoiseSchedule::geometric(0.5, 1.5).unwrap(),
            NoiseSchedule::edm_ve(0.001, 6.0, 3.0).unwrap(),
        ]
        .into_iter()
        .map(|s| self.apply(s))
        .collect()
    }

    fn pair(&self) -> GaussianPair {
        let s = self.apply(NoiseSchedule::constant(1.5).unwrap());
        GaussianPair::new(vec![0.5, -1.0], 0.8, vec![2.0, 1.0], 1.3, s).unwrap()
    }
}

pub fn registered_checks() -> Vec<OracleCheck> {
    vec![
        OracleCheck { name: "score-decomposition", tolerance: "1e-10 (scaled by |score| above 1)", run: score_decomposition },
        OracleCheck { name: "nelson", tolerance: "1e-10 abs on 50x50 grid", run: nelson },
        OracleCheck { name: "target-score-identity", tolerance: "4 SE, c in {gamma, 0.3, learned-zero}", run: tsi },
        OracleCheck { name: "markov-fixed-point", tolerance: "3 SE at 5 times", run: fixed_point },
        OracleCheck { name: "alternative-xi", tolerance: "4 SE", run: alternative },
        OracleCheck { name: "half-bridge-is-bridge", tolerance: "bitwise", run: half_bridge },
        OracleCheck { name: "sb-dirac-limit", tolerance: "1e-12", run: dirac_limit },
    ]
}

/// Runs every registered check.
pub fn run_all(fault: Fault) -> Vec<CheckResult> {
    registered_checks()
        .into_iter()
        .map(|c| {
            let (passed, observed) = match (c.run)(&fault) {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            CheckResult { name: c.name, tolerance: c.tolerance.to_string(), observed, passed }
        })
        .collect()
}

fn score_decomposition(fault: &Fault) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut endpoints_ok = true;
    for s in fault.schedules() {
        endpoints_ok &= s.gamma_at(0.0)? == 0.0 && (s.gamma_at(s.horizon())? - 1.0).abs() < 1e-12;
        for _ in 0..3334 {
            let t = rng.gen_range(0.01..0.99) * s.horizon();
            let x0: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let xe: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let xt: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let k = s.kappa_total();
            let g = s.gamma_at(t)?;
            let h = s.kappa_remaining_at(t)? / k;
            let b = score_bridge(&s, &x0, &xe, &xt, t)?;
            let fwd = score_T_given_t(&s, &xt, &xe, t)?;
            let back = score_t_given_0(&s, &x0, &xt, t)?;
            for i in 0..2 {
                let e1 = (fwd[i] - ((xe[i] - x0[i]) / k + g * b[i])).abs() / fwd[i].abs().max(1.0);
                let e2 = (back[i] - (h * b[i] - (xe[i] - x0[i]) / k)).abs() / back[i].abs().max(1.0);
                worst = worst.max(e1).max(e2);
            }
        }
    }
    Ok((endpoints_ok && worst <= 1e-10, format!("max err {worst:.2e}, gamma endpoints {}", if endpoints_ok { "ok" } else { "wrong" })))
}

fn nelson(fault: &Fault) -> Result<(bool, String)> {
    let p = fault.pair();
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let t = (i as f64 + 0.5) / 50.0 * p.schedule.horizon();
        let sigma = p.schedule.sigma_at(t)?;
        for j in 0..50 {
            let x = [-5.0 + 10.0 * j as f64 / 49.0, 1.0 - 0.1 * j as f64];
            let u = p.optimal_drift(&x, t)?;
            let v = p.backward_drift(&x, t)?;
            let s = p.marginal_score(&x, t)?;
            for k in 0..2 {
                worst = worst.max((u[k] + v[k] - sigma * s[k]).abs());
            }
        }
    }
    Ok((worst <= 1e-10, format!("max err {worst:.2e}")))
}

/// Regresses `target(x0, xT, xt)` on `xt` per coordinate and returns the
/// largest z-score against the expected line.
fn regression_z<F>(p: &GaussianPair, t: f64, n: usize, seed: u64, expected: (f64, Vec<f64>), target: F) -> Result<f64>
where
    F: Fn(&[f64], &[f64], &[f64]) -> Result<Vec<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = p.dim();
    let mut xs = vec![Vec::with_capacity(n); d];
    let mut ys = vec![Vec::with_capacity(n); d];
    for _ in 0..n {
        let (x0, xe) = p.sample_endpoints(&mut rng);
        let xt = sample_bridge(&p.schedule, &x0, &xe, t, &mut rng)?;
        let y = target(&x0, &xe, &xt)?;
        for i in 0..d {
            xs[i].push(xt[i]);
            ys[i].push(y[i]);
        }
    }
    let mut worst: f64 = 0.0;
    for i in 0..d {
        let r = simple_regression(&xs[i], &ys[i]);
        worst = worst.max((r.slope - expected.0).abs() / r.se_slope);
        worst = worst.max((r.intercept - expected.1[i]).abs() / r.se_intercept);
    }
    Ok(worst)
}

fn cv_variants(p: &GaussianPair) -> Vec<(&'static str, CvSchedule)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    vec![
        ("gamma", CvSchedule::FixedGamma),
        ("0.3", CvSchedule::FixedFunction(Arc::new(|_| 0.3))),
        ("learned-zero", CvSchedule::Learned(CvNet::new(16, 4, p.schedule.horizon(), &mut rng))),
    ]
}

fn tsi(fault: &Fault) -> Result<(bool, String)> {
    let p = fault.pair();
    let (prior, target) = (p.prior(), p.target());
    let mut worst: f64 = 0.0;
    for (k, (_, cv)) in cv_variants(&p).into_iter().enumerate() {
        for (j, &t) in [0.3, 0.7].iter().enumerate() {
            let t = t * p.schedule.horizon();
            let (m, v) = p.marginal(t)?;
            let expected = (-1.0 / v, m.iter().map(|mi| mi / v).collect());
            let (a0, a_end) = cv_coefficients(&cv, &p.schedule, t)?;
            let z = regression_z(&p, t, 100_000, 10 + (2 * k + j) as u64, expected, |x0, xe, _| {
                let s0 = prior.score(x0)?;
                let se = crate::targets::Target::score_vec(&target, xe);
                Ok((0..x0.len()).map(|i| a0 * s0[i] + a_end * se[i]).collect())
            })?;
            worst = worst.max(z);
        }
    }
    Ok((worst <= 4.0, format!("max |z| {worst:.2}")))
}

fn fixed_point(fault: &Fault) -> Result<(bool, String)> {
    let p = fault.pair();
    let (prior, target) = (p.prior(), p.target());
    let mut worst: f64 = 0.0;
    for (j, &t) in [0.1, 0.3, 0.5, 0.7, 0.9].iter().enumerate() {
        let t = t * p.schedule.horizon();
        let z = regression_z(&p, t, 50_000, 20 + j as u64, p.optimal_drift_coefficients(t)?, |x0, xe, xt| {
            xi_bms(&prior, &target, &p.schedule, &CvSchedule::FixedGamma, x0, xe, xt, t)
        })?;
        worst = worst.max(z);
    }
    Ok((worst <= 3.0, format!("max |z| {worst:.2}")))
}

fn alternative(fault: &Fault) -> Result<(bool, String)> {
    let p = fault.pair();
    let (j0, je) = independent_joint_scores(p.prior(), Arc::new(p.target()))?;
    let cv = CvSchedule::FixedFunction(Arc::new(|_| 0.3));
    let mut worst: f64 = 0.0;
    for (j, &t) in [0.25, 0.75].iter().enumerate() {
        let t = t * p.schedule.horizon();
        let z = regression_z(&p, t, 100_000, 30 + j as u64, p.optimal_drift_coefficients(t)?, |x0, xe, _| {
            xi_alternative(&j0, &je, &p.schedule, &cv, x0, xe, t)
        })?;
        worst = worst.max(z);
    }
    Ok((worst <= 4.0, format!("max |z| {worst:.2}")))
}

fn half_bridge(fault: &Fault) -> Result<(bool, String)> {
    let p = fault.pair();
    let prior = p.prior();
    let target = p.target();
    let corr = memoryless_corrector(&prior, &p.schedule);
    let (mean, var) = reference_terminal(&prior, &p.schedule);
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let y: Vec<f64> = (0..p.dim()).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let t = rng.gen_range(0.0..1.0) * p.schedule.horizon();
        let a = xi_as((&mean, var), &target, &p.schedule, &y, t)?;
        let b = xi_sb(Some(&corr), &target, &p.schedule, &y, t)?;
        mismatches += a.iter().zip(&b).filter(|(u, v)| u.to_bits() != v.to_bits()).count();
    }
    Ok((mismatches == 0, format!("{mismatches} mismatching values")))
}

fn dirac_limit(fault: &Fault) -> Result<(bool, String)> {
    let s = fault.apply(NoiseSchedule::constant(1.5).unwrap());
    let k = s.kappa_total();
    let p = GaussianPair::new(vec![0.0], 0.0, vec![1.0], 0.7, s)?;
    let corr = p.sb_corrector();
    let worst = [-2.0f64, -0.5, 0.0, 1.0, 3.0].iter().map(|&y| (corr(&[y])[0] + y / k).abs()).fold(0.0, f64::max);
    Ok((worst <= 1e-12, format!("max err {worst:.2e}")))
}

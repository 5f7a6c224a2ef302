//! The twelve acceptance criteria, one test each. Every test writes a
//! `PASS`/`FAIL` line to stderr before asserting.

mod common;

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use bms::couplings::{
    cv_coefficients, independent_joint_scores, memoryless_corrector, optimal_scalar_cv, reference_terminal, xi_as, xi_bms,
    xi_sb, CvNet, CvSample, CvSchedule,
};
use bms::drift_model::{ControlField, FnField};
use bms::evaluate::{mode_tvd, path_log_weight, pf_ode_log_likelihood, sliced_tvd, snis_estimate, wasserstein2};
use bms::oracle::GaussianPair;
use bms::reference::{score_bridge, score_t_given_0, score_T_given_t};
use bms::schedules::NoiseSchedule;
use bms::targets::{gaussian_target, PriorDistribution, Target, TargetSpec};
use bms::trainer::{damped_loss, simulate_forward, train, NetworkSpec, TrainConfig};
use common::{fit_line, line_z, median, Oracle};
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn report(n: u32, name: &str, passed: bool, detail: &str, start: Instant) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    let secs = start.elapsed().as_secs_f64();
    let _ = writeln!(std::io::stderr(), "{verdict} criterion {n:>2} {name}: {detail} [{secs:.1} s]");
}

fn schedules() -> Vec<NoiseSchedule> {
    vec![
        NoiseSchedule::constant(2.5).unwrap(),
        NoiseSchedule::geometric(0.5, 1.5).unwrap(),
        NoiseSchedule::edm_ve(0.001, 6.0, 3.0).unwrap(),
    ]
}

/// `∫_0^t σ²` by composite Simpson.
fn kappa_quadrature(s: &NoiseSchedule, t: f64) -> f64 {
    let n = 20_000;
    let h = t / n as f64;
    let f = |u: f64| s.sigma_at(u).unwrap().powi(2);
    let mut acc = f(0.0) + f(t);
    for k in 1..n {
        acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h);
    }
    acc * h / 3.0
}

#[test]
fn criterion_01_score_decompositions() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_scaled, mut worst_abs, mut worst_closed, mut worst_kappa): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for s in schedules() {
        let horizon = s.horizon();
        for &f in &[0.1, 0.5, 0.9] {
            let t = f * horizon;
            worst_kappa = worst_kappa.max((s.kappa_at(t).unwrap() - kappa_quadrature(&s, t)).abs() / s.kappa_total());
        }
        for _ in 0..3334 {
            let t = rng.gen_range(0.01..0.99) * horizon;
            let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect() };
            let (x0, x1, xt) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
            let k = s.kappa_total();
            let kt = s.kappa_at(t).unwrap();
            let kr = s.kappa_remaining_at(t).unwrap();
            let g = kt / k;
            let b = score_bridge(&s, &x0, &x1, &xt, t).unwrap();
            let fwd = score_T_given_t(&s, &xt, &x1, t).unwrap();
            let back = score_t_given_0(&s, &x0, &xt, t).unwrap();
            for i in 0..2 {
                let bridge_var = kt * kr / k;
                let closed = [
                    (b[i], -(xt[i] - x0[i] - g * (x1[i] - x0[i])) / bridge_var),
                    (fwd[i], (x1[i] - xt[i]) / kr),
                    (back[i], -(xt[i] - x0[i]) / kt),
                ];
                for (lib, exact) in closed {
                    worst_closed = worst_closed.max((lib - exact).abs() / exact.abs().max(1.0));
                }
                let e1 = fwd[i] - ((x1[i] - x0[i]) / k + g * b[i]);
                let e2 = back[i] - (kr / k * b[i] - (x1[i] - x0[i]) / k);
                worst_abs = worst_abs.max(e1.abs()).max(e2.abs());
                worst_scaled = worst_scaled.max(e1.abs() / fwd[i].abs().max(1.0)).max(e2.abs() / back[i].abs().max(1.0));
            }
        }
    }
    let passed = worst_scaled <= 1e-10 && worst_closed <= 1e-10 && worst_kappa <= 1e-8;
    let detail = format!(
        "decomposition err {worst_scaled:.2e} (abs {worst_abs:.2e}), closed-form err {worst_closed:.2e}, κ quadrature rel err {worst_kappa:.2e}; tol 1e-10 relative to max(|score|, 1)"
    );
    report(1, "score decompositions", passed, &detail, start);
    assert!(passed, "{detail}");
}

#[test]
fn criterion_02_nelson() {
    let start = Instant::now();
    let s = NoiseSchedule::constant(1.5).unwrap();
    let o = Oracle::new(2, s.clone());
    let p = GaussianPair::new(o.mu0.clone(), o.s0, o.mu1.clone(), o.s1, s).unwrap();
    let (mut worst_nelson, mut worst_match): (f64, f64) = (0.0, 0.0);
    for i in 0..50 {
        let t = (i as f64 + 0.5) / 50.0 * p.schedule.horizon();
        let sigma = p.schedule.sigma_at(t).unwrap();
        for j in 0..50 {
            let x = [-5.0 + 10.0 * j as f64 / 49.0, 1.0 - 0.1 * j as f64];
            let u = p.optimal_drift(&x, t).unwrap();
            let v = p.backward_drift(&x, t).unwrap();
            let score = o.score(&x, t);
            let (u_ref, v_ref) = (o.u_star(&x, t), o.v_star(&x, t));
            let (us, ui) = o.u_coefficients(t);
            let (vs, vi) = o.v_coefficients(t);
            for k in 0..2 {
                worst_nelson = worst_nelson.max((u[k] + v[k] - sigma * score[k]).abs());
                worst_match = worst_match.max((u[k] - u_ref[k]).abs()).max((v[k] - v_ref[k]).abs());
                worst_match = worst_match.max((us * x[k] + ui[k] - u_ref[k]).abs()).max((vs * x[k] + vi[k] - v_ref[k]).abs());
            }
        }
    }
    let passed = worst_nelson <= 1e-10 && worst_match <= 1e-10;
    let detail = format!("|u*+v*−σ∇log Π| max {worst_nelson:.2e}, drifts vs conditioning {worst_match:.2e}; tol 1e-10");
    report(2, "Nelson relation", passed, &detail, start);
    assert!(passed, "{detail}");
}

#[test]
fn criterion_03_target_score_identity() {
    let start = Instant::now();
    let s = NoiseSchedule::geometric(0.5, 1.5).unwrap();
    let t = 0.4 * s.horizon();
    let mut cv_rng = ChaCha8Rng::seed_from_u64(0);
    let cvs = [
        ("gamma", CvSchedule::FixedGamma),
        ("0.3", CvSchedule::FixedFunction(Arc::new(|_| 0.3))),
        ("learned-zero", CvSchedule::Learned(CvNet::new(16, 4, s.horizon(), &mut cv_rng))),
    ];
    let coefs: Vec<(f64, f64)> = cvs.iter().map(|(_, cv)| cv_coefficients(cv, &s, t).unwrap()).collect();
    let n = 1_000_000;
    let mut worst: f64 = 0.0;
    for d in 1..=3 {
        let o = Oracle::new(d, s.clone());
        let prior = PriorDistribution::gaussian(o.mu0.clone(), o.s0).unwrap();
        let target = gaussian_target(o.mu1.clone(), o.s1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(300 + d as u64);
        let mut xs = vec![Vec::with_capacity(n); d];
        let mut ys = vec![vec![Vec::with_capacity(n); d]; cvs.len()];
        for _ in 0..n {
            let (x0, x1, xt) = o.draw(t, &mut rng);
            let s0 = prior.score(&x0).unwrap();
            let s1 = target.score_vec(&x1);
            for i in 0..d {
                xs[i].push(xt[i]);
                for (k, (a0, a1)) in coefs.iter().enumerate() {
                    ys[k][i].push(a0 * s0[i] + a1 * s1[i]);
                }
            }
        }
        let v = o.parts(t).v;
        let m = o.mean(t);
        for k in 0..cvs.len() {
            for i in 0..d {
                worst = worst.max(line_z(&fit_line(&xs[i], &ys[k][i]), -1.0 / v, m[i] / v));
            }
        }
    }
    let passed = worst <= 4.0;
    let detail = format!("max |z| {worst:.2} over c in {{gamma, 0.3, learned-zero}}, d = 1..3, 1e6 samples each; tol 4 SE");
    report(3, "generalized target score identity", passed, &detail, start);
    assert!(passed, "{detail}");
}

#[test]
fn criterion_04_markov_fixed_point() {
    let start = Instant::now();
    let s = NoiseSchedule::constant(1.5).unwrap();
    let o = Oracle::new(2, s.clone());
    let prior = PriorDistribution::gaussian(o.mu0.clone(), o.s0).unwrap();
    let target = gaussian_target(o.mu1.clone(), o.s1).unwrap();
    let n = 50_000;
    let mut worst: f64 = 0.0;
    for (j, &f) in [0.1, 0.3, 0.5, 0.7, 0.9].iter().enumerate() {
        let t = f * s.horizon();
        let mut rng = ChaCha8Rng::seed_from_u64(400 + j as u64);
        let mut xs = vec![Vec::with_capacity(n); 2];
        let mut ys = vec![Vec::with_capacity(n); 2];
        for _ in 0..n {
            let (x0, x1, xt) = o.draw(t, &mut rng);
            let xi = xi_bms(&prior, &target, &s, &CvSchedule::FixedGamma, &x0, &x1, &xt, t).unwrap();
            for i in 0..2 {
                xs[i].push(xt[i]);
                ys[i].push(xi[i]);
            }
        }
        let (slope, icpt) = o.u_coefficients(t);
        for i in 0..2 {
            worst = worst.max(line_z(&fit_line(&xs[i], &ys[i]), slope, icpt[i]));
        }
    }
    let passed = worst <= 3.0;
    let detail = format!("max |z| of regressed u* coefficients {worst:.2} at 5 times; tol 3 SE");
    report(4, "Markovian projection fixed point", passed, &detail, start);
    assert!(passed, "{detail}");
}

#[test]
fn criterion_05_damped_minimizer() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let (b, d, f) = (200, 2, 3);
    let phi = Array2::from_shape_fn((b, f), |(_, k)| if k == 0 { 1.0 } else { rng.gen_range(-2.0..2.0) });
    let xi = Array2::from_shape_fn((b, d), |(r, j)| (phi[[r, 1]] * (j + 1) as f64).sin() + phi[[r, 2]].powi(2) + rng.gen::<f64>());
    let w_i = Array2::from_shape_fn((d, f), |_| rng.gen_range(-1.0..1.0));
    let ui = phi.dot(&w_i.t());
    let weights: Vec<f64> = (0..b).map(|_| rng.gen_range(0.2..2.0)).collect();

    // Weighted least-squares projection of ξ onto the features.
    let phi_m = DMatrix::from_fn(b, f, |r, k| phi[[r, k]]);
    let wdiag = DMatrix::from_diagonal(&DVector::from_vec(weights.clone()));
    let normal = phi_m.transpose() * &wdiag * &phi_m;
    let xi_m = DMatrix::from_fn(b, d, |r, j| xi[[r, j]]);
    let w_phi = normal.clone().lu().solve(&(phi_m.transpose() * &wdiag * xi_m)).unwrap();

    let mut worst: f64 = 0.0;
    for &eta in &[0.0, 1.0, 10.0] {
        let alpha = 1.0 / (1.0 + eta);
        // The loss is quadratic in W, so its gradient is affine and the
        // stationarity system is assembled from gradient evaluations.
        let grad_w = |w: &DVector<f64>| -> DVector<f64> {
            let wm = Array2::from_shape_fn((d, f), |(j, k)| w[j * f + k]);
            let u = phi.dot(&wm.t());
            let (_, g) = damped_loss(&u, &xi, Some(&ui), &weights, eta);
            let gw = g.t().dot(&phi);
            DVector::from_fn(d * f, |idx, _| gw[[idx / f, idx % f]])
        };
        let g0 = grad_w(&DVector::zeros(d * f));
        let mut h = DMatrix::zeros(d * f, d * f);
        for c in 0..d * f {
            let mut e = DVector::zeros(d * f);
            e[c] = 1.0;
            h.set_column(c, &(grad_w(&e) - &g0));
        }
        let w_star = h.lu().solve(&(-g0)).unwrap();
        for j in 0..d {
            for k in 0..f {
                let expected = alpha * w_phi[(k, j)] + (1.0 - alpha) * w_i[[j, k]];
                worst = worst.max((w_star[j * f + k] - expected).abs());
            }
        }
    }
    let passed = worst <= 1e-6;
    let detail = format!("max coefficient error {worst:.2e} for eta in {{0, 1, 10}}; tol 1e-6");
    report(5, "damped variational characterization", passed, &detail, start);
    assert!(passed, "{detail}");
}

/// Probabilists' Gauss–Hermite rule with three nodes.
const GH3: [(f64, f64); 3] = [(-1.732_050_807_568_877_2, 1.0 / 6.0), (0.0, 2.0 / 3.0), (1.732_050_807_568_877_2, 1.0 / 6.0)];

#[test]
fn criterion_06_half_bridge_and_sb() {
    let start = Instant::now();
    let s = NoiseSchedule::constant(1.5).unwrap();
    let o = Oracle::new(2, s.clone());
    let prior = PriorDistribution::gaussian(o.mu0.clone(), o.s0).unwrap();
    let target = gaussian_target(o.mu1.clone(), o.s1).unwrap();
    let corr = memoryless_corrector(&prior, &s);
    let (mean, var) = reference_terminal(&prior, &s);
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let y: Vec<f64> = (0..2).map(|_| rng.gen_range(-6.0..6.0)).collect();
        let t = rng.gen_range(0.0..1.0) * s.horizon();
        let a = xi_as((&mean, var), &target, &s, &y, t).unwrap();
        let b = xi_sb(Some(&corr), &target, &s, &y, t).unwrap();
        mismatches += a.iter().zip(&b).filter(|(p, q)| p.to_bits() != q.to_bits()).count();
    }

    let pair = GaussianPair::new(o.mu0.clone(), o.s0, o.mu1.clone(), o.s1, s.clone()).unwrap();
    let sb_corr = pair.sb_corrector();
    let tgt = target.clone();
    let sched = s.clone();
    let field = FnField::new(2, move |x: &[f64], t: f64| {
        let (m, v) = pair.sb_terminal_given(x, t).unwrap();
        let sd = v.sqrt();
        let mut out = vec![0.0; 2];
        for &(z0, w0) in &GH3 {
            for &(z1, w1) in &GH3 {
                let y = [m[0] + sd * z0, m[1] + sd * z1];
                let xi = xi_sb(Some(&sb_corr), &tgt, &sched, &y, t).unwrap();
                for k in 0..2 {
                    out[k] += w0 * w1 * xi[k];
                }
            }
        }
        out
    });
    let n = 20_000;
    let traj = simulate_forward(&field, &prior, &s, 0.0, 200, n, &mut ChaCha8Rng::seed_from_u64(601), false).unwrap();
    let x = traj.x_end();
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        let col = x.column(i);
        let m = col.mean().unwrap();
        let v = col.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        let target_var = o.s1 * o.s1;
        worst = worst.max((m - o.mu1[i]).abs() / (v / n as f64).sqrt());
        worst = worst.max((v - target_var).abs() / (v * (2.0 / (n - 1) as f64).sqrt()));
    }
    let passed = mismatches == 0 && worst <= 4.0;
    let detail = format!("{mismatches} bitwise mismatches in 10^4 half-bridge targets; SB terminal moments max |z| {worst:.2}; tol bitwise and 4 SE");
    report(6, "half-bridge / Schrödinger-bridge consistency", passed, &detail, start);
    assert!(passed, "{detail}");
}

fn linear_field(d: usize, coefs: impl Fn(f64) -> (f64, Vec<f64>) + Send + Sync) -> impl ControlField {
    FnField::new(d, move |x: &[f64], t: f64| {
        let (slope, icpt) = coefs(t);
        x.iter().zip(icpt).map(|(a, c)| slope * a + c).collect()
    })
}

#[test]
fn criterion_07_importance_log_z() {
    let start = Instant::now();
    let s = NoiseSchedule::constant(1.5).unwrap();
    let o = Arc::new(Oracle::new(2, s.clone()));
    let log_z = 1.7;
    let prior = PriorDistribution::gaussian(o.mu0.clone(), o.s0).unwrap();
    let target = gaussian_target(o.mu1.clone(), o.s1).unwrap().with_log_z(log_z);
    let (ou, ov) = (o.clone(), o.clone());
    let u = linear_field(2, move |t| ou.u_coefficients(t));
    let v = linear_field(2, move |t| ov.v_coefficients(t));
    let traj = simulate_forward(&u, &prior, &s, 0.0, 500, 4000, &mut ChaCha8Rng::seed_from_u64(700), true).unwrap();
    let lw = path_log_weight(&u, &v, &traj, &prior, &target, &s).unwrap();
    let est = snis_estimate(&lw, &vec![0.0; lw.len()]).unwrap();
    let mean = lw.iter().sum::<f64>() / lw.len() as f64;
    let var = lw.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (lw.len() - 1) as f64;
    let z = (est.log_z - log_z).abs() / est.log_z_se;
    let passed = z <= 3.0;
    let detail = format!(
        "log Z estimate {:.5} vs {log_z} (SE {:.2e}, |z| {z:.2}), Var(log w) {var:.2e}, ESS {:.0}/4000; tol 3 SE",
        est.log_z, est.log_z_se, est.ess
    );
    report(7, "importance-sampling log Z", passed, &detail, start);
    assert!(passed, "{detail}");
}

#[test]
fn criterion_08_pf_ode_likelihood() {
    let start = Instant::now();
    let s = NoiseSchedule::constant(1.5).unwrap();
    let o = Arc::new(Oracle::new(2, s.clone()));
    let prior = PriorDistribution::gaussian(o.mu0.clone(), o.s0).unwrap();
    let target = gaussian_target(o.mu1.clone(), o.s1).unwrap();
    let ou = o.clone();
    let u = linear_field(2, move |t| ou.u_coefficients(t));
    let os = o.clone();
    let score = linear_field(2, move |t| {
        let p = os.parts(t);
        let m = os.mean(t);
        (-p.sigma / p.v, m.iter().map(|mi| p.sigma * mi / p.v).collect())
    });
    let mut rng = ChaCha8Rng::seed_from_u64(800);
    let x0 = Array2::from_shape_fn((500, 2), |(_, j)| o.mu0[j] + o.s0 * rng.sample::<f64, _>(StandardNormal));
    let (x_end, logp) = pf_ode_log_likelihood(&u, &score, x0.view(), &prior, &s, 0.0, 500).unwrap();
    let rms = (x_end
        .rows()
        .into_iter()
        .zip(&logp)
        .map(|(x, lp)| (lp - target.log_rho(&x.to_vec())).powi(2))
        .sum::<f64>()
        / logp.len() as f64)
        .sqrt();
    let passed = rms <= 0.02;
    let detail = format!("terminal log-density RMS error {rms:.2e} nats over 500 points, 500 RK4 steps; tol 0.02");
    report(8, "probability-flow likelihood", passed, &detail, start);
    assert!(passed, "{detail}");
}

fn gmm_config(dim: usize, modes: usize, outer: u64, eta: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        prior: PriorDistribution::standard(dim, 1.0).unwrap(),
        target: TargetSpec::Gmm { modes, dim, box_halfwidth: 4.0, seed: 0, component_var: 1.0 },
        outer_steps: outer,
        inner_steps: 200,
        buffer_size: 2048,
        batch_size: 256,
        em_steps: 50,
        eta,
        lr: 1e-3,
        seed,
        network: NetworkSpec { width: 64, layers: 3, n_freq: 8 },
        ..TrainConfig::default()
    }
}

/// Trains and returns `n` terminal samples, or `None` if training failed.
fn train_and_sample(cfg: &TrainConfig, n: usize) -> Option<Array2<f64>> {
    let (field, _) = train(cfg.clone(), None).ok()?;
    let s = cfg.noise_schedule().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed + 1000);
    let traj = simulate_forward(&field, &cfg.prior, &s, cfg.t_cut, cfg.em_steps, n, &mut rng, false).ok()?;
    Some(traj.x_end().clone())
}

#[test]
fn criterion_09_gmm_end_to_end() {
    let start = Instant::now();
    let (mut modes, mut slices) = (Vec::new(), Vec::new());
    for seed in 0..3 {
        let cfg = gmm_config(2, 4, 100, 3.0, seed);
        let target = cfg.target.build().unwrap();
        let exact = target.as_target().sample(2000, &mut ChaCha8Rng::seed_from_u64(900 + seed)).unwrap();
        match train_and_sample(&cfg, 2000) {
            Some(x) => {
                modes.push(mode_tvd(target.as_gmm().unwrap(), x.view()).unwrap());
                slices.push(sliced_tvd(x.view(), exact.view(), 100, 50, seed).unwrap());
            }
            None => {
                modes.push(1.0);
                slices.push(1.0);
            }
        }
    }
    let (m, sl) = (median(modes.clone()), median(slices.clone()));
    let passed = m <= 0.2 && sl <= 0.15;
    let detail = format!(
        "median mode TVD {m:.3} (seeds {modes:.3?}), median sliced TVD {sl:.3} (seeds {slices:.3?}); tol 0.2 and 0.15"
    );
    report(9, "desk-scale GMM d=2 K=4", passed, &detail, start);
    assert!(passed, "{detail}");
}

#[test]
fn criterion_10_damping_direction() {
    let start = Instant::now();
    let best = |eta: f64| -> (f64, Vec<f64>) {
        let values: Vec<f64> = (0..3)
            .map(|seed| {
                let cfg = gmm_config(16, 8, 50, eta, seed);
                let target = cfg.target.build().unwrap();
                let exact = target.as_target().sample(2000, &mut ChaCha8Rng::seed_from_u64(1000 + seed)).unwrap();
                match train_and_sample(&cfg, 2000) {
                    Some(x) => sliced_tvd(x.view(), exact.view(), 100, 50, seed).unwrap(),
                    None => 1.0,
                }
            })
            .collect();
        (values.iter().copied().fold(f64::INFINITY, f64::min), values)
    };
    let (damped, dv) = best(10.0);
    let (plain, pv) = best(0.0);
    let passed = damped <= plain;
    let detail = format!("best sliced TVD eta=10: {damped:.3} {dv:.3?}, eta=0: {plain:.3} {pv:.3?}; require eta=10 <= eta=0");
    report(10, "damping ablation direction (GMM d=16 K=8)", passed, &detail, start);
    assert!(passed, "{detail}");
}

#[test]
fn criterion_11_optimal_control_variate() {
    let start = Instant::now();
    let s = NoiseSchedule::constant(1.5).unwrap();
    let o = Oracle::new(2, s.clone());
    let prior = PriorDistribution::gaussian(o.mu0.clone(), o.s0).unwrap();
    let target = gaussian_target(o.mu1.clone(), o.s1).unwrap();
    let (j0, j1) = independent_joint_scores(prior.clone(), Arc::new(target.clone())).unwrap();
    let zero = CvSchedule::FixedFunction(Arc::new(|_| 0.0));
    let one = CvSchedule::FixedFunction(Arc::new(|_| 1.0));
    let mut worst: f64 = 0.0;
    let mut found = Vec::new();
    for (j, &f) in [0.2, 0.5, 0.8].iter().enumerate() {
        let t = f * s.horizon();
        let mut rng = ChaCha8Rng::seed_from_u64(1100 + j as u64);
        let samples: Vec<CvSample> = (0..20_000)
            .map(|_| {
                let (x0, x_end, xt) = o.draw(t, &mut rng);
                CvSample { x0, x_end, xt }
            })
            .collect();
        let c_star = optimal_scalar_cv(&samples, t, &j0, &j1, &s, true).unwrap();
        // ξ^c is affine in c, so two evaluations give the whole family.
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for smp in &samples {
            let x0 = xi_bms(&prior, &target, &s, &zero, &smp.x0, &smp.x_end, &smp.xt, t).unwrap();
            let x1 = xi_bms(&prior, &target, &s, &one, &smp.x0, &smp.x_end, &smp.xt, t).unwrap();
            a.push(x0.clone());
            b.push(x1.iter().zip(&x0).map(|(p, q)| p - q).collect::<Vec<f64>>());
        }
        let pooled_var = |c: f64| -> f64 {
            (0..2)
                .map(|i| {
                    let vals: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p[i] + c * q[i]).collect();
                    let m = vals.iter().sum::<f64>() / vals.len() as f64;
                    vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64
                })
                .sum()
        };
        let grid = (0..=4000).map(|k| -1.0 + k as f64 * 1e-3);
        let c_grid = grid.map(|c| (c, pooled_var(c))).min_by(|p, q| p.1.total_cmp(&q.1)).unwrap().0;
        worst = worst.max((c_star - c_grid).abs());
        found.push((c_star, c_grid));
    }
    let passed = worst <= 0.02;
    let detail = format!("(c*, grid argmin) at t = 0.2, 0.5, 0.8: {found:.3?}; max gap {worst:.4}; tol 0.02");
    report(11, "optimal control variate", passed, &detail, start);
    assert!(passed, "{detail}");
}

/// Smallest assignment cost over all permutations, each summed in
/// ascending order of its terms.
fn brute_force_w2(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let cost = |i: usize, j: usize| (0..a.ncols()).map(|k| (a[[i, k]] - b[[j, k]]) * (a[[i, k]] - b[[j, k]])).sum::<f64>();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    // Heap's algorithm.
    let mut c = vec![0usize; n];
    let mut eval = |p: &[usize]| {
        let mut terms: Vec<f64> = p.iter().enumerate().map(|(i, &j)| cost(i, j)).collect();
        terms.sort_by(f64::total_cmp);
        best = best.min(terms.iter().sum());
    };
    eval(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            eval(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    (best / n as f64).sqrt()
}

#[test]
fn criterion_12_exact_w2() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1200);
    let mut mismatches = 0;
    let mut largest_gap: f64 = 0.0;
    for _ in 0..50 {
        let a = Array2::from_shape_fn((8, 2), |_| rng.gen_range(-3.0..3.0));
        let b = Array2::from_shape_fn((8, 2), |_| rng.gen_range(-3.0..3.0));
        let exact = brute_force_w2(&a, &b);
        let solved = wasserstein2(a.view(), b.view()).unwrap();
        if exact != solved {
            mismatches += 1;
            largest_gap = largest_gap.max((exact - solved).abs());
        }
    }
    let passed = mismatches == 0;
    let detail = format!("{mismatches}/50 instances differ from the 8! brute force (largest gap {largest_gap:.1e}); tol exact");
    report(12, "exact W2 vs brute force", passed, &detail, start);
    assert!(passed, "{detail}");
}

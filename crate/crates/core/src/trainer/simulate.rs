use ndarray::{s, Array2};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::drift_model::ControlField;
use crate::error::{BmsError, Result};
use crate::schedules::NoiseSchedule;
use crate::targets::PriorDistribution;

/// Paths simulated per random stream; results do not depend on the worker count.
pub const SIM_CHUNK: usize = 256;

/// Worker threads for simulation fan-out, from `BMS_WORKERS` (default 1).
pub fn worker_count() -> usize {
    std::env::var("BMS_WORKERS").ok().and_then(|v| v.parse().ok()).filter(|n: &usize| *n > 0).unwrap_or(1)
}

/// Discretized paths of the controlled SDE. When not recorded, `states`
/// holds only the first and last state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Array2<f64>>,
    pub recorded: bool,
}

impl Trajectory {
    pub fn x0(&self) -> &Array2<f64> {
        &self.states[0]
    }

    pub fn x_end(&self) -> &Array2<f64> {
        self.states.last().expect("at least one state")
    }

    pub fn n_paths(&self) -> usize {
        self.states[0].nrows()
    }

    /// `X_{k+1} − X_k` for a recorded trajectory.
    pub fn increment(&self, k: usize) -> Array2<f64> {
        assert!(self.recorded, "increments need a recorded trajectory");
        &self.states[k + 1] - &self.states[k]
    }
}

/// Uniform Euler–Maruyama grid `t_start = t_0 < … < t_n = T`.
pub fn time_grid(s: &NoiseSchedule, t_start: f64, n_steps: usize) -> Vec<f64> {
    let horizon = s.horizon();
    let dt = (horizon - t_start) / n_steps as f64;
    (0..=n_steps).map(|k| if k == n_steps { horizon } else { t_start + k as f64 * dt }).collect()
}

/// Runs `f(chunk_index, rows)` for consecutive chunks of `SIM_CHUNK` rows on
/// [`worker_count`] threads and returns the results in chunk order.
pub fn par_chunks<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, std::ops::Range<usize>) -> Result<T> + Sync,
{
    let n_chunks = n.div_ceil(SIM_CHUNK);
    let range = |c: usize| c * SIM_CHUNK..((c + 1) * SIM_CHUNK).min(n);
    let workers = worker_count().min(n_chunks.max(1));
    if workers <= 1 {
        return (0..n_chunks).map(|c| f(c, range(c))).collect();
    }
    let mut slots: Vec<Option<Result<T>>> = (0..n_chunks).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let f = &f;
                scope.spawn(move || {
                    (w..n_chunks).step_by(workers).map(|c| (c, f(c, range(c)))).collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (c, r) in h.join().expect("simulation worker panicked") {
                slots[c] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every chunk ran")).collect()
}

/// Simulates `X_{k+1} = X_k + σ(t_k) u(X_k, t_k) Δt + σ(t_k) √Δt ε_k` from
/// prior draws at `t_start` to `T`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_forward(
    field: &dyn ControlField,
    prior: &PriorDistribution,
    s: &NoiseSchedule,
    t_start: f64,
    n_steps: usize,
    batch: usize,
    rng: &mut dyn RngCore,
    record_path: bool,
) -> Result<Trajectory> {
    if n_steps == 0 {
        return Err(BmsError::InvalidParameter("simulation needs at least one step".into()));
    }
    let d = prior.dim();
    if field.dim() != d {
        return Err(BmsError::SizeMismatch(format!("field dimension {} vs prior dimension {d}", field.dim())));
    }
    let times = time_grid(s, t_start, n_steps);
    let seed = rng.next_u64();
    let chunks = par_chunks(batch, |c, rows| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        simulate_chunk(field, prior, s, &times, rows.len(), &mut rng, record_path)
    })?;
    let n_states = if record_path { n_steps + 1 } else { 2 };
    let states = (0..n_states)
        .map(|k| {
            let mut out = Array2::zeros((batch, d));
            let mut offset = 0;
            for chunk in &chunks {
                let m = chunk[k].nrows();
                out.slice_mut(s![offset..offset + m, ..]).assign(&chunk[k]);
                offset += m;
            }
            out
        })
        .collect();
    Ok(Trajectory { times, states, recorded: record_path })
}

fn simulate_chunk(
    field: &dyn ControlField,
    prior: &PriorDistribution,
    s: &NoiseSchedule,
    times: &[f64],
    n: usize,
    rng: &mut ChaCha8Rng,
    record_path: bool,
) -> Result<Vec<Array2<f64>>> {
    let d = prior.dim();
    let mut x = Array2::zeros((n, d));
    for mut row in x.rows_mut() {
        prior.sample_into(rng, row.as_slice_mut().expect("contiguous"));
    }
    let mut states = vec![x.clone()];
    for k in 0..times.len() - 1 {
        let (t, dt) = (times[k], times[k + 1] - times[k]);
        let sigma = s.sigma_at(t)?;
        let u = field.eval_batch(x.view(), &vec![t; n])?;
        let noise_scale = sigma * dt.sqrt();
        for (xv, uv) in x.iter_mut().zip(u.iter()) {
            let eps: f64 = rng.sample(StandardNormal);
            *xv += sigma * uv * dt + noise_scale * eps;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(BmsError::Divergence { step: k + 1 });
        }
        if record_path {
            states.push(x.clone());
        }
    }
    if !record_path {
        states.push(x);
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift_model::{FnField, ZeroField};
    use crate::oracle::GaussianPair;

    #[test]
    fn brownian_terminal_variance() {
        let s = NoiseSchedule::constant(1.5).unwrap();
        let prior = PriorDistribution::dirac(vec![0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let traj = simulate_forward(&ZeroField { dim: 1 }, &prior, &s, 0.0, 20, n, &mut rng, false).unwrap();
        let var = traj.x_end().iter().map(|v| v * v).sum::<f64>() / n as f64;
        let k = s.kappa_total();
        assert!((var - k).abs() < 4.0 * k * (2.0 / n as f64).sqrt(), "{var} vs {k}");
    }

    #[test]
    fn driftless_mean_is_prior_mean() {
        let s = NoiseSchedule::geometric(0.5, 1.5).unwrap();
        let prior = PriorDistribution::gaussian(vec![1.0, -2.0], 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 50_000;
        let traj = simulate_forward(&ZeroField { dim: 2 }, &prior, &s, 1e-3, 10, n, &mut rng, false).unwrap();
        let sd = (0.25 + s.kappa_remaining_at(1e-3).unwrap()).sqrt();
        for j in 0..2 {
            let m = traj.x_end().column(j).mean().unwrap();
            assert!((m - prior.mean()[j]).abs() < 4.0 * sd / (n as f64).sqrt());
        }
    }

    #[test]
    fn oracle_drift_reaches_target() {
        let p = GaussianPair::new(vec![0.0], 1.0, vec![2.0], 0.5, NoiseSchedule::constant(1.0).unwrap()).unwrap();
        let q = p.clone();
        let field = FnField::new(1, move |x: &[f64], t: f64| {
            let (slope, icpt) = q.optimal_drift_coefficients(t).unwrap();
            vec![slope * x[0] + icpt[0]]
        });
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20_000;
        let traj = simulate_forward(&field, &p.prior(), &p.schedule, 0.0, 200, n, &mut rng, false).unwrap();
        let xs = traj.x_end().column(0).to_vec();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 2.0).abs() < 4.0 * 0.5 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 0.25).abs() < 4.0 * 0.25 * (2.0 / n as f64).sqrt(), "var {var}");
    }

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let s = NoiseSchedule::constant(1.0).unwrap();
        let prior = PriorDistribution::standard(2, 1.0).unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            simulate_forward(&ZeroField { dim: 2 }, &prior, &s, 0.0, 5, 700, &mut rng, true).unwrap()
        };
        let a = run();
        std::env::set_var("BMS_WORKERS", "3");
        let b = run();
        std::env::remove_var("BMS_WORKERS");
        assert_eq!(a, b);
        assert_eq!(a.states.len(), 6);
    }

    #[test]
    fn divergence_is_reported() {
        let s = NoiseSchedule::constant(1.0).unwrap();
        let prior = PriorDistribution::standard(1, 1.0).unwrap();
        let field = FnField::new(1, |_: &[f64], _| vec![f64::INFINITY]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = simulate_forward(&field, &prior, &s, 0.0, 5, 10, &mut rng, false);
        assert!(matches!(r, Err(BmsError::Divergence { step: 1 })));
    }
}

//! Closed forms written independently of the library, for integration tests.

#![allow(dead_code)]

use bms::schedules::NoiseSchedule;
use rand::Rng;
use rand_distr::StandardNormal;

/// Independent endpoints `X0 ~ N(mu0, s0²)`, `XT ~ N(mu1, s1²)` joined by
/// the reference bridge; all quantities per coordinate.
pub struct Oracle {
    pub mu0: Vec<f64>,
    pub s0: f64,
    pub mu1: Vec<f64>,
    pub s1: f64,
    pub s: NoiseSchedule,
}

pub struct Parts {
    pub sigma: f64,
    pub kappa_t: f64,
    pub kappa_rem: f64,
    pub kappa: f64,
    pub g: f64,
    pub h: f64,
    pub v: f64,
}

impl Oracle {
    pub fn new(d: usize, s: NoiseSchedule) -> Self {
        let mu0 = [0.5, -1.0, 0.3, 0.0][..d].to_vec();
        let mu1 = [2.0, 1.0, -0.5, 1.5][..d].to_vec();
        Oracle { mu0, s0: 0.8, mu1, s1: 1.3, s }
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    pub fn parts(&self, t: f64) -> Parts {
        let kappa = self.s.kappa_total();
        let kappa_t = self.s.kappa_at(t).unwrap();
        let kappa_rem = self.s.kappa_remaining_at(t).unwrap();
        let (g, h) = (kappa_t / kappa, kappa_rem / kappa);
        let v = h * h * self.s0 * self.s0 + g * g * self.s1 * self.s1 + kappa_t * kappa_rem / kappa;
        Parts { sigma: self.s.sigma_at(t).unwrap(), kappa_t, kappa_rem, kappa, g, h, v }
    }

    pub fn mean(&self, t: f64) -> Vec<f64> {
        let p = self.parts(t);
        self.mu0.iter().zip(&self.mu1).map(|(a, b)| p.h * a + p.g * b).collect()
    }

    /// `∇ log Π_t(x)`.
    pub fn score(&self, x: &[f64], t: f64) -> Vec<f64> {
        let p = self.parts(t);
        x.iter().zip(self.mean(t)).map(|(xi, m)| (m - xi) / p.v).collect()
    }

    /// `σ E[(XT − x)/κ(t,T) | X_t = x]` by Gaussian conditioning.
    pub fn u_star(&self, x: &[f64], t: f64) -> Vec<f64> {
        let p = self.parts(t);
        let m = self.mean(t);
        (0..x.len())
            .map(|i| {
                let e1 = self.mu1[i] + p.g * self.s1 * self.s1 * (x[i] - m[i]) / p.v;
                p.sigma * (e1 - x[i]) / p.kappa_rem
            })
            .collect()
    }

    /// `σ E[−(x − X0)/κ(t) | X_t = x]` by Gaussian conditioning.
    pub fn v_star(&self, x: &[f64], t: f64) -> Vec<f64> {
        let p = self.parts(t);
        let m = self.mean(t);
        (0..x.len())
            .map(|i| {
                let e0 = self.mu0[i] + p.h * self.s0 * self.s0 * (x[i] - m[i]) / p.v;
                -p.sigma * (x[i] - e0) / p.kappa_t
            })
            .collect()
    }

    /// `(slope, intercepts)` of `u*`, with the `κ(t,T)` factor cancelled so
    /// that `t = T` is regular.
    pub fn u_coefficients(&self, t: f64) -> (f64, Vec<f64>) {
        let p = self.parts(t);
        let (a, b) = (self.s0 * self.s0, self.s1 * self.s1);
        let scale = p.sigma / (p.kappa * p.v);
        let slope = scale * (p.g * b - p.h * a - p.kappa * p.g);
        let icpt = self.mu0.iter().zip(&self.mu1).map(|(m0, m1)| scale * (m1 * (p.h * a + p.kappa * p.g) - p.g * b * m0)).collect();
        (slope, icpt)
    }

    /// `(slope, intercepts)` of `v*`, with the `κ(t)` factor cancelled.
    pub fn v_coefficients(&self, t: f64) -> (f64, Vec<f64>) {
        let p = self.parts(t);
        let (a, b) = (self.s0 * self.s0, self.s1 * self.s1);
        let scale = p.sigma / (p.kappa * p.v);
        let slope = scale * (p.h * a - p.g * b - p.kappa * p.h);
        let icpt = self.mu0.iter().zip(&self.mu1).map(|(m0, m1)| scale * (m0 * (p.g * b + p.kappa * p.h) - p.h * a * m1)).collect();
        (slope, icpt)
    }

    /// Draws `(x0, xT, xt)` with `xt` from the reference bridge.
    pub fn draw<R: Rng>(&self, t: f64, rng: &mut R) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let p = self.parts(t);
        let bridge_sd = (p.kappa_t * p.kappa_rem / p.kappa).sqrt();
        let mut n = || rng.sample::<f64, _>(StandardNormal);
        let x0: Vec<f64> = self.mu0.iter().map(|m| m + self.s0 * n()).collect();
        let x1: Vec<f64> = self.mu1.iter().map(|m| m + self.s1 * n()).collect();
        let xt = (0..self.dim()).map(|i| p.h * x0[i] + p.g * x1[i] + bridge_sd * n()).collect();
        (x0, x1, xt)
    }
}

/// Least-squares line `y ≈ intercept + slope·x` with standard errors.
pub struct Line {
    pub intercept: f64,
    pub slope: f64,
    pub se_intercept: f64,
    pub se_slope: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Line {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let s2 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum::<f64>() / (n - 2.0);
    Line { intercept, slope, se_intercept: (s2 * (1.0 / n + mx * mx / sxx)).sqrt(), se_slope: (s2 / sxx).sqrt() }
}

/// Largest z-score of a fitted line against `(slope, intercept)`.
pub fn line_z(line: &Line, slope: f64, intercept: f64) -> f64 {
    ((line.slope - slope) / line.se_slope).abs().max(((line.intercept - intercept) / line.se_intercept).abs())
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

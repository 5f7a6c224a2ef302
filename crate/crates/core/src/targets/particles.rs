//! n-body particle energies: the 4-particle double well and Lennard-Jones clusters.

use super::Target;

pub const DW4_DIM: usize = 8;
const DW4_A: f64 = 0.0;
const DW4_B: f64 = -4.0;
const DW4_C: f64 = 0.9;

/// LJ energies above this are reported as clamped.
pub const LJ_ENERGY_CLAMP: f64 = 1e6;
/// Maximum Euclidean norm of an LJ score vector.
pub const LJ_SCORE_CLIP: f64 = 1e4;
pub const LJ_OSCILLATOR_SCALE: f64 = 1.0;

/// Pairwise distances `d_ij`, `i < j`, for a flattened `n × dim` configuration.
pub fn interatomic_distances(x: &[f64], spatial_dim: usize) -> Vec<f64> {
    let n = x.len() / spatial_dim;
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(distance(x, i, j, spatial_dim));
        }
    }
    out
}

fn distance(x: &[f64], i: usize, j: usize, dim: usize) -> f64 {
    (0..dim).map(|k| (x[i * dim + k] - x[j * dim + k]).powi(2)).sum::<f64>().sqrt()
}

/// Double-well energy of four particles in the plane, `τ = 1`.
pub fn dw4_energy(x: &[f64], d0: f64) -> f64 {
    assert_eq!(x.len(), DW4_DIM, "DW-4 expects a flattened 4x2 configuration");
    interatomic_distances(x, 2)
        .into_iter()
        .map(|d| {
            let r = d - d0;
            DW4_A * r + DW4_B * r * r + DW4_C * r.powi(4)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dw4Target {
    pub d0: f64,
}

impl Dw4Target {
    pub fn new(d0: f64) -> Self {
        Dw4Target { d0 }
    }
}

impl Target for Dw4Target {
    fn dim(&self) -> usize {
        DW4_DIM
    }

    fn log_rho(&self, x: &[f64]) -> f64 {
        -dw4_energy(x, self.d0)
    }

    fn score(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..4 {
            for j in i + 1..4 {
                let d = distance(x, i, j, 2);
                if d == 0.0 {
                    continue;
                }
                let r = d - self.d0;
                let de_dd = DW4_A + 2.0 * DW4_B * r + 4.0 * DW4_C * r.powi(3);
                for k in 0..2 {
                    let g = de_dd * (x[i * 2 + k] - x[j * 2 + k]) / d;
                    out[i * 2 + k] -= g;
                    out[j * 2 + k] += g;
                }
            }
        }
    }
}

/// Lennard-Jones energy with a center-of-mass oscillator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LjEnergy {
    /// Energy, clamped at [`LJ_ENERGY_CLAMP`].
    pub value: f64,
    /// Set when a pair coincides or the clamp was hit.
    pub singular: bool,
}

/// `E = Σ_{i<j} [(1/d)^12 − 2 (1/d)^6] + c_osc Σ_i ‖x_i − x_com‖²` with `r_m = ε = τ = 1`.
pub fn lj_energy(x: &[f64]) -> LjEnergy {
    assert_eq!(x.len() % 3, 0, "LJ expects a flattened n x 3 configuration");
    let n = x.len() / 3;
    let mut energy = 0.0;
    let mut singular = false;
    for i in 0..n {
        for j in i + 1..n {
            let d = distance(x, i, j, 3);
            if d == 0.0 {
                singular = true;
                continue;
            }
            let inv6 = d.powi(-6);
            energy += inv6 * inv6 - 2.0 * inv6;
        }
    }
    energy += LJ_OSCILLATOR_SCALE * oscillator(x, n);
    if singular || !(energy <= LJ_ENERGY_CLAMP) {
        return LjEnergy { value: LJ_ENERGY_CLAMP, singular: true };
    }
    LjEnergy { value: energy, singular: false }
}

fn center_of_mass(x: &[f64], n: usize) -> [f64; 3] {
    let mut com = [0.0; 3];
    for i in 0..n {
        for k in 0..3 {
            com[k] += x[i * 3 + k];
        }
    }
    com.map(|c| c / n as f64)
}

fn oscillator(x: &[f64], n: usize) -> f64 {
    let com = center_of_mass(x, n);
    (0..n).map(|i| (0..3).map(|k| (x[i * 3 + k] - com[k]).powi(2)).sum::<f64>()).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LjTarget {
    pub particles: usize,
}

impl LjTarget {
    pub fn new(particles: usize) -> Self {
        LjTarget { particles }
    }

    /// Unclipped `−∇E`, skipping coincident pairs.
    pub fn raw_score(&self, x: &[f64], out: &mut [f64]) {
        let n = self.particles;
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..n {
            for j in i + 1..n {
                let d = distance(x, i, j, 3);
                if d == 0.0 {
                    continue;
                }
                let de_dd = -12.0 * d.powi(-13) + 12.0 * d.powi(-7);
                for k in 0..3 {
                    let g = de_dd * (x[i * 3 + k] - x[j * 3 + k]) / d;
                    out[i * 3 + k] -= g;
                    out[j * 3 + k] += g;
                }
            }
        }
        let com = center_of_mass(x, n);
        for i in 0..n {
            for k in 0..3 {
                out[i * 3 + k] -= 2.0 * LJ_OSCILLATOR_SCALE * (x[i * 3 + k] - com[k]);
            }
        }
    }
}

impl Target for LjTarget {
    fn dim(&self) -> usize {
        3 * self.particles
    }

    fn log_rho(&self, x: &[f64]) -> f64 {
        -lj_energy(x).value
    }

    fn score(&self, x: &[f64], out: &mut [f64]) {
        self.raw_score(x, out);
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() {
            out.iter_mut().for_each(|o| *o = 0.0);
        } else if norm > LJ_SCORE_CLIP {
            let scale = LJ_SCORE_CLIP / norm;
            out.iter_mut().for_each(|o| *o *= scale);
        }
    }
}

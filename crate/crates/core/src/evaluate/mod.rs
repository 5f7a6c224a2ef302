//! Sample-quality metrics, path importance weights and probability-flow likelihoods.

mod assignment;
mod importance;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use assignment::{optimal_assignment, squared_distances, wasserstein2, W2_MAX_SAMPLES};
pub use importance::{path_log_weight, pf_ode_log_likelihood, snis_estimate, ImportanceEstimate, PF_ODE_MAX_DIM};

use crate::error::{BmsError, Result};
use crate::targets::{interatomic_distances, mode_assignment, BuiltTarget, GmmTarget, Target};

pub const SLICED_PROJECTIONS: usize = 100;
pub const SLICED_BINS: usize = 50;

/// `½ Σ_k |π_k − π̂_k|` with `π̂` the fraction of samples assigned to each mode.
pub fn mode_tvd(g: &GmmTarget, samples: ArrayView2<f64>) -> Result<f64> {
    if samples.nrows() == 0 {
        return Err(BmsError::InvalidParameter("mode TVD needs at least one sample".into()));
    }
    let mut counts = vec![0usize; g.modes()];
    for row in samples.rows() {
        counts[mode_assignment(g, &row.to_vec())] += 1;
    }
    let n = samples.nrows() as f64;
    Ok(0.5 * g.weights().iter().zip(&counts).map(|(p, &c)| (p - c as f64 / n).abs()).sum::<f64>())
}

/// Histogram TVD of two 1-D samples over a shared grid of `bins` cells
/// spanning their pooled range.
pub fn histogram_tvd(a: &[f64], b: &[f64], bins: usize) -> f64 {
    let (lo, hi) = a.iter().chain(b).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if hi <= lo {
        return 0.0;
    }
    let ha = histogram(a, lo, hi, bins);
    let hb = histogram(b, lo, hi, bins);
    0.5 * ha.iter().zip(&hb).map(|(p, q)| (p - q).abs()).sum::<f64>()
}

/// Normalized counts over `bins` equal cells of `[lo, hi]`.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let k = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        h[k] += 1.0;
    }
    let n = values.len().max(1) as f64;
    h.iter_mut().for_each(|c| *c /= n);
    h
}

/// Mean histogram TVD over `projections` random unit directions.
pub fn sliced_tvd(a: ArrayView2<f64>, b: ArrayView2<f64>, projections: usize, bins: usize, seed: u64) -> Result<f64> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(BmsError::InvalidParameter("sliced TVD needs nonempty sample sets".into()));
    }
    if a.ncols() != b.ncols() {
        return Err(BmsError::SizeMismatch("sample sets differ in dimension".into()));
    }
    let d = a.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..projections {
        let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|v| *v /= norm);
        let project = |m: ArrayView2<f64>| m.rows().into_iter().map(|r| r.dot(&ndarray::aview1(&dir))).collect::<Vec<_>>();
        total += histogram_tvd(&project(a), &project(b), bins);
    }
    Ok(total / projections as f64)
}

/// 1-D `W2` between the energies of two equal-size sample sets, by sorting.
pub fn energy_w2(target: &dyn Target, a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    let energies = |m: ArrayView2<f64>| {
        let mut e: Vec<f64> = m.rows().into_iter().map(|r| target.energy(&r.to_vec())).collect();
        e.sort_by(f64::total_cmp);
        e
    };
    quantile_w2(&energies(a), &energies(b))
}

/// `W2` between two equal-size sorted 1-D samples.
pub fn quantile_w2(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(BmsError::SizeMismatch(format!("quantile coupling needs equal sizes, got {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok((a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ModeTvd,
    SlicedTvd,
    W2,
    EnergyW2,
}

impl Metric {
    pub fn all() -> [Metric; 4] {
        [Metric::ModeTvd, Metric::SlicedTvd, Metric::W2, Metric::EnergyW2]
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::ModeTvd => "mode_tvd",
            Metric::SlicedTvd => "sliced_tvd",
            Metric::W2 => "w2",
            Metric::EnergyW2 => "energy_w2",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = BmsError;

    fn from_str(s: &str) -> Result<Self> {
        Metric::all()
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| BmsError::Config(format!("unknown metric {s:?}; expected one of mode_tvd, sliced_tvd, w2, energy_w2")))
    }
}

/// Metrics of one sample set; metrics not requested are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode_tvd: Option<f64>,
    pub sliced_tvd: Option<f64>,
    pub w2: Option<f64>,
    pub energy_w2: Option<f64>,
    pub n_samples: usize,
    pub seed: u64,
}

impl MetricsReport {
    /// `metric,value` rows for the metrics present.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (name, v) in [
            ("mode_tvd", self.mode_tvd),
            ("sliced_tvd", self.sliced_tvd),
            ("w2", self.w2),
            ("energy_w2", self.energy_w2),
        ] {
            if let Some(v) = v {
                out.push_str(&format!("{name},{v}\n"));
            }
        }
        out
    }
}

/// JSON schema of [`MetricsReport`].
pub const METRICS_REPORT_SCHEMA: &str = include_str!("../../schemas/metrics_report.schema.json");

/// Computes `metrics` for `model` samples. Distances use `reference` when
/// given, otherwise exact target samples drawn with `seed`.
pub fn compute_metrics(
    target: &BuiltTarget,
    model: ArrayView2<f64>,
    reference: Option<ArrayView2<f64>>,
    metrics: &[Metric],
    seed: u64,
) -> Result<MetricsReport> {
    let mut report =
        MetricsReport { mode_tvd: None, sliced_tvd: None, w2: None, energy_w2: None, n_samples: model.nrows(), seed };
    let needs_reference = metrics.iter().any(|m| *m != Metric::ModeTvd);
    let drawn: Option<Array2<f64>> = match reference {
        None if needs_reference => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            target.as_target().sample(model.nrows(), &mut rng)
        }
        _ => None,
    };
    let reference: Option<ArrayView2<f64>> = match (&reference, &drawn) {
        (Some(r), _) => Some(r.view()),
        (None, Some(d)) => Some(d.view()),
        (None, None) => None,
    };
    let require = |m: Metric| {
        reference.ok_or_else(|| {
            BmsError::MissingInput(format!(
                "{} needs reference samples; the target has no exact sampler, so pass a reference sample file",
                m.name()
            ))
        })
    };
    for &m in metrics {
        match m {
            Metric::ModeTvd => {
                let g = target
                    .as_gmm()
                    .ok_or_else(|| BmsError::Unsupported("mode TVD is defined for mixture targets only".into()))?;
                report.mode_tvd = Some(mode_tvd(g, model)?);
            }
            Metric::SlicedTvd => {
                report.sliced_tvd = Some(sliced_tvd(model, require(m)?, SLICED_PROJECTIONS, SLICED_BINS, seed)?)
            }
            Metric::W2 => report.w2 = Some(wasserstein2(model, require(m)?)?),
            Metric::EnergyW2 => report.energy_w2 = Some(energy_w2(target.as_target(), model, require(m)?)?),
        }
    }
    Ok(report)
}

/// Spatial dimension of a particle-system target.
pub fn spatial_dim(target: &BuiltTarget) -> Option<usize> {
    match target {
        BuiltTarget::Dw4(_) => Some(2),
        BuiltTarget::Lj(_) => Some(3),
        _ => None,
    }
}

/// Side-by-side density histograms as CSV `bin_lo,bin_hi,model,reference`.
pub fn histogram_csv(model: &[f64], reference: Option<&[f64]>, bins: usize) -> String {
    let pooled = model.iter().chain(reference.unwrap_or(&[]));
    let (lo, hi) = pooled.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let mut out = String::from("bin_lo,bin_hi,model,reference\n");
    if !(hi > lo) {
        return out;
    }
    let width = (hi - lo) / bins as f64;
    let hm = histogram(model, lo, hi, bins);
    let hr = reference.map(|r| histogram(r, lo, hi, bins));
    for k in 0..bins {
        let a = lo + k as f64 * width;
        let r = hr.as_ref().map(|h| format!("{}", h[k] / width)).unwrap_or_default();
        out.push_str(&format!("{a},{},{},{r}\n", a + width, hm[k] / width));
    }
    out
}

/// Energies of every row.
pub fn energies(target: &dyn Target, samples: ArrayView2<f64>) -> Vec<f64> {
    samples.rows().into_iter().map(|r| target.energy(&r.to_vec())).collect()
}

/// All pairwise interatomic distances of every row.
pub fn pair_distances(samples: ArrayView2<f64>, spatial_dim: usize) -> Vec<f64> {
    samples.rows().into_iter().flat_map(|r| interatomic_distances(&r.to_vec(), spatial_dim)).collect()
}

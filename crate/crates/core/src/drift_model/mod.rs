//! Parametric control fields `u_θ(x, t)` and their training machinery.

mod checkpoint;
mod fourier;
mod mlp;
mod optimizer;

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::error::{BmsError, Result};
use crate::schedules::NoiseSchedule;

pub use checkpoint::{Checkpoint, CheckpointHeader, TrainingState, CHECKPOINT_MAGIC};
pub use fourier::fourier_embed;
pub use mlp::{Activation, Architecture, ForwardCache, Mlp};
pub use optimizer::AdamW;

/// Step used by the default finite-difference divergence.
pub const FD_DIVERGENCE_STEP: f64 = 1e-4;

/// A vector field `(x, t) ↦ u(x, t)` over `R^dim`.
pub trait ControlField: Send + Sync {
    fn dim(&self) -> usize;

    /// Evaluates one row of `xs` per entry of `ts`.
    fn eval_batch(&self, xs: ArrayView2<f64>, ts: &[f64]) -> Result<Array2<f64>>;

    fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let xs = ArrayView2::from_shape((1, x.len()), x).map_err(|e| BmsError::SizeMismatch(e.to_string()))?;
        Ok(self.eval_batch(xs, &[t])?.into_raw_vec())
    }

    /// `∇·u(x, t)` by central differences.
    fn divergence(&self, x: &[f64], t: f64) -> Result<f64> {
        let d = x.len();
        let h = FD_DIVERGENCE_STEP;
        let mut xs = Array2::zeros((2 * d, d));
        for i in 0..d {
            for j in 0..d {
                xs[[2 * i, j]] = x[j];
                xs[[2 * i + 1, j]] = x[j];
            }
            xs[[2 * i, i]] += h;
            xs[[2 * i + 1, i]] -= h;
        }
        let out = self.eval_batch(xs.view(), &vec![t; 2 * d])?;
        Ok((0..d).map(|i| (out[[2 * i, i]] - out[[2 * i + 1, i]]) / (2.0 * h)).sum())
    }

    /// `∇·u` at every row of `xs`.
    fn divergence_rows(&self, xs: ArrayView2<f64>, ts: &[f64]) -> Result<Vec<f64>> {
        xs.rows().into_iter().zip(ts).map(|(x, &t)| self.divergence(&x.to_vec(), t)).collect()
    }
}

/// A field given by a closure over single points.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64], f64) -> Vec<f64> + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnField { dim, f }
    }
}

impl<F> ControlField for FnField<F>
where
    F: Fn(&[f64], f64) -> Vec<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_batch(&self, xs: ArrayView2<f64>, ts: &[f64]) -> Result<Array2<f64>> {
        check_batch(self.dim, xs, ts)?;
        let mut out = Array2::zeros((xs.nrows(), self.dim));
        for (i, row) in xs.rows().into_iter().enumerate() {
            let v = (self.f)(&row.to_vec(), ts[i]);
            if v.len() != self.dim {
                return Err(BmsError::SizeMismatch(format!("field returned {} values, expected {}", v.len(), self.dim)));
            }
            out.row_mut(i).iter_mut().zip(v).for_each(|(o, v)| *o = v);
        }
        Ok(out)
    }
}

/// `u ≡ 0`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroField {
    pub dim: usize,
}

impl ControlField for ZeroField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_batch(&self, xs: ArrayView2<f64>, ts: &[f64]) -> Result<Array2<f64>> {
        check_batch(self.dim, xs, ts)?;
        Ok(Array2::zeros((xs.nrows(), self.dim)))
    }

    fn divergence(&self, _x: &[f64], _t: f64) -> Result<f64> {
        Ok(0.0)
    }
}

fn check_batch(dim: usize, xs: ArrayView2<f64>, ts: &[f64]) -> Result<()> {
    if xs.ncols() != dim || xs.nrows() != ts.len() {
        return Err(BmsError::SizeMismatch(format!(
            "batch of shape {:?} with {} times for a field of dimension {dim}",
            xs.dim(),
            ts.len()
        )));
    }
    Ok(())
}

/// Noise-prediction reparameterization `u = (σ(t)/√κ(max(t, t_cut))) · û`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputScaling {
    pub schedule: NoiseSchedule,
    pub t_cut: f64,
}

impl OutputScaling {
    /// Factor `σ(t)/√κ(max(t, t_cut))` turning network output into the control.
    pub fn factor(&self, t: f64) -> Result<f64> {
        let sigma = self.schedule.sigma_at(t)?;
        let kappa = self.schedule.kappa_at(t.max(self.t_cut))?;
        Ok(sigma / kappa.sqrt())
    }
}

/// Residual network with optional output reparameterization. The network
/// output holds `heads` consecutive blocks of `dim` values; head `k` is
/// exposed through [`DriftField::head`].
#[derive(Debug, Clone, PartialEq)]
pub struct DriftField {
    net: Mlp,
    dim: usize,
    heads: usize,
    scaling: Option<OutputScaling>,
}

impl DriftField {
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        heads: usize,
        hidden_width: usize,
        hidden_layers: usize,
        n_freq: usize,
        scaling: Option<OutputScaling>,
        rng: &mut R,
    ) -> Self {
        let horizon = scaling.as_ref().map(|s| s.schedule.horizon()).unwrap_or(1.0);
        let arch = Architecture {
            state_dim: dim,
            out_dim: dim * heads,
            hidden_width,
            hidden_layers,
            n_freq,
            horizon,
            activation: Activation::Silu,
        };
        Self::from_mlp(Mlp::new(arch, rng), heads, scaling)
    }

    pub fn from_mlp(net: Mlp, heads: usize, scaling: Option<OutputScaling>) -> Self {
        let dim = net.architecture().state_dim;
        assert_eq!(net.architecture().out_dim, dim * heads, "output width must be heads x state dimension");
        DriftField { net, dim, heads, scaling }
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn scaling(&self) -> Option<&OutputScaling> {
        self.scaling.as_ref()
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    fn factors(&self, ts: &[f64]) -> Result<Vec<f64>> {
        match &self.scaling {
            Some(s) => ts.iter().map(|&t| s.factor(t)).collect(),
            None => Ok(vec![1.0; ts.len()]),
        }
    }

    /// All heads, after output scaling: an `n × (heads·dim)` matrix.
    pub fn eval_all(&self, xs: ArrayView2<f64>, ts: &[f64]) -> Result<Array2<f64>> {
        check_batch(self.dim, xs, ts)?;
        if self.net.has_nan() {
            return Err(BmsError::PoisonedState);
        }
        let mut out = self.net.forward(xs, ts);
        for (mut row, f) in out.rows_mut().into_iter().zip(self.factors(ts)?) {
            row.mapv_inplace(|v| v * f);
        }
        Ok(out)
    }

    pub fn head(&self, k: usize) -> HeadView<'_> {
        assert!(k < self.heads, "head index out of range");
        HeadView { field: self, head: k }
    }

    /// Loss and exact parameter gradient. `loss` receives the scaled outputs
    /// `u` (all heads) and returns the loss with `∂loss/∂u`.
    pub fn loss_and_gradient<L>(&self, xs: ArrayView2<f64>, ts: &[f64], loss: L) -> Result<(f64, Vec<f64>)>
    where
        L: FnOnce(&Array2<f64>) -> (f64, Array2<f64>),
    {
        check_batch(self.dim, xs, ts)?;
        if self.net.has_nan() {
            return Err(BmsError::PoisonedState);
        }
        let (mut out, cache) = self.net.forward_with_cache(xs, ts);
        let factors = self.factors(ts)?;
        for (mut row, f) in out.rows_mut().into_iter().zip(&factors) {
            row.mapv_inplace(|v| v * f);
        }
        let (value, mut grad_u) = loss(&out);
        if !value.is_finite() {
            return Err(BmsError::TrainingDivergence { last_finite_loss: f64::NAN });
        }
        for (mut row, f) in grad_u.rows_mut().into_iter().zip(&factors) {
            row.mapv_inplace(|v| v * f);
        }
        let (grads, _) = self.net.backward(&cache, &grad_u);
        Ok((value, grads))
    }

    /// Divergence of head `k` by reverse mode, one backward pass per coordinate.
    pub fn divergence_batch(&self, k: usize, xs: ArrayView2<f64>, ts: &[f64]) -> Result<Vec<f64>> {
        check_batch(self.dim, xs, ts)?;
        if self.net.has_nan() {
            return Err(BmsError::PoisonedState);
        }
        let (_, cache) = self.net.forward_with_cache(xs, ts);
        let n = xs.nrows();
        let mut div = vec![0.0; n];
        for i in 0..self.dim {
            let mut g = Array2::zeros((n, self.dim * self.heads));
            g.column_mut(k * self.dim + i).fill(1.0);
            let gz = self.net.input_gradient(&cache, &g);
            for (d, v) in div.iter_mut().zip(gz.column(i)) {
                *d += v;
            }
        }
        for (d, f) in div.iter_mut().zip(self.factors(ts)?) {
            *d *= f;
        }
        Ok(div)
    }

    /// Frozen deep copy, shared cheaply between workers.
    pub fn snapshot(&self) -> FrozenField {
        FrozenField(Arc::new(self.clone()))
    }
}

impl ControlField for DriftField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_batch(&self, xs: ArrayView2<f64>, ts: &[f64]) -> Result<Array2<f64>> {
        self.head(0).eval_batch(xs, ts)
    }

    fn divergence(&self, x: &[f64], t: f64) -> Result<f64> {
        self.head(0).divergence(x, t)
    }

    fn divergence_rows(&self, xs: ArrayView2<f64>, ts: &[f64]) -> Result<Vec<f64>> {
        self.divergence_batch(0, xs, ts)
    }
}

/// One output head of a [`DriftField`].
#[derive(Clone, Copy)]
pub struct HeadView<'a> {
    field: &'a DriftField,
    head: usize,
}

impl ControlField for HeadView<'_> {
    fn dim(&self) -> usize {
        self.field.dim
    }

    fn eval_batch(&self, xs: ArrayView2<f64>, ts: &[f64]) -> Result<Array2<f64>> {
        let all = self.field.eval_all(xs, ts)?;
        if self.field.heads == 1 {
            return Ok(all);
        }
        let d = self.field.dim;
        Ok(all.slice(ndarray::s![.., self.head * d..(self.head + 1) * d]).to_owned())
    }

    fn divergence(&self, x: &[f64], t: f64) -> Result<f64> {
        let xs = ArrayView2::from_shape((1, x.len()), x).map_err(|e| BmsError::SizeMismatch(e.to_string()))?;
        Ok(self.field.divergence_batch(self.head, xs, &[t])?[0])
    }

    fn divergence_rows(&self, xs: ArrayView2<f64>, ts: &[f64]) -> Result<Vec<f64>> {
        self.field.divergence_batch(self.head, xs, ts)
    }
}

/// Immutable snapshot of a [`DriftField`].
#[derive(Debug, Clone)]
pub struct FrozenField(Arc<DriftField>);

impl FrozenField {
    pub fn field(&self) -> &DriftField {
        &self.0
    }
}

impl ControlField for FrozenField {
    fn dim(&self) -> usize {
        self.0.dim
    }

    fn eval_batch(&self, xs: ArrayView2<f64>, ts: &[f64]) -> Result<Array2<f64>> {
        self.0.eval_batch(xs, ts)
    }

    fn divergence(&self, x: &[f64], t: f64) -> Result<f64> {
        self.0.divergence(x, t)
    }

    fn divergence_rows(&self, xs: ArrayView2<f64>, ts: &[f64]) -> Result<Vec<f64>> {
        self.0.divergence_rows(xs, ts)
    }
}

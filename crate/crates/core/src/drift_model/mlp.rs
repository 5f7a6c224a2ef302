//! Residual multilayer perceptron over `[x ‖ fourier(t)]` with a
//! hand-written backward pass.
//!
//! Layout for `hidden_layers = L ≥ 1`:
//!
//! ```text
//! h₁   = act(z W_in + b_in)
//! h_l  = h_{l−1} + act(h_{l−1} W_l + b_l)      l = 2..L
//! out  = h_L W_out + b_out
//! ```
//!
//! With `L = 0` the network is the linear map `out = z W_out + b_out`.
//! All weights live in one flat parameter vector.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::fourier::fourier_embed_into;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `a · sigmoid(a)`
    Silu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Silu => a / (1.0 + (-a).exp()),
            Activation::Tanh => a.tanh(),
        }
    }

    #[inline]
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-a).exp());
                s * (1.0 + a * (1.0 - s))
            }
            Activation::Tanh => {
                let t = a.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub state_dim: usize,
    pub out_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub n_freq: usize,
    pub horizon: f64,
    pub activation: Activation,
}

impl Architecture {
    /// Six hidden layers of width 512 with 64 Fourier frequencies.
    pub fn standard(state_dim: usize) -> Self {
        Architecture {
            state_dim,
            out_dim: state_dim,
            hidden_width: 512,
            hidden_layers: 6,
            n_freq: 64,
            horizon: 1.0,
            activation: Activation::Silu,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.state_dim + 2 * self.n_freq
    }

    /// `(rows, cols, offset)` of every weight matrix followed by its bias, in storage order.
    fn layers(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::new();
        let mut offset = 0;
        let mut push = |rows: usize, cols: usize| {
            let s = LayerShape { rows, cols, w: offset, b: offset + rows * cols };
            offset += rows * cols + cols;
            s
        };
        if self.hidden_layers == 0 {
            shapes.push(push(self.input_dim(), self.out_dim));
            return shapes;
        }
        shapes.push(push(self.input_dim(), self.hidden_width));
        for _ in 1..self.hidden_layers {
            shapes.push(push(self.hidden_width, self.hidden_width));
        }
        shapes.push(push(self.hidden_width, self.out_dim));
        shapes
    }

    pub fn n_params(&self) -> usize {
        self.layers().last().map(|l| l.b + l.cols).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerShape {
    rows: usize,
    cols: usize,
    w: usize,
    b: usize,
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache {
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    hidden: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    arch: Architecture,
    shapes: Vec<LayerShape>,
    params: Vec<f64>,
}

impl Mlp {
    /// Fan-in scaled uniform initialization; the output layer starts at zero.
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let shapes = arch.layers();
        let mut params = vec![0.0; arch.n_params()];
        let last = shapes.len() - 1;
        for (i, s) in shapes.iter().enumerate() {
            if i == last {
                continue;
            }
            let bound = 1.0 / (s.rows as f64).sqrt();
            for p in &mut params[s.w..s.w + s.rows * s.cols] {
                *p = rng.gen_range(-bound..bound);
            }
            for p in &mut params[s.b..s.b + s.cols] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        Mlp { arch, shapes, params }
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Option<Self> {
        if params.len() != arch.n_params() {
            return None;
        }
        let shapes = arch.layers();
        Some(Mlp { arch, shapes, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn has_nan(&self) -> bool {
        self.params.iter().any(|p| p.is_nan())
    }

    /// Network input `[x ‖ fourier(t)]` for a batch.
    pub fn build_input(&self, xs: ArrayView2<f64>, ts: &[f64]) -> Array2<f64> {
        let (n, d) = xs.dim();
        assert_eq!(d, self.arch.state_dim, "state dimension mismatch");
        assert_eq!(n, ts.len(), "one time per row expected");
        let mut z = Array2::zeros((n, self.arch.input_dim()));
        for (i, mut row) in z.rows_mut().into_iter().enumerate() {
            let row = row.as_slice_mut().expect("contiguous row");
            for (dst, src) in row[..d].iter_mut().zip(xs.row(i)) {
                *dst = *src;
            }
            fourier_embed_into(ts[i], self.arch.n_freq, self.arch.horizon, &mut row[d..]);
        }
        z
    }

    fn weight(&self, s: &LayerShape) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((s.rows, s.cols), &self.params[s.w..s.w + s.rows * s.cols]).expect("layer shape")
    }

    fn affine(&self, input: &Array2<f64>, s: &LayerShape) -> Array2<f64> {
        let mut out = Array2::zeros((input.nrows(), s.cols));
        general_mat_mul(1.0, input, &self.weight(s), 0.0, &mut out);
        let bias = &self.params[s.b..s.b + s.cols];
        for mut row in out.rows_mut() {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        out
    }

    pub fn forward(&self, xs: ArrayView2<f64>, ts: &[f64]) -> Array2<f64> {
        let z = self.build_input(xs, ts);
        self.forward_input(z).0
    }

    pub fn forward_with_cache(&self, xs: ArrayView2<f64>, ts: &[f64]) -> (Array2<f64>, ForwardCache) {
        let z = self.build_input(xs, ts);
        self.forward_input(z)
    }

    fn forward_input(&self, z: Array2<f64>) -> (Array2<f64>, ForwardCache) {
        let act = self.arch.activation;
        let last = self.shapes.len() - 1;
        let mut pre = Vec::with_capacity(last);
        let mut hidden: Vec<Array2<f64>> = Vec::with_capacity(last);
        for (i, s) in self.shapes[..last].iter().enumerate() {
            let a = self.affine(if i == 0 { &z } else { &hidden[i - 1] }, s);
            let mut h = a.mapv(|v| act.apply(v));
            if i > 0 {
                h += &hidden[i - 1];
            }
            pre.push(a);
            hidden.push(h);
        }
        let out = self.affine(hidden.last().unwrap_or(&z), &self.shapes[last]);
        (out, ForwardCache { input: z, pre, hidden })
    }

    /// Back-propagates `grad_out = ∂L/∂out`. Returns the parameter gradient and
    /// `∂L/∂z` for the network input.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
        let mut grads = vec![0.0; self.params.len()];
        let g_z = self.backprop(cache, grad_out, Some(&mut grads));
        (grads, g_z)
    }

    /// `∂L/∂z` only, skipping the parameter gradient.
    pub fn input_gradient(&self, cache: &ForwardCache, grad_out: &Array2<f64>) -> Array2<f64> {
        self.backprop(cache, grad_out, None)
    }

    fn backprop(&self, cache: &ForwardCache, grad_out: &Array2<f64>, mut grads: Option<&mut Vec<f64>>) -> Array2<f64> {
        let act = self.arch.activation;
        let last = self.shapes.len() - 1;

        let top = &self.shapes[last];
        let top_in = cache.hidden.last().unwrap_or(&cache.input);
        if let Some(g) = grads.as_deref_mut() {
            self.accumulate(g, top, top_in, grad_out);
        }
        let mut g_h = Array2::zeros((grad_out.nrows(), top.rows));
        general_mat_mul(1.0, grad_out, &self.weight(top).t(), 0.0, &mut g_h);

        for i in (0..last).rev() {
            let s = &self.shapes[i];
            let mut g_a = g_h.clone();
            g_a.zip_mut_with(&cache.pre[i], |g, a| *g *= act.derivative(*a));
            let layer_in = if i == 0 { &cache.input } else { &cache.hidden[i - 1] };
            if let Some(g) = grads.as_deref_mut() {
                self.accumulate(g, s, layer_in, &g_a);
            }
            let mut g_in = Array2::zeros((g_a.nrows(), s.rows));
            general_mat_mul(1.0, &g_a, &self.weight(s).t(), 0.0, &mut g_in);
            if i > 0 {
                // residual connection
                g_in += &g_h;
            }
            g_h = g_in;
        }
        g_h
    }

    fn accumulate(&self, grads: &mut [f64], s: &LayerShape, input: &Array2<f64>, g: &Array2<f64>) {
        {
            let mut gw =
                ArrayViewMut2::from_shape((s.rows, s.cols), &mut grads[s.w..s.w + s.rows * s.cols]).expect("shape");
            general_mat_mul(1.0, &input.t(), g, 1.0, &mut gw);
        }
        let gb = g.sum_axis(Axis(0));
        for (dst, v) in grads[s.b..s.b + s.cols].iter_mut().zip(gb.iter()) {
            *dst += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arch(layers: usize, act: Activation) -> Architecture {
        Architecture {
            state_dim: 3,
            out_dim: 3,
            hidden_width: 8,
            hidden_layers: layers,
            n_freq: 2,
            horizon: 1.0,
            activation: act,
        }
    }

    #[test]
    fn parameter_count() {
        let a = arch(2, Activation::Silu);
        // in = 3 + 4 = 7
        assert_eq!(a.n_params(), 7 * 8 + 8 + 8 * 8 + 8 + 8 * 3 + 3);
        assert_eq!(arch(0, Activation::Silu).n_params(), 7 * 3 + 3);
    }

    #[test]
    fn zero_output_layer_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(arch(3, Activation::Silu), &mut rng);
        let xs = Array2::from_shape_fn((5, 3), |(i, j)| (i + j) as f64);
        let out = net.forward(xs.view(), &[0.1, 0.2, 0.3, 0.4, 0.5]);
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn input_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Mlp::new(arch(2, Activation::Tanh), &mut rng);
        for p in net.params_mut() {
            *p += rng.gen_range(-0.3..0.3);
        }
        let z = Array2::from_shape_fn((1, 7), |_| rng.gen_range(-1.0..1.0));
        let (out, cache) = net.forward_input(z.clone());
        let g = Array2::from_elem(out.dim(), 1.0);
        let (_, gz) = net.backward(&cache, &g);
        for j in 0..7 {
            let h = 1e-6;
            let mut zp = z.clone();
            zp[[0, j]] += h;
            let mut zm = z.clone();
            zm[[0, j]] -= h;
            let fd = (net.forward_input(zp).0.sum() - net.forward_input(zm).0.sum()) / (2.0 * h);
            assert!((fd - gz[[0, j]]).abs() < 1e-7 * fd.abs().max(1.0));
        }
    }
}

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::error::{BmsError, Result};

/// Ring of `(x0, xT)` pairs with capacity `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    x0: Array2<f64>,
    x_end: Array2<f64>,
    len: usize,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, dim: usize) -> Self {
        ReplayBuffer { x0: Array2::zeros((capacity, dim)), x_end: Array2::zeros((capacity, dim)), len: 0, cursor: 0 }
    }

    /// Buffer holding exactly the given pairs.
    pub fn from_pairs(x0: ArrayView2<f64>, x_end: ArrayView2<f64>) -> Result<Self> {
        let mut b = Self::new(x0.nrows(), x0.ncols());
        b.refresh(x0, x_end)?;
        Ok(b)
    }

    pub fn capacity(&self) -> usize {
        self.x0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x0.ncols()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Writes pairs at the ring cursor, overwriting the oldest entries.
    pub fn push_batch(&mut self, x0: ArrayView2<f64>, x_end: ArrayView2<f64>) -> Result<()> {
        if x0.dim() != x_end.dim() || x0.ncols() != self.dim() {
            return Err(BmsError::SizeMismatch("buffer pairs must share the buffer dimension".into()));
        }
        let cap = self.capacity();
        for (a, b) in x0.rows().into_iter().zip(x_end.rows()) {
            self.x0.row_mut(self.cursor).assign(&a);
            self.x_end.row_mut(self.cursor).assign(&b);
            self.cursor = (self.cursor + 1) % cap;
            self.len = (self.len + 1).min(cap);
        }
        Ok(())
    }

    /// Replaces the whole contents.
    pub fn refresh(&mut self, x0: ArrayView2<f64>, x_end: ArrayView2<f64>) -> Result<()> {
        self.len = 0;
        self.cursor = 0;
        self.push_batch(x0, x_end)
    }

    pub fn pair(&self, i: usize) -> (&[f64], &[f64]) {
        assert!(i < self.len, "buffer index out of range");
        (
            self.x0.row(i).to_slice().expect("contiguous"),
            self.x_end.row(i).to_slice().expect("contiguous"),
        )
    }

    /// Uniform indices with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.is_empty() {
            return Err(BmsError::InvalidParameter("cannot sample from an empty buffer".into()));
        }
        Ok((0..n).map(|_| rng.gen_range(0..self.len)).collect())
    }

    pub fn x0(&self) -> ArrayView2<'_, f64> {
        self.x0.slice(ndarray::s![..self.len, ..])
    }

    pub fn x_end(&self) -> ArrayView2<'_, f64> {
        self.x_end.slice(ndarray::s![..self.len, ..])
    }

    pub(crate) fn x0_raw(&self) -> &[f64] {
        self.x0.as_slice().expect("contiguous")
    }

    pub(crate) fn x_end_raw(&self) -> &[f64] {
        self.x_end.as_slice().expect("contiguous")
    }

    pub(crate) fn restore(&mut self, x0: &[f64], x_end: &[f64], len: usize, cursor: usize) -> Result<()> {
        let shape = self.x0.raw_dim();
        if x0.len() != self.x0.len() || x_end.len() != self.x_end.len() || len > self.capacity() {
            return Err(BmsError::Checkpoint("buffer size does not match the configuration".into()));
        }
        self.x0 = Array2::from_shape_vec(shape, x0.to_vec()).expect("checked length");
        self.x_end = Array2::from_shape_vec(shape, x_end.to_vec()).expect("checked length");
        self.len = len;
        self.cursor = cursor;
        Ok(())
    }
}

//! Dense row-major tensors.
//!
//! A tensor owns its shape and values; when produced by an active
//! [`crate::tape::Tape`] it additionally carries a handle to the node that
//! computed it, which is how gradients find their way back. Tensors without
//! a handle act as constants: they may feed tape operations freely but never
//! receive a gradient.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct Tensor<S: Scalar> {
    shape: Vec<usize>,
    values: Arc<Vec<S>>,
    pub(crate) node: Option<usize>,
    pub(crate) requires_grad: bool,
}

impl<S: Scalar> Tensor<S> {
    /// Builds a tensor, validating that the value count matches the shape
    /// and that every entry is finite.
    pub fn from_vec(shape: Vec<usize>, values: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::dimension(format!(
                "shape {:?} implies {} values, got {}",
                shape,
                numel,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("tensor values must be finite".to_string()));
        }
        Ok(Self::from_parts(shape, values))
    }

    /// Internal constructor for op outputs whose finiteness is implied by
    /// the op's own domain checks.
    pub(crate) fn from_parts(shape: Vec<usize>, values: Vec<S>) -> Self {
        Tensor {
            shape,
            values: Arc::new(values),
            node: None,
            requires_grad: false,
        }
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(v: S) -> Self {
        Tensor::from_parts(Vec::new(), vec![v])
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor::from_parts(shape, vec![S::zero(); numel])
    }

    pub fn filled(shape: Vec<usize>, v: S) -> Self {
        let numel = shape.iter().product();
        Tensor::from_parts(shape, vec![v; numel])
    }

    /// Rank-2 tensor from a row iterator; all rows must share a width.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::dimension("ragged rows".to_string()));
        }
        let mut values = Vec::with_capacity(n * d);
        for r in rows {
            values.extend_from_slice(r);
        }
        Tensor::from_vec(vec![n, d], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    /// True for tensors treated as scalars by the broadcasting rules.
    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub(crate) fn values_arc(&self) -> Arc<Vec<S>> {
        Arc::clone(&self.values)
    }

    /// The single value of a scalar tensor.
    pub fn value(&self) -> S {
        debug_assert_eq!(self.numel(), 1, "value() on non-scalar tensor");
        self.values[0]
    }

    /// Element of a rank-2 tensor.
    pub fn at(&self, row: usize, col: usize) -> S {
        debug_assert_eq!(self.rank(), 2);
        self.values[row * self.shape[1] + col]
    }

    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.shape[1]
    }

    /// A copy of one row of a rank-2 tensor.
    pub fn row(&self, i: usize) -> Vec<S> {
        let d = self.cols();
        self.values[i * d..(i + 1) * d].to_vec()
    }

    pub fn node(&self) -> Option<usize> {
        self.node
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Same values, no tape handle: the result behaves as a constant.
    pub fn detach(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            values: Arc::clone(&self.values),
            node: None,
            requires_grad: false,
        }
    }

    /// Copies selected rows of a rank-2 tensor (value-level gather).
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Self> {
        if self.rank() != 2 {
            return Err(Error::dimension("gather_rows expects a rank-2 tensor".to_string()));
        }
        let d = self.cols();
        let n = self.rows();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= n {
                return Err(Error::index(format!("row {i} out of {n}")));
            }
            out.extend_from_slice(&self.values[i * d..(i + 1) * d]);
        }
        Ok(Tensor::from_parts(vec![indices.len(), d], out))
    }

    /// Max relative elementwise deviation from `other`; both operands must
    /// share a shape. Useful in tests and checks.
    pub fn max_rel_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape);
        let mut worst = 0.0f64;
        for (a, b) in self.values.iter().zip(other.values.iter()) {
            let a = a.to_double();
            let b = b.to_double();
            let denom = a.abs() + b.abs() + 1e-12;
            worst = worst.max((a - b).abs() / denom);
        }
        worst
    }
}

impl<S: Scalar> PartialEq for Tensor<S> {
    /// Value equality: same shape and bit-comparable values. Tape handles
    /// are ignored.
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .values
                .iter()
                .zip(other.values.iter())
                .all(|(a, b)| a == b)
    }
}

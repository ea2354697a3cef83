use crate::error::{NnError, Result};
use crate::real::Real;

/// Dense row-major array with an optional gradient buffer of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    pub data: Vec<T>,
    pub grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(NnError::Shape(format!(
                "{} values for shape {shape:?} ({expected} expected)",
                data.len()
            )));
        }
        Ok(Self { shape: shape.to_vec(), data, grad: None })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
            grad: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Gradient buffer, created zeroed on first access.
    pub fn grad_mut(&mut self) -> &mut Vec<T> {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn accumulate_grad(&mut self, delta: &[T]) {
        let g = self.grad_mut();
        assert_eq!(g.len(), delta.len());
        g.iter_mut().zip(delta).for_each(|(a, &d)| *a += d);
    }
}

/// Activation batch laid out channel-major: index `(c * batch + b) * len + t`.
///
/// Treating the buffer as a `C × (B·L)` matrix turns pointwise convolution
/// and the fully connected layers into single GEMM calls.
#[derive(Debug, Clone, PartialEq)]
pub struct Act<T> {
    pub channels: usize,
    pub batch: usize,
    pub len: usize,
    pub data: Vec<T>,
}

impl<T: Real> Act<T> {
    pub fn new(channels: usize, batch: usize, len: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * batch * len {
            return Err(NnError::Shape(format!(
                "{} values for activation {channels}x{batch}x{len}",
                data.len()
            )));
        }
        Ok(Self { channels, batch, len, data })
    }

    pub fn zeros(channels: usize, batch: usize, len: usize) -> Self {
        Self {
            channels,
            batch,
            len,
            data: vec![T::zero(); channels * batch * len],
        }
    }

    /// Builds a single-channel batch from per-sample rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let len = rows.first().map(Vec::len).ok_or_else(|| NnError::Shape("empty batch".into()))?;
        if rows.iter().any(|r| r.len() != len) {
            return Err(NnError::Shape("rows differ in length".into()));
        }
        Self::new(1, rows.len(), len, rows.concat())
    }

    /// Columns of the `C × (B·L)` view.
    pub fn cols(&self) -> usize {
        self.batch * self.len
    }

    pub fn at(&self, c: usize, b: usize, t: usize) -> T {
        self.data[(c * self.batch + b) * self.len + t]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.channels, self.batch, self.len) == (other.channels, other.batch, other.len)
    }
}

//! Dense f64 tensors and a Wengert-tape reverse-mode autodiff engine.
//!
//! The engine is deliberately small: every primitive the forecasting model
//! and the gradient analyses need, nothing more. Values are 64-bit floats,
//! execution is single-threaded per tape, and gradients are available for
//! *inputs* as well as parameters (the receptive-field analyses differentiate
//! predictions with respect to the raw input window).

mod backward;
mod grad_check;
pub(crate) mod kernels;
mod tape;
#[cfg(test)]
mod tests;

pub use grad_check::{battery, grad_check, GradCheckReport};
pub use tape::{ElemKind, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} elements, got {actual}")]
    ShapeDataMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    DimMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: kernel longer than input ({kernel} > {input})")]
    KernelLongerThanInput {
        op: &'static str,
        kernel: usize,
        input: usize,
    },
    #[error("{op}: kernel size {kernel} must be odd")]
    EvenKernel { op: &'static str, kernel: usize },
    #[error("{op}: split dimension {dim} must be even")]
    OddSplitDim { op: &'static str, dim: usize },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("{op}: index {index} out of range for axis of length {len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{op} expects rank {expected}, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("backward requires a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("non-finite value ({value}) at index {index} in {context}")]
    NonFinite {
        context: String,
        index: usize,
        value: f64,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Dense n-dimensional array of f64 in row-major order.
///
/// `grad` is an accumulator: backward passes add into it and it is only
/// cleared by an explicit [`Tensor::zero_grad`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected = numel_of(&shape);
        if expected != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                expected,
                actual: data.len(),
                shape,
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            data: vec![0.0; numel_of(shape)],
            shape: shape.to_vec(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            data: vec![value; numel_of(shape)],
            shape: shape.to_vec(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Rank-0 scalar.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = numel_of(shape);
        Tensor {
            data: (0..n).map(&mut f).collect(),
            shape: shape.to_vec(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Entries drawn i.i.d. from U(lo, hi).
    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl rand::Rng) -> Self {
        Self::from_fn(shape, |_| rng.gen_range(lo..hi))
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self, TensorError> {
        let expected = numel_of(&shape);
        if expected != self.data.len() {
            return Err(TensorError::ShapeDataMismatch {
                expected,
                actual: self.data.len(),
                shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Value at a multi-index (row-major).
    pub fn at(&self, index: &[usize]) -> f64 {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            debug_assert!(ix < dim, "index {ix} out of range at axis {i}");
            off = off * dim + ix;
        }
        self.data[off]
    }

    /// Add `delta` into the gradient accumulator, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.data.len());
        let grad = self
            .grad
            .get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Error if any entry (or gradient entry) is NaN or infinite.
    pub fn assert_finite(&self, context: &str) -> Result<(), TensorError> {
        for (i, &v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(TensorError::NonFinite {
                    context: context.to_string(),
                    index: i,
                    value: v,
                });
            }
        }
        if let Some(grad) = &self.grad {
            for (i, &v) in grad.iter().enumerate() {
                if !v.is_finite() {
                    return Err(TensorError::NonFinite {
                        context: format!("{context} (grad)"),
                        index: i,
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }
}

//! Dense tensors with a reverse-mode gradient tape.
//!
//! A [`Tensor`] is an immutable value (shape plus row-major data behind an
//! `Arc`, so model weights can be shared across threads without copying).
//! Differentiable computation happens on a [`Graph`]: values enter the tape
//! as leaves, every op appends a node, and [`Var::backward`] replays the
//! tape in reverse.
//!
//! Two precisions are supported through the [`Real`] trait: `f32` for
//! training and `f64` for verification against finite differences and
//! enumeration oracles.

mod gradcheck;
mod graph;
pub mod kernels;
mod ops;

pub use gradcheck::finite_diff_check;
pub use graph::{Graph, Var};
pub use ops::AttentionMask;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::sync::Arc;

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

/// Scalar element type: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + Default
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const BITS: u32;

    fn lit(x: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    const BITS: u32 = 32;

    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const BITS: u32 = 64;

    #[inline]
    fn lit(x: f64) -> Self {
        x
    }

    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

/// Immutable dense array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Arc<Vec<S>>,
}

impl<S: Real> Tensor<S> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<S>) -> Result<Self> {
        let shape = shape.into();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::dim(format!("extents must be positive, got {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Self::new(shape, vec![S::zero(); numel]).expect("positive extents")
    }

    pub fn scalar(x: S) -> Self {
        Self {
            shape: vec![1],
            data: Arc::new(vec![x]),
        }
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&x| S::lit(x)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows and columns when viewed as a matrix over the last axis.
    pub fn rows_cols(&self) -> (usize, usize) {
        let cols = *self.shape.last().expect("non-empty shape");
        (self.data.len() / cols, cols)
    }

    pub fn item(&self) -> S {
        self.data[0]
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.f64()).collect()
    }

    pub fn cast<T: Real>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|x| T::lit(x.f64())).collect()),
        }
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.numel() || shape.contains(&0) {
            return Err(Error::dim(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape
            )));
        }
        Ok(Self {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Rows `[start, end)` of a matrix-shaped tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        let (rows, cols) = self.rows_cols();
        if start >= end || end > rows {
            return Err(Error::dim(format!("row slice {start}..{end} of {rows}")));
        }
        let mut shape = self.shape.clone();
        if shape.len() == 1 {
            shape[0] = (end - start) * cols;
        } else {
            shape[0] = end - start;
            if self.shape.len() > 2 {
                return Err(Error::dim("row slicing needs rank <= 2"));
            }
        }
        Self::new(shape, self.data[start * cols..end * cols].to_vec())
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data: Arc::new(data),
        }
    }
}

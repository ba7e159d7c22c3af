//! Dense row-major tensors with a reverse-mode tape.
//!
//! Values are held in `f64` buffers regardless of dtype; the dtype fixes the
//! set of values a buffer may contain. `F32` and `F16e` buffers are rounded
//! on construction and after every tape op, which emulates the narrower
//! arithmetic while keeping one code path.

mod adam;
pub(crate) mod kernels;
mod tape;

pub use adam::AdamState;
pub use tape::{Tape, Var};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::amp::half::round_to_half;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    F32,
    /// Emulated IEEE binary16.
    F16e,
}

impl Dtype {
    #[inline]
    pub fn round(self, x: f64) -> f64 {
        match self {
            Dtype::F64 => x,
            Dtype::F32 => x as f32 as f64,
            Dtype::F16e => round_to_half(x),
        }
    }

    pub fn round_slice(self, xs: &mut [f64]) {
        match self {
            Dtype::F64 => {}
            Dtype::F32 => xs.iter_mut().for_each(|x| *x = *x as f32 as f64),
            Dtype::F16e => xs.iter_mut().for_each(|x| *x = round_to_half(*x)),
        }
    }

    fn width(self) -> u8 {
        match self {
            Dtype::F64 => 64,
            Dtype::F32 => 32,
            Dtype::F16e => 16,
        }
    }

    /// Whether every value of `self` is exactly representable in `other`.
    pub fn fits_in(self, other: Dtype) -> bool {
        self.width() <= other.width()
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dtype::F64 => "f64",
            Dtype::F32 => "f32",
            Dtype::F16e => "f16e",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    dtype: Dtype,
    data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Build a tensor, rounding `data` into `dtype`.
    pub fn new(shape: Vec<usize>, mut data: Vec<f64>, dtype: Dtype) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::invalid(format!(
                "zero-sized dimension in shape {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        dtype.round_slice(&mut data);
        Ok(Tensor {
            shape,
            dtype,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::new(shape.to_vec(), data, Dtype::F64)
    }

    pub fn zeros(shape: &[usize], dtype: Dtype) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            dtype,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: &[usize], value: f64, dtype: Dtype) -> Self {
        let mut t = Self::zeros(shape, dtype);
        t.data.fill(dtype.round(value));
        t
    }

    pub fn scalar(value: f64, dtype: Dtype) -> Self {
        Self::full(&[1], value, dtype)
    }

    pub fn with_requires_grad(mut self, on: bool) -> Self {
        self.requires_grad = on;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    /// Rows and columns of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::invalid(format!(
                "expected a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Replace the contents in place, rounding into this tensor's dtype.
    pub fn assign(&mut self, data: &[f64]) -> Result<()> {
        if data.len() != self.data.len() {
            return Err(Error::Shape {
                op: "assign",
                lhs: self.shape.clone(),
                rhs: vec![data.len()],
            });
        }
        self.data.copy_from_slice(data);
        self.dtype.round_slice(&mut self.data);
        Ok(())
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Convert to another dtype (rounding when narrowing).
    pub fn to_dtype(&self, dtype: Dtype) -> Tensor {
        let mut data = self.data.clone();
        dtype.round_slice(&mut data);
        Tensor {
            shape: self.shape.clone(),
            dtype,
            data,
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        let (k2, n) = rhs.dims2()?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        if self.dtype != rhs.dtype {
            return Err(Error::Dtype {
                op: "matmul",
                lhs: self.dtype,
                rhs: rhs.dtype,
            });
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul(&self.data, &rhs.data, &mut out, m, k, n);
        Tensor::new(vec![m, n], out, self.dtype)
    }

    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = kernels::axis_split(&self.shape, axis)?;
        let mut out = vec![0.0; self.numel()];
        kernels::softmax(&self.data, &mut out, outer, len, inner);
        Tensor::new(self.shape.clone(), out, self.dtype)
    }

    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        if !(eps > 0.0) {
            return Err(Error::invalid(format!(
                "layer_norm eps must be positive, got {eps}"
            )));
        }
        let d = *self.shape.last().expect("non-empty shape");
        if gamma.shape != [d] || beta.shape != [d] {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: self.shape.clone(),
                rhs: gamma.shape.clone(),
            });
        }
        let rows = self.numel() / d;
        let mut out = vec![0.0; self.numel()];
        let mut xhat = vec![0.0; self.numel()];
        let mut inv_std = vec![0.0; rows];
        kernels::layer_norm(
            &self.data,
            &gamma.data,
            &beta.data,
            eps,
            d,
            &mut out,
            &mut xhat,
            &mut inv_std,
        );
        Tensor::new(self.shape.clone(), out, self.dtype)
    }

    /// Index of the largest entry in each row; ties go to the lowest index.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        let (_, c) = self.dims2()?;
        Ok(self.data.chunks(c).map(kernels::argmax).collect())
    }
}

/// Batch-mean cross-entropy of `logits` (B×K) against integer labels.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new(logits.dtype());
    let z = tape.constant(logits.clone());
    let loss = tape.cross_entropy(z, labels)?;
    Ok(tape.value(loss)[0])
}

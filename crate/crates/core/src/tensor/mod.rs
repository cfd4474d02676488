//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain row-major value; [`Var`] is a tensor tracked on a
//! [`Tape`] so that gradients of a scalar root can be pulled back through
//! the recorded operations. [`Adam`] implements the adaptive-moment update
//! used by the trainer, and [`ParamStore`] owns named parameters together
//! with their checkpoint format.

mod optim;
mod params;
mod tape;

pub use optim::{clip_gradient_norm, Adam};
pub use params::{ParamStore, Parameter};
pub use tape::{Tape, Var};

use crate::error::{Error, Result};

/// Dense tensor of 64-bit reals in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, validating that the extents multiply out to the data
    /// length and that every value is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::shape("tensor", format!("zero extent in {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} implies {numel} values, got {}", data.len()),
            ));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite value {bad} rejected at tensor construction"
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Internal constructor for op results; shape agreement is the caller's
    /// responsibility and finiteness is not re-checked.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor::from_raw(shape.to_vec(), vec![0.0; numel])
    }

    pub fn ones(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor::from_raw(shape.to_vec(), vec![1.0; numel])
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        let numel = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![value; numel])
    }

    /// Scalar tensor of shape `[1]`.
    pub fn scalar(value: f64) -> Result<Self> {
        Tensor::new(vec![1], vec![value])
    }

    /// 2-D tensor from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::shape("tensor", "ragged rows".to_string()));
        }
        Tensor::new(vec![r, c], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// True when every extent is 1.
    pub fn is_scalar_shaped(&self) -> bool {
        self.shape.iter().all(|&e| e == 1)
    }

    /// Value of a scalar-shaped tensor.
    pub fn scalar_value(&self) -> f64 {
        debug_assert!(self.numel() == 1);
        self.data[0]
    }

    /// Element of a 2-D tensor.
    pub fn at(&self, row: usize, col: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[row * self.shape[1] + col]
    }

    /// Matrix product of two 2-D tensors.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || rhs.shape.len() != 2 || self.shape[1] != rhs.shape[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape, rhs.shape),
            ));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], rhs.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let rrow = &rhs.data[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * rrow[j];
                }
            }
        }
        Ok(Tensor::from_raw(vec![m, n], out))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(Error::shape(
                "transpose",
                format!("expected 2-D, got {:?}", self.shape),
            ));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor::from_raw(vec![c, r], out))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_raw(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub(crate) fn zip(&self, rhs: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape, rhs.shape);
        let data = self
            .data
            .iter()
            .zip(rhs.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Tensor::from_raw(self.shape.clone(), data)
    }

    pub(crate) fn add_assign(&mut self, rhs: &Tensor) {
        debug_assert_eq!(self.shape, rhs.shape);
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a += b;
        }
    }
}

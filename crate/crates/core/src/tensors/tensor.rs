use rand_distr::{Distribution, Normal};

use super::{Real, RngStream};
use crate::error::{Error, Result};

/// Dense row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Real>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: Real) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<Real>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected || shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                expected: shape.to_vec(),
                got: vec![data.len()],
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Gaussian initialisation with the given standard deviation.
    pub fn randn(shape: &[usize], std: Real, rng: &mut RngStream) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        let data = (0..shape.iter().product::<usize>())
            .map(|_| normal.sample(rng))
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading extent of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Trailing extent; the whole length for rank-1 tensors.
    pub fn cols(&self) -> usize {
        if self.shape.len() == 1 {
            self.shape[0]
        } else {
            self.shape[1..].iter().product()
        }
    }

    pub fn row(&self, i: usize) -> &[Real] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [Real] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn expect_shape(&self, shape: &[usize], op: &'static str) -> Result<()> {
        if self.shape != shape {
            return Err(Error::ShapeMismatch {
                op,
                expected: shape.to_vec(),
                got: self.shape.clone(),
            });
        }
        Ok(())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: Real, other: &Tensor) -> Result<()> {
        self.same_shape(other, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: Real) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    pub fn fill(&mut self, value: Real) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// Copies columns `[start, start + width)` of a rank-2 tensor.
    pub fn column_block(&self, start: usize, width: usize) -> Tensor {
        let rows = self.rows();
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            out.extend_from_slice(&self.row(r)[start..start + width]);
        }
        Tensor {
            shape: vec![rows, width],
            data: out,
        }
    }

    /// Writes `block` into columns `[start, start + block.cols())`.
    pub fn set_column_block(&mut self, start: usize, block: &Tensor) {
        let width = block.cols();
        for r in 0..self.rows() {
            self.row_mut(r)[start..start + width].copy_from_slice(block.row(r));
        }
    }
}

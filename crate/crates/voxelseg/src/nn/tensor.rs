use crate::error::{Error, Result};

use super::scalar::Scalar;

/// Dense tensor. Flat storage is row-major over `shape`, so the last axis is
/// fastest; network activations use `[b, x, y, z, c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![F::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if data.len() != want {
            return Err(Error::ShapeMismatch(format!(
                "{} values cannot fill shape {shape:?} ({want} elements)",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(v: F) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn filled(shape: &[usize], v: F) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The five `[b, x, y, z, c]` extents, or an error for other ranks.
    pub fn dims5(&self) -> Result<(usize, usize, usize, usize, usize)> {
        match self.shape[..] {
            [b, x, y, z, c] => Ok((b, x, y, z, c)),
            _ => Err(Error::ShapeMismatch(format!(
                "expected a rank-5 [b,x,y,z,c] tensor, got shape {:?}",
                self.shape
            ))),
        }
    }
}

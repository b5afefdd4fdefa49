//! Dense row-major `f64` tensor — the universal value type of the crate.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Dense n-dimensional array of 64-bit floats with an optional gradient
/// buffer of the same length.
///
/// Shape `[]` denotes a scalar (one element). Data is row-major: the last
/// axis varies fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    /// Populated by [`crate::tape::Tape::backward`] on tape nodes; `None`
    /// for plain value tensors.
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor, checking that `data` fills `shape` exactly.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape("Tensor::new", (&shape, expected), data.len()));
        }
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; len], grad: None }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; len], grad: None }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![], data: vec![value], grad: None }
    }

    /// 1-D tensor over `data`.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data, grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a scalar (or one-element) tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::shape("Tensor::item", "1 element", self.data.len()));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data viewed under a new shape of equal element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::shape("Tensor::reshaped", (shape, expected), self.data.len()));
        }
        Ok(Tensor { shape: shape.to_vec(), data: self.data.clone(), grad: None })
    }

    /// Number of examples when the first axis is a batch axis.
    pub fn batch_len(&self) -> usize {
        *self.shape.first().unwrap_or(&1)
    }

    /// Shape of one example (everything after the batch axis).
    pub fn feature_shape(&self) -> &[usize] {
        if self.shape.is_empty() {
            &self.shape
        } else {
            &self.shape[1..]
        }
    }

    /// Copies example `i` out of a batched tensor (first axis = batch).
    pub fn example(&self, i: usize) -> Result<Tensor> {
        if self.shape.is_empty() {
            return Err(Error::shape("Tensor::example", "batched tensor", "scalar"));
        }
        let n = self.shape[0];
        if i >= n {
            return Err(Error::InvalidParameter {
                name: "example index",
                reason: format!("{i} out of range for batch of {n}"),
            });
        }
        let stride: usize = self.shape[1..].iter().product();
        let data = self.data[i * stride..(i + 1) * stride].to_vec();
        Ok(Tensor { shape: self.shape[1..].to_vec(), data, grad: None })
    }

    /// Stacks equally-shaped examples along a new leading batch axis.
    pub fn stack(examples: &[Tensor]) -> Result<Tensor> {
        let first = examples.first().ok_or(Error::Empty { what: "stack input" })?;
        let mut data = Vec::with_capacity(first.len() * examples.len());
        for t in examples {
            if t.shape != first.shape {
                return Err(Error::shape("Tensor::stack", &first.shape, &t.shape));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = Vec::with_capacity(first.shape.len() + 1);
        shape.push(examples.len());
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data, grad: None })
    }

    /// Adds a leading batch axis of size 1.
    pub fn batched(&self) -> Tensor {
        let mut shape = Vec::with_capacity(self.shape.len() + 1);
        shape.push(1);
        shape.extend_from_slice(&self.shape);
        Tensor { shape, data: self.data.clone(), grad: None }
    }
}

/// Euclidean norm of a flat slice.
pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Max-magnitude norm of a flat slice.
pub fn linf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

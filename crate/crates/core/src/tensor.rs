//! Dense row-major float64 tensor with an optional gradient slot.

use crate::error::{Error, Result};

/// Dense n-dimensional value array, the carrier of all numerics.
///
/// `data` is row-major and always has `shape.iter().product()` elements.
/// `grad`, when present, has the same length as `data`; it is filled by
/// [`crate::tape::Tape::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Build a tensor from a flat row-major buffer.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::contract(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        if data.len() != numel {
            return Err(Error::Dim {
                op: "from_vec",
                left: shape,
                right: vec![data.len()],
            });
        }
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            grad: None,
        }
    }

    /// 2-D convenience constructor.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::from_vec(vec![rows, cols], data)
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Row count / column count for 2-D tensors; a 1-D tensor is one row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// Index of the largest element per row; ties resolve to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows())
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// Max absolute elementwise difference to another tensor of the same shape.
    pub fn linf_dist(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Stack equal-shaped slices along a new leading axis.
    pub fn stack(slices: &[Tensor]) -> Result<Tensor> {
        let first = slices
            .first()
            .ok_or_else(|| Error::contract("stack of zero tensors"))?;
        let mut shape = vec![slices.len()];
        shape.extend_from_slice(first.shape());
        let mut data = Vec::with_capacity(slices.len() * first.numel());
        for s in slices {
            if s.shape() != first.shape() {
                return Err(Error::Dim {
                    op: "stack",
                    left: first.shape.clone(),
                    right: s.shape.clone(),
                });
            }
            data.extend_from_slice(s.data());
        }
        Tensor::from_vec(shape, data)
    }
}

/// sign with `sign(0) = 0`; deterministic on every finite input.
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Max-subtracted softmax of one row, written into `out`.
pub(crate) fn softmax_row_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{MoilError, Result};

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(MoilError::Shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(B, L, C)` of a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [b, l, c] => Ok((b, l, c)),
            _ => Err(MoilError::Shape(format!("expected [B x L x C], got {:?}", self.shape))),
        }
    }

    /// Leading dimensions flattened into rows; the last dimension is the column count.
    pub fn rows_cols(&self) -> (usize, usize) {
        let cols = self.shape.last().copied().unwrap_or(1);
        let rows = if cols == 0 { 0 } else { self.data.len() / cols };
        (rows, cols)
    }

    /// Same data with the last dimension replaced.
    pub(crate) fn with_last_dim(&self, cols: usize, data: Vec<f64>) -> Tensor {
        let mut shape = self.shape.clone();
        *shape.last_mut().expect("rank >= 1") = cols;
        Tensor { shape, data }
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(MoilError::Training(format!(
                "non-finite value {} in {what} at flat index {i}",
                self.data[i]
            ))),
        }
    }
}

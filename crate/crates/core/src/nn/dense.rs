use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use super::{Param, Tensor};
use crate::error::{MoilError, Result};

/// Affine map applied to the last dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear {
    pub input: usize,
    pub output: usize,
    /// `[input × output]`
    pub weight: Param,
    pub bias: Param,
    #[serde(skip)]
    cache: Option<Vec<f64>>,
}

impl Linear {
    pub fn new<R: Rng>(input: usize, output: usize, rng: &mut R) -> Result<Self> {
        if input == 0 || output == 0 {
            return Err(MoilError::Config(format!("linear {input}->{output} must be non-empty")));
        }
        Ok(Self {
            input,
            output,
            weight: Param::uniform(vec![input, output], (6.0 / input as f64).sqrt(), rng),
            bias: Param::zeros(vec![output], false),
            cache: None,
        })
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (rows, c) = x.rows_cols();
        if c != self.input {
            return Err(MoilError::Shape(format!("linear expects {} inputs, got {c}", self.input)));
        }
        let mut out = Vec::with_capacity(rows * self.output);
        for _ in 0..rows {
            out.extend_from_slice(&self.bias.value);
        }
        gemm(rows, self.input, self.output, x.data(), false, &self.weight.value, false, &mut out, 1.0);
        Ok(x.with_last_dim(self.output, out))
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.apply(x)?;
        self.cache = Some(x.data().to_vec());
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(x)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| MoilError::Training("linear backward without forward".into()))?;
        let (rows, c) = grad_out.rows_cols();
        if c != self.output || rows * self.input != x.len() {
            return Err(MoilError::Shape(format!("linear grad shape {:?}", grad_out.shape())));
        }
        let dy = grad_out.data();
        gemm(self.input, rows, self.output, &x, true, dy, false, self.weight.grad_mut(), 1.0);
        let db = self.bias.grad_mut();
        for row in dy.chunks_exact(self.output) {
            for (g, v) in db.iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut dx = vec![0.0; rows * self.input];
        gemm(rows, self.output, self.input, dy, false, &self.weight.value, true, &mut dx, 0.0);
        self.cache = Some(x);
        Ok(grad_out.with_last_dim(self.input, dx))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
}

/// `max(0, x)`; the subgradient at 0 is 0.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Relu {
    #[serde(skip)]
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn infer(&self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        y
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        self.mask = Some(x.data().iter().map(|&v| v > 0.0).collect());
        self.infer(x)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mask = self
            .mask
            .as_ref()
            .ok_or_else(|| MoilError::Training("relu backward without forward".into()))?;
        if mask.len() != grad_out.len() {
            return Err(MoilError::Shape(format!("relu grad shape {:?}", grad_out.shape())));
        }
        let mut dx = grad_out.clone();
        for (d, &m) in dx.data_mut().iter_mut().zip(mask) {
            if !m {
                *d = 0.0;
            }
        }
        Ok(dx)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Sigmoid {
    #[serde(skip)]
    out: Option<Vec<f64>>,
}

impl Sigmoid {
    pub fn infer(&self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
        y
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let y = self.infer(x);
        self.out = Some(y.data().to_vec());
        y
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let out = self
            .out
            .as_ref()
            .ok_or_else(|| MoilError::Training("sigmoid backward without forward".into()))?;
        if out.len() != grad_out.len() {
            return Err(MoilError::Shape(format!("sigmoid grad shape {:?}", grad_out.shape())));
        }
        let mut dx = grad_out.clone();
        for (d, &s) in dx.data_mut().iter_mut().zip(out) {
            *d *= s * (1.0 - s);
        }
        Ok(dx)
    }
}

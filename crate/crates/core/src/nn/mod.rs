//! Minimal dense layers with hand-written backward passes, losses and Adam.

mod adam;
mod batchnorm;
mod conv;
mod dense;
mod gemm;
pub mod gradcheck;
mod loss;
mod lstm;
mod param;
mod tensor;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use adam::Adam;
pub use batchnorm::BatchNorm1d;
pub use conv::Conv1d;
pub use dense::{Linear, Relu, Sigmoid};
pub use loss::{cross_entropy, mse_loss, LossOutput};
pub use lstm::{BiLstm, LstmCell};
pub use param::Param;
pub use tensor::Tensor;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Conv1d(Conv1d),
    BatchNorm1d(BatchNorm1d),
    Relu(Relu),
    Sigmoid(Sigmoid),
    BiLstm(BiLstm),
    Linear(Linear),
}

impl Layer {
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            Layer::Conv1d(l) => l.forward(x),
            Layer::BatchNorm1d(l) => l.forward(x, mode),
            Layer::Relu(l) => Ok(l.forward(x)),
            Layer::Sigmoid(l) => Ok(l.forward(x)),
            Layer::BiLstm(l) => l.forward(x),
            Layer::Linear(l) => l.forward(x),
        }
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv1d(l) => l.infer(x),
            Layer::BatchNorm1d(l) => l.infer(x),
            Layer::Relu(l) => Ok(l.infer(x)),
            Layer::Sigmoid(l) => Ok(l.infer(x)),
            Layer::BiLstm(l) => l.infer(x),
            Layer::Linear(l) => l.infer(x),
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv1d(l) => l.backward(grad_out),
            Layer::BatchNorm1d(l) => l.backward(grad_out),
            Layer::Relu(l) => l.backward(grad_out),
            Layer::Sigmoid(l) => l.backward(grad_out),
            Layer::BiLstm(l) => l.backward(grad_out),
            Layer::Linear(l) => l.backward(grad_out),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv1d(l) => l.params_mut(),
            Layer::BatchNorm1d(l) => l.params_mut(),
            Layer::BiLstm(l) => l.params_mut(),
            Layer::Linear(l) => l.params_mut(),
            Layer::Relu(_) | Layer::Sigmoid(_) => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv1d(l) => l.params(),
            Layer::BatchNorm1d(l) => l.params(),
            Layer::BiLstm(l) => l.params(),
            Layer::Linear(l) => l.params(),
            Layer::Relu(_) | Layer::Sigmoid(_) => Vec::new(),
        }
    }
}

/// Layers applied in order.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, mode)?;
        }
        Ok(h)
    }

    /// Eval-mode forward pass that leaves the network untouched.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mut g = grad_out.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// SHA-256 over every parameter value and batch-norm running statistic.
    pub fn state_hash(&self) -> String {
        let mut h = Sha256::new();
        for layer in &self.layers {
            for p in layer.params() {
                for v in &p.value {
                    h.update(v.to_le_bytes());
                }
            }
            if let Layer::BatchNorm1d(bn) = layer {
                for v in bn.running_mean.iter().chain(&bn.running_var) {
                    h.update(v.to_le_bytes());
                }
                h.update([bn.has_running_stats as u8]);
            }
        }
        hex::encode(h.finalize())
    }
}

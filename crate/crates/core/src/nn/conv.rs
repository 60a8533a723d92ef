use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use super::{Param, Tensor};
use crate::error::{MoilError, Result};

/// Stride-1 1D convolution with zero "same" padding over `[B × L × C_in]`.
///
/// The weight is stored as `[kernel · C_in × C_out]` so a forward pass is a
/// single im2col product.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight: Param,
    pub bias: Param,
    #[serde(skip)]
    cache: Option<ConvCache>,
}

#[derive(Debug, Clone)]
struct ConvCache {
    cols: Vec<f64>,
    batch: usize,
    len: usize,
}

impl Conv1d {
    pub fn new<R: Rng>(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut R) -> Result<Self> {
        if kernel % 2 == 0 || in_channels == 0 || out_channels == 0 {
            return Err(MoilError::Config(format!(
                "conv1d needs an odd kernel and positive channels, got k={kernel}, {in_channels}->{out_channels}"
            )));
        }
        let fan_in = (kernel * in_channels) as f64;
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            weight: Param::uniform(vec![kernel * in_channels, out_channels], (6.0 / fan_in).sqrt(), rng),
            bias: Param::zeros(vec![out_channels], false),
            cache: None,
        })
    }

    fn im2col(&self, x: &Tensor) -> Result<(Vec<f64>, usize, usize)> {
        let (b, l, c) = x.dims3()?;
        if c != self.in_channels {
            return Err(MoilError::Shape(format!(
                "conv1d expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let k = self.kernel;
        let pad = k / 2;
        let width = k * c;
        let xd = x.data();
        let mut cols = vec![0.0; b * l * width];
        for bi in 0..b {
            for t in 0..l {
                let row = &mut cols[(bi * l + t) * width..(bi * l + t + 1) * width];
                for kk in 0..k {
                    let src = t + kk;
                    if src < pad || src - pad >= l {
                        continue;
                    }
                    let s = bi * l + src - pad;
                    row[kk * c..(kk + 1) * c].copy_from_slice(&xd[s * c..(s + 1) * c]);
                }
            }
        }
        Ok((cols, b, l))
    }

    fn apply(&self, cols: &[f64], b: usize, l: usize) -> Result<Tensor> {
        let rows = b * l;
        let co = self.out_channels;
        let mut out = Vec::with_capacity(rows * co);
        for _ in 0..rows {
            out.extend_from_slice(&self.bias.value);
        }
        gemm(rows, self.kernel * self.in_channels, co, cols, false, &self.weight.value, false, &mut out, 1.0);
        Tensor::new(vec![b, l, co], out)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (cols, b, l) = self.im2col(x)?;
        let out = self.apply(&cols, b, l)?;
        self.cache = Some(ConvCache { cols, batch: b, len: l });
        Ok(out)
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let (cols, b, l) = self.im2col(x)?;
        self.apply(&cols, b, l)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| MoilError::Training("conv1d backward without forward".into()))?;
        let (b, l, co) = grad_out.dims3()?;
        if (b, l, co) != (cache.batch, cache.len, self.out_channels) {
            return Err(MoilError::Shape(format!("conv1d grad shape {:?}", grad_out.shape())));
        }
        let rows = b * l;
        let c = self.in_channels;
        let width = self.kernel * c;
        let dy = grad_out.data();

        gemm(width, rows, co, &cache.cols, true, dy, false, self.weight.grad_mut(), 1.0);
        let db = self.bias.grad_mut();
        for row in dy.chunks_exact(co) {
            for (g, v) in db.iter_mut().zip(row) {
                *g += v;
            }
        }

        let mut dcols = vec![0.0; rows * width];
        gemm(rows, co, width, dy, false, &self.weight.value, true, &mut dcols, 0.0);
        let pad = self.kernel / 2;
        let mut dx = vec![0.0; rows * c];
        for bi in 0..b {
            for t in 0..l {
                let row = &dcols[(bi * l + t) * width..(bi * l + t + 1) * width];
                for kk in 0..self.kernel {
                    let src = t + kk;
                    if src < pad || src - pad >= l {
                        continue;
                    }
                    let s = bi * l + src - pad;
                    for (d, g) in dx[s * c..(s + 1) * c].iter_mut().zip(&row[kk * c..(kk + 1) * c]) {
                        *d += g;
                    }
                }
            }
        }
        Tensor::new(vec![b, l, c], dx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
}

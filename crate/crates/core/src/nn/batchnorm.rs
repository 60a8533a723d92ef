use serde::{Deserialize, Serialize};

use super::{Mode, Param, Tensor};
use crate::error::{MoilError, Result};

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

/// Batch normalization over every row of `[.. × C]`, i.e. over batch and time
/// per channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchNorm1d {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Set by the first training-mode forward pass.
    pub has_running_stats: bool,
    #[serde(skip)]
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    train: bool,
}

impl BatchNorm1d {
    pub fn new(channels: usize) -> Self {
        let mut gamma = Param::zeros(vec![channels], false);
        gamma.value.iter_mut().for_each(|g| *g = 1.0);
        Self {
            channels,
            gamma,
            beta: Param::zeros(vec![channels], false),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            has_running_stats: false,
            cache: None,
        }
    }

    fn check(&self, x: &Tensor) -> Result<usize> {
        let (rows, c) = x.rows_cols();
        if c != self.channels {
            return Err(MoilError::Shape(format!(
                "batchnorm expects {} channels, got {c}",
                self.channels
            )));
        }
        Ok(rows)
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let rows = self.check(x)?;
        let c = self.channels;
        let (mean, var, train) = match mode {
            Mode::Train => {
                if rows < 2 {
                    return Err(MoilError::Shape("batchnorm training needs at least 2 rows".into()));
                }
                let (mean, var) = batch_stats(x.data(), c);
                let unbias = rows as f64 / (rows - 1) as f64;
                for k in 0..c {
                    self.running_mean[k] = (1.0 - MOMENTUM) * self.running_mean[k] + MOMENTUM * mean[k];
                    self.running_var[k] = (1.0 - MOMENTUM) * self.running_var[k] + MOMENTUM * var[k] * unbias;
                }
                self.has_running_stats = true;
                (mean, var, true)
            }
            Mode::Eval => {
                self.require_stats()?;
                (self.running_mean.clone(), self.running_var.clone(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + EPS).sqrt()).collect();
        let mut xhat = x.data().to_vec();
        for row in xhat.chunks_exact_mut(c) {
            for k in 0..c {
                row[k] = (row[k] - mean[k]) * inv_std[k];
            }
        }
        let out = self.affine(&xhat);
        self.cache = Some(BnCache { xhat, inv_std, train });
        Ok(x.with_last_dim(c, out))
    }

    /// Eval-mode forward without caching.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        self.require_stats()?;
        let c = self.channels;
        let mut out = x.data().to_vec();
        for row in out.chunks_exact_mut(c) {
            for k in 0..c {
                let inv = 1.0 / (self.running_var[k] + EPS).sqrt();
                row[k] = (row[k] - self.running_mean[k]) * inv * self.gamma.value[k] + self.beta.value[k];
            }
        }
        Ok(x.with_last_dim(c, out))
    }

    fn require_stats(&self) -> Result<()> {
        if self.has_running_stats {
            Ok(())
        } else {
            Err(MoilError::Training(
                "batchnorm evaluated before any training step: no running statistics".into(),
            ))
        }
    }

    fn affine(&self, xhat: &[f64]) -> Vec<f64> {
        let c = self.channels;
        let mut out = xhat.to_vec();
        for row in out.chunks_exact_mut(c) {
            for k in 0..c {
                row[k] = row[k] * self.gamma.value[k] + self.beta.value[k];
            }
        }
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| MoilError::Training("batchnorm backward without forward".into()))?;
        let c = self.channels;
        let dy = grad_out.data();
        if dy.len() != cache.xhat.len() {
            return Err(MoilError::Shape(format!("batchnorm grad shape {:?}", grad_out.shape())));
        }
        let rows = dy.len() / c;
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for (dr, xr) in dy.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
            for k in 0..c {
                sum_dy[k] += dr[k];
                sum_dy_xhat[k] += dr[k] * xr[k];
            }
        }
        for (g, s) in self.gamma.grad_mut().iter_mut().zip(&sum_dy_xhat) {
            *g += s;
        }
        for (g, s) in self.beta.grad_mut().iter_mut().zip(&sum_dy) {
            *g += s;
        }
        let gamma = &self.gamma.value;
        let mut dx = vec![0.0; dy.len()];
        let n = rows as f64;
        for ((out, dr), xr) in dx.chunks_exact_mut(c).zip(dy.chunks_exact(c)).zip(cache.xhat.chunks_exact(c)) {
            for k in 0..c {
                out[k] = if cache.train {
                    gamma[k] * cache.inv_std[k] / n * (n * dr[k] - sum_dy[k] - xr[k] * sum_dy_xhat[k])
                } else {
                    gamma[k] * cache.inv_std[k] * dr[k]
                };
            }
        }
        self.cache = Some(cache);
        Ok(grad_out.with_last_dim(c, dx))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }
}

/// Per-channel mean and biased variance over rows.
fn batch_stats(x: &[f64], c: usize) -> (Vec<f64>, Vec<f64>) {
    let rows = (x.len() / c) as f64;
    let mut mean = vec![0.0; c];
    for row in x.chunks_exact(c) {
        for k in 0..c {
            mean[k] += row[k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows);
    let mut var = vec![0.0; c];
    for row in x.chunks_exact(c) {
        for k in 0..c {
            let d = row[k] - mean[k];
            var[k] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= rows);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(rows: usize, c: usize) -> Tensor {
        let data = (0..rows * c).map(|i| ((i * 7919) % 101) as f64 * 0.3 - 4.0).collect();
        Tensor::new(vec![2, rows / 2, c], data).unwrap()
    }

    fn channel_moments(x: &Tensor, c: usize, k: usize) -> (f64, f64) {
        let col: Vec<f64> = x.data().chunks_exact(c).map(|r| r[k]).collect();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / col.len() as f64;
        (m, v)
    }

    #[test]
    fn train_mode_standardizes() {
        let mut bn = BatchNorm1d::new(3);
        let y = bn.forward(&input(32, 3), Mode::Train).unwrap();
        for k in 0..3 {
            let (m, v) = channel_moments(&y, 3, k);
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn scale_and_shift() {
        let mut bn = BatchNorm1d::new(2);
        bn.gamma.value = vec![2.0, 2.0];
        bn.beta.value = vec![3.0, 3.0];
        let y = bn.forward(&input(64, 2), Mode::Train).unwrap();
        for k in 0..2 {
            let (m, v) = channel_moments(&y, 2, k);
            assert!((m - 3.0).abs() < 1e-9);
            assert!((v.sqrt() - 2.0).abs() < 1e-3);
        }
    }

    #[test]
    fn eval_before_train_errors() {
        let mut bn = BatchNorm1d::new(2);
        assert!(bn.forward(&input(4, 2), Mode::Eval).is_err());
        assert!(bn.infer(&input(4, 2)).is_err());
    }

    #[test]
    fn eval_does_not_touch_running_stats() {
        let mut bn = BatchNorm1d::new(2);
        bn.forward(&input(8, 2), Mode::Train).unwrap();
        let (m, v) = (bn.running_mean.clone(), bn.running_var.clone());
        let a = bn.forward(&input(8, 2), Mode::Eval).unwrap();
        assert_eq!((m, v), (bn.running_mean.clone(), bn.running_var.clone()));
        assert_eq!(a, bn.infer(&input(8, 2)).unwrap());
    }
}

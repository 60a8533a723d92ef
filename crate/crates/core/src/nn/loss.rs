use super::Tensor;
use crate::error::{MoilError, Result};

/// Value of a loss together with its gradient w.r.t. the prediction.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Tensor,
}

/// Mean squared error over `[B × l × N]`: mean over motifs of the mean over
/// time steps, averaged over the batch. With equal lengths this is the mean
/// of every squared difference.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<LossOutput> {
    if pred.shape() != target.shape() {
        return Err(MoilError::Shape(format!(
            "mse prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    if n == 0.0 {
        return Err(MoilError::Shape("mse on empty tensors".into()));
    }
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.data().iter().zip(target.data()) {
        let d = p - t;
        sum += d * d;
        grad.push(2.0 * d / n);
    }
    Ok(LossOutput {
        value: sum / n,
        grad: Tensor::new(pred.shape().to_vec(), grad)?,
    })
}

/// Softmax cross-entropy over `[B × l × C]` logits: the negative
/// log-likelihood summed over the time steps of each window, averaged over
/// the batch.
pub fn cross_entropy(logits: &Tensor, labels: &[u32]) -> Result<LossOutput> {
    let (b, l, c) = logits.dims3()?;
    if labels.len() != b * l {
        return Err(MoilError::Shape(format!("{} labels for {b}x{l} logits", labels.len())));
    }
    let mut sum = 0.0;
    let mut grad = vec![0.0; logits.len()];
    let inv_b = 1.0 / b as f64;
    for ((row, g), &y) in logits.data().chunks_exact(c).zip(grad.chunks_exact_mut(c)).zip(labels) {
        let y = y as usize;
        if y >= c {
            return Err(MoilError::InvalidInput(format!("class id {y} >= {c} classes")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (gi, &v) in g.iter_mut().zip(row) {
            *gi = (v - max).exp();
            z += *gi;
        }
        sum += z.ln() - (row[y] - max);
        for gi in g.iter_mut() {
            *gi = *gi / z * inv_b;
        }
        g[y] -= inv_b;
    }
    Ok(LossOutput {
        value: sum * inv_b,
        grad: Tensor::new(logits.shape().to_vec(), grad)?,
    })
}

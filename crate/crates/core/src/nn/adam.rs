use serde::{Deserialize, Serialize};

use super::Param;

/// Adam with bias correction. L2 regularization adds `weight_decay · θ` to
/// the gradient of decaying parameters before the moment updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
        }
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn update<'a, I: IntoIterator<Item = &'a mut Param>>(&mut self, params: I) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for p in params {
            let decay = if p.decay { self.weight_decay } else { 0.0 };
            let (value, grad, m, v) = p.optimizer_view();
            for i in 0..value.len() {
                let g = grad[i] + decay * value[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            p.zero_grad();
        }
    }
}

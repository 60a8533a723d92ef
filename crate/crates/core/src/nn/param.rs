use rand::Rng;
use serde::{Deserialize, Serialize};

/// A trainable tensor with its gradient accumulator and Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    #[serde(skip)]
    grad: Vec<f64>,
    /// Adam first moment; empty until the first optimizer step.
    #[serde(default)]
    pub m: Vec<f64>,
    /// Adam second moment; empty until the first optimizer step.
    #[serde(default)]
    pub v: Vec<f64>,
    /// Whether L2 regularization applies.
    pub decay: bool,
}

impl Param {
    pub fn zeros(shape: Vec<usize>, decay: bool) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            value: vec![0.0; n],
            grad: Vec::new(),
            m: Vec::new(),
            v: Vec::new(),
            decay,
        }
    }

    pub fn uniform<R: Rng>(shape: Vec<usize>, bound: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape, true);
        for x in &mut p.value {
            *x = rng.random_range(-bound..bound);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Gradient buffer, allocated on first use.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        if self.grad.len() != self.value.len() {
            self.grad = vec![0.0; self.value.len()];
        }
        &mut self.grad
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    /// Disjoint borrows of `(value, grad, m, v)`, allocating empty buffers.
    pub(crate) fn optimizer_view(&mut self) -> (&mut [f64], &[f64], &mut [f64], &mut [f64]) {
        let n = self.value.len();
        if self.grad.len() != n {
            self.grad = vec![0.0; n];
        }
        if self.m.len() != n || self.v.len() != n {
            self.m = vec![0.0; n];
            self.v = vec![0.0; n];
        }
        (&mut self.value, &self.grad, &mut self.m, &mut self.v)
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

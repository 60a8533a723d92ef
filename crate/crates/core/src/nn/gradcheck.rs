//! Central finite-difference gradient checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Mode, Sequential, Tensor};
use crate::error::{MoilError, Result};

/// Denominator floor for the relative error so coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    fn empty() -> Self {
        Self {
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        }
    }

    fn merge(self, other: GradCheck) -> GradCheck {
        if other.max_rel_error > self.max_rel_error {
            other
        } else {
            self
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares `analytic` against central differences of `f` around `point`.
pub fn grad_check<F>(mut f: F, point: &[f64], analytic: &[f64], eps: f64) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if point.len() != analytic.len() {
        return Err(MoilError::Shape(format!(
            "{} coordinates but {} analytic partials",
            point.len(),
            analytic.len()
        )));
    }
    let mut x = point.to_vec();
    let mut report = GradCheck::empty();
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let up = f(&x)?;
        x[i] = orig - eps;
        let down = f(&x)?;
        x[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_error || i == 0 {
            report = report.merge(GradCheck {
                max_rel_error: err,
                worst_index: i,
                analytic: analytic[i],
                numeric,
            });
        }
    }
    Ok(report)
}

/// Checks the input gradient and every parameter gradient of `net` under
/// the scalar loss `sum(net(x) ⊙ r)` for a fixed random `r`.
pub fn check_sequential(net: &mut Sequential, x: &Tensor, mode: Mode, eps: f64, seed: u64) -> Result<GradCheck> {
    let out = net.forward(x, mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r: Vec<f64> = (0..out.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let r_tensor = Tensor::new(out.shape().to_vec(), r.clone())?;
    net.zero_grad();
    let dx = net.backward(&r_tensor)?;
    let weighted = |y: &Tensor| y.data().iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();

    let shape = x.shape().to_vec();
    let mut report = {
        let mut probe = net.clone();
        grad_check(
            |v| Ok(weighted(&probe.forward(&Tensor::new(shape.clone(), v.to_vec())?, mode)?)),
            x.data(),
            dx.data(),
            eps,
        )?
    };

    let analytic: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad().to_vec()).collect();
    let mut probe = net.clone();
    for (pi, grads) in analytic.iter().enumerate() {
        let point = probe.params()[pi].value.clone();
        let r = grad_check(
            |v| {
                probe.params_mut()[pi].value.copy_from_slice(v);
                Ok(weighted(&probe.forward(x, mode)?))
            },
            &point,
            grads,
            eps,
        )?;
        probe.params_mut()[pi].value.copy_from_slice(&point);
        report = report.merge(r);
    }
    Ok(report)
}

//! Central finite-difference check of the full model's gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{ClipSum, Example, Group};

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateCheck {
    pub tensor: String,
    pub group: Group,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checks: Vec<CoordinateCheck>,
    pub tensors: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&CoordinateCheck> {
        self.checks.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn covers(&self, group: Group) -> bool {
        self.checks.iter().any(|c| c.group == group)
    }
}

/// Denominator floor for [`relative_error`]; central differences at
/// `h = 1e-5` carry about `1e-10` of absolute roundoff.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares backpropagated gradients with `(L(p+h) - L(p-h)) / 2h` at up to
/// `per_tensor` random coordinates of every parameter tensor.
pub fn check_model_gradients(
    model: &ClipSum<f64>,
    batch: &[&Example<f64>],
    per_tensor: usize,
    h: f64,
    floor: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, grads, _) = model.loss_and_grads(batch)?;
    let mut probe = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    for (i, grad) in grads.iter().enumerate() {
        let (name, group, numel) = {
            let p = model.params().at(i);
            (p.name.clone(), p.group, p.tensor.numel())
        };
        for k in sample(&mut rng, numel, per_tensor.min(numel)).into_iter() {
            let orig = model.params().tensor(i).data()[k];
            probe.params_mut().get_mut(&name).expect("known").data_mut()[k] = orig + h;
            let plus = probe.forward_loss(batch)?;
            probe.params_mut().get_mut(&name).expect("known").data_mut()[k] = orig - h;
            let minus = probe.forward_loss(batch)?;
            probe.params_mut().get_mut(&name).expect("known").data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grad.data()[k];
            checks.push(CoordinateCheck {
                tensor: name.clone(),
                group,
                index: k,
                analytic,
                numeric,
                rel_error: relative_error(analytic, numeric, floor),
            });
        }
    }
    Ok(GradCheckReport {
        checks,
        tensors: grads.len(),
    })
}

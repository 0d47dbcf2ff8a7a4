//! Adam with bias correction and decoupled weight decay.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// Per-parameter moment estimates plus the optimizer step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let first: Vec<Tensor<T>> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            second: first.clone(),
            first,
            step: 0,
        }
    }

    /// One optimizer step. `lrs[i]` is the learning rate for `params[i]`.
    pub fn step(
        &mut self,
        params: &mut [Tensor<T>],
        grads: &[Tensor<T>],
        lrs: &[f64],
        cfg: &AdamConfig,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != lrs.len() || params.len() != self.first.len() {
            return Err(Error::shape(
                "adam_step",
                &[params.len(), self.first.len()],
                &[grads.len(), lrs.len()],
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(Error::shape("adam_step", p.shape(), g.shape()));
            }
            if !(lrs[i] > 0.0) {
                return Err(Error::Config(format!("learning rate must be > 0, got {}", lrs[i])));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::lit(cfg.beta1);
        let b2 = T::lit(cfg.beta2);
        let one = T::one();
        let bc1 = T::lit(1.0 - cfg.beta1.powi(t));
        let bc2 = T::lit(1.0 - cfg.beta2.powi(t));
        let eps = T::lit(cfg.eps);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let lr = T::lit(lrs[i]);
            let decay = lr * T::lit(cfg.weight_decay);
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *pv -= decay * *pv;
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.ensure_finite("adam_step")?;
        }
        Ok(())
    }
}

/// Single-learning-rate convenience wrapper around [`AdamState::step`].
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    let lrs = vec![lr; params.len()];
    state.step(params, grads, &lrs, cfg)
}

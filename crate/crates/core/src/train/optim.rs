//! Adam with one learning rate for grid factors and one for the network.

use serde::{Deserialize, Serialize};

use super::backward::GradientSet;
use crate::field::{BlockId, FieldModel};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Learning rates: `factors` for the density and appearance grids,
/// `network` for the basis matrix and the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub factors: f64,
    pub network: f64,
}

impl LearningRates {
    pub fn for_block(&self, id: BlockId) -> f64 {
        if id.is_factor() {
            self.factors
        } else {
            self.network
        }
    }
}

/// One bias-corrected Adam update of a flat parameter array.
#[allow(clippy::too_many_arguments)]
pub fn adam_update<T: Real>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    lr: f64,
    step: u64,
    cfg: &AdamConfig,
) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (one, eps) = (T::one(), T::of(cfg.eps));
    let lr_t = T::of(lr / bc1);
    let inv_bc2 = T::of(1.0 / bc2);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        params[i] -= lr_t * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
    }
}

/// First and second moments shaped like the model.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: FieldModel<T>,
    pub v: FieldModel<T>,
    pub config: AdamConfig,
}

impl<T: Real> AdamState<T> {
    pub fn new(model: &FieldModel<T>, config: AdamConfig) -> Self {
        Self {
            step: 0,
            m: model.zeros_like(),
            v: model.zeros_like(),
            config,
        }
    }

    pub fn step(&mut self, model: &mut FieldModel<T>, grads: &GradientSet<T>, lr: &LearningRates) {
        self.step += 1;
        let blocks = model
            .blocks_mut()
            .into_iter()
            .zip(grads.model.blocks())
            .zip(self.m.blocks_mut())
            .zip(self.v.blocks_mut());
        for ((((id, p), (_, g)), (_, m)), (_, v)) in blocks {
            adam_update(p, g, m, v, lr.for_block(id), self.step, &self.config);
        }
    }
}

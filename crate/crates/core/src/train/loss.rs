//! Photometric, depth and sparsity losses.

use serde::{Deserialize, Serialize};

use crate::field::FieldModel;
use crate::real::Real;

/// Weights of the regularizer and the depth term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub omega_reg: f64,
    pub lambda_depth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            omega_reg: 1e-4,
            lambda_depth: 0.1,
        }
    }
}

impl LossWeights {
    pub fn is_valid(&self) -> bool {
        [self.omega_reg, self.lambda_depth]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
    }
}

/// Loss terms of one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// `rgb + lambda_depth * depth`.
    pub total: f64,
    /// Color error plus weighted regularizer.
    pub rgb: f64,
    /// Masked mean squared depth error.
    pub depth: f64,
    /// Mean over rays of the squared color error summed over channels.
    pub color_mse: f64,
    /// Mean absolute factor value (unweighted).
    pub regularizer: f64,
}

impl LossBreakdown {
    /// PSNR of the batch colors, from the per-channel mean squared error.
    pub fn psnr(&self) -> f64 {
        -10.0 * (self.color_mse / 3.0).log10()
    }
}

/// Mean absolute value over every density and appearance factor entry.
pub fn mean_abs_factors<T: Real>(model: &FieldModel<T>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (id, data) in model.blocks() {
        if id.is_factor() {
            sum += data.iter().map(|x| x.to_f64_lossy().abs()).sum::<f64>();
            count += data.len();
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// `Σ‖C − C̃‖² / N + ω · mean |θ|` over grid factors.
pub fn rgb_loss<T: Real>(pred: &[[f64; 3]], gt: &[[f64; 3]], model: &FieldModel<T>, omega_reg: f64) -> f64 {
    assert_eq!(pred.len(), gt.len(), "prediction and target batches differ in length");
    color_error(pred, gt) + omega_reg * mean_abs_factors(model)
}

pub(crate) fn color_error(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (0..3).map(|k| (p[k] - g[k]).powi(2)).sum::<f64>())
        .sum();
    sum / pred.len() as f64
}

/// Mean squared error over the valid entries only; zero when none are valid.
pub fn depth_loss(pred: &[f64], gt: &[f64], valid: &[bool]) -> f64 {
    assert!(pred.len() == gt.len() && gt.len() == valid.len());
    let (sum, n) = pred
        .iter()
        .zip(gt)
        .zip(valid)
        .filter(|(_, ok)| **ok)
        .fold((0.0, 0usize), |(s, n), ((p, g), _)| (s + (p - g).powi(2), n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// `L = L_rgb + λ_depth · L_depth`
pub fn total_loss(rgb: f64, depth: f64, lambda_depth: f64) -> f64 {
    rgb + lambda_depth * depth
}

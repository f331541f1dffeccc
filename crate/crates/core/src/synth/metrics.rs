//! Image quality metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::ColorImage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("images differ in size: {0}x{1} vs {2}x{3}")]
    Size(usize, usize, usize, usize),
}

fn check(a: &ColorImage, b: &ColorImage) -> Result<(), MetricError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(MetricError::Size(a.width, a.height, b.width, b.height))
    }
}

/// Mean squared error over all channels.
pub fn mse(a: &ColorImage, b: &ColorImage) -> Result<f64, MetricError> {
    check(a, b)?;
    let n = (a.pixels.len() * 3) as f64;
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(p, q)| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>())
        .sum();
    Ok(sum / n)
}

/// `10 log10(1 / MSE)`; `f64::INFINITY` for identical images.
pub fn psnr(a: &ColorImage, b: &ColorImage) -> Result<f64, MetricError> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of a `w × h` plane.
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (ow, oh) = (w + 1 - k, h + 1 - k);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM of the luma planes over every full Gaussian window (11 × 11,
/// σ = 1.5; the window shrinks to the smaller image side for tiny images).
pub fn ssim(a: &ColorImage, b: &ColorImage) -> Result<f64, MetricError> {
    check(a, b)?;
    let (w, h) = (a.width, a.height);
    let mut size = SSIM_WINDOW.min(w).min(h);
    if size % 2 == 0 {
        size -= 1;
    }
    let taps = gaussian_taps(size.max(1), SSIM_SIGMA);
    let (x, y) = (a.luma(), b.luma());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let (mx, ow, oh) = filter_valid(&x, w, h, &taps);
    let (my, _, _) = filter_valid(&y, w, h, &taps);
    let (sxx, _, _) = filter_valid(&xx, w, h, &taps);
    let (syy, _, _) = filter_valid(&yy, w, h, &taps);
    let (sxy, _, _) = filter_valid(&xy, w, h, &taps);
    let mut total = 0.0;
    for i in 0..ow * oh {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cov = sxy[i] - ux * uy;
        total += ((2.0 * ux * uy + C1) * (2.0 * cov + C2)) / ((ux * ux + uy * uy + C1) * (vx + vy + C2));
    }
    Ok(total / (ow * oh) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: usize,
    /// `None` when the images are identical (infinite PSNR).
    pub psnr: Option<f64>,
    pub ssim: f64,
}

/// Per-view metrics and their means over the views.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub views: Vec<ViewMetrics>,
    /// Mean of the finite per-view PSNRs; `None` if every view is identical.
    pub psnr: Option<f64>,
    /// True when at least one view reproduced its reference exactly.
    pub psnr_infinite: bool,
    pub ssim: f64,
}

impl MetricsReport {
    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (usize, &'a ColorImage, &'a ColorImage)>,
    ) -> Result<Self, MetricError> {
        let mut views = Vec::new();
        for (view, pred, gt) in pairs {
            let p = psnr(pred, gt)?;
            views.push(ViewMetrics {
                view,
                psnr: p.is_finite().then_some(p),
                ssim: ssim(pred, gt)?,
            });
        }
        let finite: Vec<f64> = views.iter().filter_map(|v| v.psnr).collect();
        let n = views.len().max(1) as f64;
        Ok(Self {
            psnr: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
            psnr_infinite: finite.len() < views.len(),
            ssim: views.iter().map(|v| v.ssim).sum::<f64>() / n,
            views,
        })
    }
}

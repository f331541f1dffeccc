//! Synthetic ground truth and image metrics.

mod metrics;
mod scene;

pub use metrics::{gaussian_taps, mse, psnr, ssim, MetricError, MetricsReport, ViewMetrics, SSIM_SIGMA, SSIM_WINDOW};
pub use scene::{
    add_depth_noise, raycast_view, toy_rig, toy_scene, AnalyticScene, Primitive, SceneError, TOY_OFFSETS,
};

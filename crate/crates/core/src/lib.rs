//! Depth-guided factorized radiance fields.
//!
//! Every input RGB-D view is lifted into a colored point cloud, written into
//! its own vector–matrix (VM) component of a density grid and an appearance
//! grid, and the per-view components are summed into one scene field. The
//! fused field is then refined by differentiable volume rendering against the
//! input colors and depths.
//!
//! Module map:
//! - [`geometry`]: pinhole cameras, rays, pixel lifting and the NDC frame.
//! - [`field`]: the VM-factorized grids, point-cloud initialization,
//!   interpolation, upsampling and parameter accounting.
//! - [`render`]: the color decoder and alpha compositing along rays.
//! - [`train`]: losses, hand-written reverse-mode gradients, the optimizer and
//!   the coarse-to-fine training loop.
//! - [`synth`]: analytic scenes, depth-noise injection and image metrics.
//! - [`io`]: dataset ingestion, PNG helpers and checkpoint persistence.

pub mod field;
pub mod geometry;
pub mod raster;
pub mod io;
pub mod real;
pub mod render;
pub mod synth;
pub mod train;

pub use field::{Aabb, BasisMatrix, FieldModel, GridSpec, VmFactor};
pub use geometry::{CameraModel, DepthMap, NdcFrame, PointCloud, Ray};
pub use raster::ColorImage;
pub use real::Real;
pub use render::{DecoderMlp, RenderOptions, RenderedPixel};
pub use train::{TrainConfig, TrainOutcome};

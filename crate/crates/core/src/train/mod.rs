//! The optimization loop.

mod backward;
mod loss;
mod optim;
mod schedule;

pub use backward::{
    backward, composite_backward, fd_gradient, forward_loss, BackwardResult, GradientSet, Jitter, ParamLocator,
    RayBatch, DEFAULT_SHARD_RAYS,
};
pub use loss::{depth_loss, mean_abs_factors, rgb_loss, total_loss, LossBreakdown, LossWeights};
pub use optim::{adam_update, AdamConfig, AdamState, LearningRates};
pub use schedule::{
    milestone_dims, milestone_size, proportional_dims, scaled_milestones, upsample_schedule, REFERENCE_ITERATIONS,
    REFERENCE_MILESTONES,
};

use std::time::Instant;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Aabb, FieldError, FieldModel, GridSpec, ModelShape};
use crate::geometry::{lift_depth_pixels, ColoredPoint, GeometryError, NdcFrame, NdcRay, PointCloud};
use crate::io::Dataset;
use crate::render::{ndc_interval, RenderError, RenderOptions};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("empty ray batch")]
    EmptyBatch,
    #[error("non-finite {what}")]
    NonFinite { what: String },
    #[error("training diverged at iteration {iteration}: {what}")]
    Diverged { iteration: usize, what: String },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Factors built from the per-view point clouds.
    PointCloud,
    /// Every factor entry uniform random.
    Random,
}

/// Training hyperparameters. Every field has a default, so a config file
/// only needs the keys it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr_factors: f64,
    pub lr_decoder: f64,
    pub omega_reg: f64,
    pub lambda_depth: f64,
    pub q_samples: usize,
    pub n0: usize,
    pub n_final: usize,
    /// Upsampling iterations; the reference milestones scaled to
    /// `iterations` when absent.
    pub upsample_iters: Option<Vec<usize>>,
    pub seed: u64,
    /// Near plane of the NDC frame; 0.9 × the closest valid depth when absent.
    pub near: Option<f64>,
    /// Far limit of ray marching; unbounded when absent.
    pub far: Option<f64>,
    pub channels: usize,
    pub hidden: usize,
    pub density_scale: f64,
    pub weight_threshold: f64,
    pub init: InitKind,
    /// Grid box padding as a fraction of the point-cloud extent.
    pub bbox_margin: f64,
    pub shard_rays: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            batch_size: 4096,
            lr_factors: 0.02,
            lr_decoder: 1e-3,
            omega_reg: 1e-4,
            lambda_depth: 0.1,
            q_samples: 64,
            n0: 128,
            n_final: 300,
            upsample_iters: None,
            seed: 0,
            near: None,
            far: None,
            channels: 27,
            hidden: 128,
            density_scale: 25.0,
            weight_threshold: 1e-4,
            init: InitKind::PointCloud,
            bbox_margin: 0.05,
            shard_rays: DEFAULT_SHARD_RAYS,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn milestones(&self) -> Vec<usize> {
        self.upsample_iters
            .clone()
            .unwrap_or_else(|| scaled_milestones(self.iterations))
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            omega_reg: self.omega_reg,
            lambda_depth: self.lambda_depth,
        }
    }

    pub fn learning_rates(&self) -> LearningRates {
        LearningRates {
            factors: self.lr_factors,
            network: self.lr_decoder,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.q_samples == 0 {
            return bad("q_samples must be at least 1");
        }
        if self.n0 < 2 || self.n_final < self.n0 {
            return bad("grid sizes need 2 <= n0 <= n_final");
        }
        if !self.loss_weights().is_valid() {
            return bad("loss weights must be finite and non-negative");
        }
        if !(self.lr_factors > 0.0 && self.lr_decoder > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.density_scale > 0.0) || !(self.weight_threshold >= 0.0) {
            return bad("density_scale must be positive and weight_threshold non-negative");
        }
        if self.channels == 0 || self.hidden == 0 {
            return bad("channels and hidden must be positive");
        }
        if let Some(iters) = &self.upsample_iters {
            if !iters.windows(2).all(|w| w[0] < w[1]) {
                return bad("upsample_iters must be strictly increasing");
            }
        }
        if let Some(near) = self.near {
            if !(near > 0.0 && near.is_finite()) {
                return bad("near must be positive");
            }
            if let Some(far) = self.far {
                if !(far > near) {
                    return bad("far must exceed near");
                }
            }
        }
        if !(self.bbox_margin >= 0.0) {
            return bad("bbox_margin must be non-negative");
        }
        Ok(())
    }
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub loss_total: f64,
    pub loss_rgb: f64,
    pub loss_depth: f64,
    pub train_psnr: f64,
    pub grid_dims: [usize; 3],
    pub wall_ms: u64,
}

/// Progress notifications from [`train_with`].
pub enum TrainEvent<'a> {
    /// Before the update of `iteration`; the model has had `iteration` updates.
    Step {
        iteration: usize,
        model: &'a FieldModel<f32>,
    },
    /// Right after an upsample at `iteration`.
    Milestone {
        iteration: usize,
        model: &'a FieldModel<f32>,
        frame: &'a NdcFrame,
        render: &'a RenderOptions,
    },
    Log(&'a LogRow),
}

/// Everything needed to render from a trained model.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: FieldModel<f32>,
    pub frame: NdcFrame,
    pub render: RenderOptions,
    pub log: Vec<LogRow>,
}

/// Training pixels as NDC rays with their targets.
#[derive(Clone, Debug)]
pub struct TrainingRays {
    pub rays: Vec<NdcRay>,
    pub colors: Vec<[f64; 3]>,
    pub depths: Vec<Option<f64>>,
}

impl TrainingRays {
    /// Every pixel of the training views whose ray reaches the NDC frame.
    pub fn collect(dataset: &Dataset, frame: &NdcFrame) -> Result<Self, TrainError> {
        let mut out = Self {
            rays: Vec::new(),
            colors: Vec::new(),
            depths: Vec::new(),
        };
        for &v in &dataset.train {
            let view = &dataset.views[v];
            let cam = &view.camera;
            for row in 0..cam.height() {
                for col in 0..cam.width() {
                    let (u, vv) = (col as f64 + 0.5, row as f64 + 0.5);
                    let ray = cam.camera_ray(u, vv)?;
                    let Some(ndc) = frame.ray_to_ndc(&ray) else { continue };
                    let depth = match view.depth.get(col, row) {
                        Some(d) => {
                            let x = cam.pixel_to_world(u, vv, d)?;
                            frame.depth_along(&ndc, &x).ok()
                        }
                        None => None,
                    };
                    out.rays.push(ndc);
                    out.colors.push(view.image.get(col, row));
                    out.depths.push(depth);
                }
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    /// Batch of the given ray indices, dropping rays that miss the grid box.
    pub fn batch<T: crate::real::Real>(
        &self,
        model: &FieldModel<T>,
        opts: &RenderOptions,
        indices: impl IntoIterator<Item = usize>,
    ) -> RayBatch {
        let mut batch = RayBatch::default();
        for i in indices {
            if let Some(interval) = ndc_interval(model, &self.rays[i], opts) {
                batch.push(self.rays[i], interval, self.colors[i], self.depths[i]);
            }
        }
        batch
    }
}

/// NDC frame of a dataset: the first training camera, with `near` from the
/// config or just in front of the closest valid depth.
pub fn dataset_frame(dataset: &Dataset, config: &TrainConfig) -> Result<NdcFrame, TrainError> {
    let first = *dataset
        .train
        .first()
        .ok_or_else(|| TrainError::Dataset("no training views".into()))?;
    let near = match config.near {
        Some(n) => n,
        None => {
            let closest = dataset
                .train
                .iter()
                .filter_map(|v| dataset.views[*v].depth.valid_range())
                .map(|r| r.0)
                .fold(f64::INFINITY, f64::min);
            if !closest.is_finite() {
                return Err(TrainError::Dataset("training views carry no valid depth".into()));
            }
            0.9 * closest
        }
    };
    Ok(NdcFrame::new(dataset.views[first].camera.clone(), near)?)
}

/// Per-view point clouds in the NDC frame. Points behind the reference near
/// plane cannot be represented in the frame and are dropped.
pub fn dataset_clouds(dataset: &Dataset, frame: &NdcFrame) -> Result<Vec<PointCloud>, TrainError> {
    dataset
        .train
        .iter()
        .map(|&v| {
            let view = &dataset.views[v];
            let points = lift_depth_pixels(&view.camera, &view.image, &view.depth)?
                .into_iter()
                .filter_map(|(_, _, p)| {
                    frame.point_to_ndc(&p.position).ok().map(|position| ColoredPoint {
                        position,
                        color: p.color,
                    })
                })
                .collect();
            Ok(PointCloud {
                source_view: v,
                points,
            })
        })
        .collect()
}

/// Padded bounding box of all cloud points, kept in front of the near plane.
pub fn cloud_bbox(clouds: &[PointCloud], margin: f64) -> Result<Aabb, TrainError> {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for c in clouds {
        if let Some((a, b)) = c.bounds() {
            lo = lo.inf(&a);
            hi = hi.sup(&b);
        }
    }
    if !lo.iter().all(|x| x.is_finite()) {
        return Err(TrainError::Dataset("no valid depth pixels to build a grid from".into()));
    }
    let mut min = [0.0; 3];
    let mut max = [0.0; 3];
    for a in 0..3 {
        let pad = ((hi[a] - lo[a]) * margin).max(1e-3);
        min[a] = lo[a] - pad;
        max[a] = hi[a] + pad;
    }
    min[2] = min[2].max(0.0);
    max[2] = max[2].min(1.0).max(min[2] + 1e-3);
    Ok(Aabb { min, max })
}

/// Model initialized as the config asks, with the render options it implies.
pub fn initialize(
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(FieldModel<f32>, NdcFrame, RenderOptions), TrainError> {
    config.validate()?;
    dataset.validate().map_err(|e| TrainError::Dataset(e.to_string()))?;
    let frame = dataset_frame(dataset, config)?;
    let clouds = dataset_clouds(dataset, &frame)?;
    let bbox = cloud_bbox(&clouds, config.bbox_margin)?;
    let dims = proportional_dims(config.n0, Some(bbox.extent()));
    let grid = GridSpec::new(dims, bbox)?;
    let shape = ModelShape {
        channels: config.channels,
        hidden: config.hidden,
    };
    let model = match config.init {
        InitKind::PointCloud => FieldModel::from_point_clouds(&clouds, grid, shape, config.seed)?,
        InitKind::Random => FieldModel::random(clouds.len(), grid, shape, config.seed)?,
    };
    let max_ndc_depth = config.far.map_or(1.0, |far| 1.0 - frame.near / far);
    let render = RenderOptions {
        samples: config.q_samples,
        density_scale: config.density_scale,
        weight_threshold: config.weight_threshold,
        max_ndc_depth,
    };
    Ok((model, frame, render))
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with(dataset, config, &mut |_| {})
}

/// Runs the full loop, reporting steps, milestones and log rows.
pub fn train_with(
    dataset: &Dataset,
    config: &TrainConfig,
    on_event: &mut dyn FnMut(TrainEvent<'_>),
) -> Result<TrainOutcome, TrainError> {
    let (mut model, frame, render) = initialize(dataset, config)?;
    let rays = TrainingRays::collect(dataset, &frame)?;
    if rays.is_empty() {
        return Err(TrainError::Dataset("no training ray reaches the scene".into()));
    }
    let milestones = config.milestones();
    let weights = config.loss_weights();
    let lrs = config.learning_rates();
    let mut adam = AdamState::new(&model, AdamConfig::default());
    let mut picker = backward::stream_rng(config.seed, u64::MAX, 0);
    let mut log = Vec::new();
    let start = Instant::now();

    for it in 0..config.iterations {
        if let Some(dims) = upsample_schedule(it, &milestones, config.n0, config.n_final, Some(model.grid.bbox.extent()))
        {
            if dims != model.grid.dims {
                model = model.upsample(dims.map(|d| d.max(1)))?;
                adam = AdamState::new(&model, adam.config);
            }
            on_event(TrainEvent::Milestone {
                iteration: it,
                model: &model,
                frame: &frame,
                render: &render,
            });
        }
        on_event(TrainEvent::Step {
            iteration: it,
            model: &model,
        });
        let picks: Vec<usize> = (0..config.batch_size)
            .map(|_| picker.random_range(0..rays.len()))
            .collect();
        let batch = rays.batch(&model, &render, picks);
        if batch.is_empty() {
            continue;
        }
        let jitter = Jitter {
            seed: config.seed,
            iteration: it as u64,
        };
        let result = backward(&model, &batch, &render, &weights, Some(jitter), config.shard_rays).map_err(|e| {
            match e {
                TrainError::NonFinite { what } => TrainError::Diverged { iteration: it, what },
                other => other,
            }
        })?;
        adam.step(&mut model, &result.grads, &lrs);

        if config.log_every > 0 && (it % config.log_every == 0 || it + 1 == config.iterations) {
            let row = LogRow {
                iteration: it,
                loss_total: result.loss.total,
                loss_rgb: result.loss.rgb,
                loss_depth: result.loss.depth,
                train_psnr: result.loss.psnr(),
                grid_dims: model.grid.dims,
                wall_ms: start.elapsed().as_millis() as u64,
            };
            on_event(TrainEvent::Log(&row));
            log.push(row);
        }
    }
    Ok(TrainOutcome {
        model,
        frame,
        render,
        log,
    })
}

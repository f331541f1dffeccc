//! Reverse-mode gradients of the training loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::loss::{color_error, depth_loss, mean_abs_factors, rgb_loss, total_loss, LossBreakdown, LossWeights};
use super::TrainError;
use crate::field::{BlockId, FieldModel, GridPoint, Mode};
use crate::geometry::NdcRay;
use crate::real::Real;
use crate::render::{
    encode_direction, render_pixel, sample_along_ray, DecoderScratch, DecoderTrace, RenderOptions, RenderedPixel,
};

/// Rays in the NDC frame with their targets.
#[derive(Clone, Debug, Default)]
pub struct RayBatch {
    pub rays: Vec<NdcRay>,
    /// Sampling interval along each ray.
    pub intervals: Vec<(f64, f64)>,
    pub colors: Vec<[f64; 3]>,
    /// Target distance along the normalized NDC ray.
    pub depths: Vec<f64>,
    pub depth_valid: Vec<bool>,
}

impl RayBatch {
    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    pub fn push(&mut self, ray: NdcRay, interval: (f64, f64), color: [f64; 3], depth: Option<f64>) {
        self.rays.push(ray);
        self.intervals.push(interval);
        self.colors.push(color);
        self.depths.push(depth.unwrap_or(0.0));
        self.depth_valid.push(depth.is_some());
    }

    pub fn valid_depths(&self) -> usize {
        self.depth_valid.iter().filter(|v| **v).count()
    }
}

/// Stratified jitter source for a batch: each ray draws from its own stream
/// keyed by `(seed, iteration, ray)`, so results do not depend on how rays
/// are spread across threads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Jitter {
    pub seed: u64,
    pub iteration: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn stream_rng(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(seed) ^ splitmix(a.wrapping_mul(3)) ^ b.wrapping_mul(0x2545_F491)))
}

/// Gradient with the same layout as the model it was taken of.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet<T> {
    pub model: FieldModel<T>,
}

impl<T: Real> GradientSet<T> {
    pub fn zeros_like(model: &FieldModel<T>) -> Self {
        Self {
            model: model.zeros_like(),
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet<T>) {
        for ((_, a), (_, b)) in self.model.blocks_mut().into_iter().zip(other.model.blocks()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    /// Gradient entry by block and flat index.
    pub fn get(&self, block: BlockId, index: usize) -> Option<T> {
        self.model
            .blocks()
            .into_iter()
            .find(|(id, _)| *id == block)
            .and_then(|(_, d)| d.get(index).copied())
    }

    /// First block holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<BlockId> {
        self.model
            .blocks()
            .into_iter()
            .find(|(_, d)| d.iter().any(|x| !x.is_finite()))
            .map(|(id, _)| id)
    }
}

/// Per-sample adjoints of `C = Σ w_q c_q` and `D = Σ w_q t_q` with respect
/// to the optical depths `s_q = σ_q Δ_q`, given upstream `g_color`, `g_depth`.
/// `colors[q]` is the (possibly skipped, then zero) decoded color.
pub fn composite_backward<T: Real>(
    optical: &[T],
    colors: &[[T; 3]],
    distances: &[T],
    g_color: [T; 3],
    g_depth: T,
) -> Vec<T> {
    let n = optical.len();
    let mut trans = Vec::with_capacity(n + 1);
    let mut t = T::one();
    let mut weights = Vec::with_capacity(n);
    for s in optical {
        trans.push(t);
        weights.push(t * -(-*s).exp_m1());
        t *= (-*s).exp();
    }
    trans.push(t);
    let mut out = vec![T::zero(); n];
    let mut tail = T::zero();
    for q in (0..n).rev() {
        let c = colors[q];
        let e = g_color[0] * c[0] + g_color[1] * c[1] + g_color[2] * c[2] + g_depth * distances[q];
        out[q] = trans[q + 1] * e - tail;
        tail += weights[q] * e;
    }
    out
}

struct RayWork<T> {
    trace: DecoderTrace<T>,
    scratch: DecoderScratch<T>,
    comps: Vec<T>,
    g_feature: Vec<T>,
    g_comps: Vec<T>,
}

impl<T: Real> RayWork<T> {
    fn new(model: &FieldModel<T>) -> Self {
        Self {
            trace: DecoderTrace::new(&model.decoder),
            scratch: DecoderScratch::new(&model.decoder),
            comps: vec![T::zero(); 3 * model.views()],
            g_feature: vec![T::zero(); model.channels()],
            g_comps: vec![T::zero(); 3 * model.views()],
        }
    }
}

struct RayOutcome {
    color_sq: f64,
    depth_sq: Option<f64>,
}

/// Forward and reverse pass of one ray. The gradient scales fold in the
/// batch means: `c_scale = 1/N`, `d_scale = λ/N_valid`.
#[allow(clippy::too_many_arguments)]
fn ray_backward<T: Real>(
    model: &FieldModel<T>,
    ray: &NdcRay,
    interval: (f64, f64),
    gt_color: [f64; 3],
    gt_depth: Option<f64>,
    opts: &RenderOptions,
    jitter: Option<&mut ChaCha8Rng>,
    c_scale: f64,
    d_scale: f64,
    grads: &mut GradientSet<T>,
    work: &mut RayWork<T>,
) -> Result<RayOutcome, TrainError> {
    let q_count = opts.samples;
    let mut dummy = ChaCha8Rng::seed_from_u64(0);
    let samples = match jitter {
        Some(rng) => sample_along_ray(&ray.ray, q_count, interval.0, interval.1, true, rng)?,
        None => sample_along_ray(&ray.ray, q_count, interval.0, interval.1, false, &mut dummy)?,
    };
    let scale = T::of(opts.density_scale);
    let dims = model.grid.dims;
    let p = model.channels();

    let mut points: Vec<Option<GridPoint<T>>> = Vec::with_capacity(q_count);
    let mut pre = vec![T::zero(); q_count];
    let mut optical = vec![T::zero(); q_count];
    for (q, x) in samples.positions.iter().enumerate() {
        let gp = model.grid.locate::<T>(x);
        if let Some(gp) = &gp {
            pre[q] = model.density_at(gp);
            optical[q] = pre[q].max(T::zero()) * scale * T::of(samples.deltas[q]);
        }
        points.push(gp);
    }

    let mut weights = Vec::with_capacity(q_count);
    let mut trans = T::one();
    for s in &optical {
        weights.push(trans * -(-*s).exp_m1());
        trans *= (-*s).exp();
    }

    encode_direction(&ray.ray.direction, &mut work.trace.input[p..]);
    let threshold = T::of(opts.weight_threshold);
    let mut colors = vec![[T::zero(); 3]; q_count];
    let mut decoded: Vec<(usize, DecoderTrace<T>, Vec<T>)> = Vec::new();
    let mut color = [T::zero(); 3];
    let mut depth = T::zero();
    let distances: Vec<T> = samples.distances.iter().map(|t| T::of(*t)).collect();
    for q in 0..q_count {
        depth += weights[q] * distances[q];
        if !(weights[q] > threshold) {
            continue;
        }
        let Some(gp) = &points[q] else { continue };
        model.appearance_components_at(gp, &mut work.comps);
        model.basis.apply(&work.comps, &mut work.trace.input[..p]);
        let c = model.decoder.forward_traced(&mut work.trace);
        colors[q] = c;
        for k in 0..3 {
            color[k] += weights[q] * c[k];
        }
        decoded.push((q, work.trace.clone(), work.comps.clone()));
    }

    let diff: [f64; 3] = [0, 1, 2].map(|k| color[k].to_f64_lossy() - gt_color[k]);
    let color_sq = diff.iter().map(|d| d * d).sum();
    let g_color = diff.map(|d| T::of(2.0 * c_scale * d));
    let (depth_sq, g_depth) = match gt_depth {
        Some(gt) => {
            let dd = depth.to_f64_lossy() - gt;
            (Some(dd * dd), T::of(2.0 * d_scale * dd))
        }
        None => (None, T::zero()),
    };

    let g_optical = composite_backward(&optical, &colors, &distances, g_color, g_depth);
    for q in 0..q_count {
        let Some(gp) = &points[q] else { continue };
        if !(pre[q] > T::zero()) {
            continue;
        }
        let g_pre = g_optical[q] * scale * T::of(samples.deltas[q]);
        if g_pre == T::zero() {
            continue;
        }
        for f in grads.model.density.iter_mut().zip(&model.density) {
            let (g, m) = f;
            for mode in Mode::ALL {
                let (lin, bil) = m.mode_terms(mode, &dims, gp);
                g.scatter_mode(mode, &dims, gp, g_pre * bil, g_pre * lin);
            }
        }
    }

    for (q, trace, comps) in &decoded {
        let w = weights[*q];
        let g_rgb = g_color.map(|g| g * w);
        model
            .decoder
            .backward_traced(trace, g_rgb, &mut grads.model.decoder, &mut work.g_feature, &mut work.scratch);
        let cols = model.basis.cols;
        work.g_comps.iter_mut().for_each(|v| *v = T::zero());
        for (r, gf) in work.g_feature.iter().enumerate() {
            if *gf == T::zero() {
                continue;
            }
            let row = r * cols;
            for c in 0..cols {
                grads.model.basis.data[row + c] += *gf * comps[c];
                work.g_comps[c] += *gf * model.basis.data[row + c];
            }
        }
        let gp = points[*q].as_ref().expect("decoded samples lie in the grid");
        for (view, (g, m)) in grads.model.appearance.iter_mut().zip(&model.appearance).enumerate() {
            for mode in Mode::ALL {
                let ga = work.g_comps[3 * view + mode.axis()];
                if ga == T::zero() {
                    continue;
                }
                let (lin, bil) = m.mode_terms(mode, &dims, gp);
                g.scatter_mode(mode, &dims, gp, ga * bil, ga * lin);
            }
        }
    }
    Ok(RayOutcome { color_sq, depth_sq })
}

/// Loss and gradient of a batch.
#[derive(Clone, Debug)]
pub struct BackwardResult<T> {
    pub loss: LossBreakdown,
    pub grads: GradientSet<T>,
}

/// Rays per gradient shard. Shards are reduced in index order, so the
/// result is bit-identical for any thread count.
pub const DEFAULT_SHARD_RAYS: usize = 64;

/// Analytic gradient of `rgb + λ_depth · depth` over every parameter.
pub fn backward<T: Real>(
    model: &FieldModel<T>,
    batch: &RayBatch,
    opts: &RenderOptions,
    weights: &LossWeights,
    jitter: Option<Jitter>,
    shard_rays: usize,
) -> Result<BackwardResult<T>, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let n = batch.len();
    let n_valid = batch.valid_depths();
    let c_scale = 1.0 / n as f64;
    let d_scale = if n_valid > 0 {
        weights.lambda_depth / n_valid as f64
    } else {
        0.0
    };
    let shard_rays = shard_rays.max(1);
    let shards: Vec<(usize, usize)> = (0..n)
        .step_by(shard_rays)
        .map(|s| (s, (s + shard_rays).min(n)))
        .collect();
    let partials = shards
        .par_iter()
        .map(|&(lo, hi)| {
            let mut grads = GradientSet::zeros_like(model);
            let mut work = RayWork::new(model);
            let mut color_sq = 0.0;
            let mut depth_sq = 0.0;
            for i in lo..hi {
                let mut rng = jitter.map(|j| stream_rng(j.seed, j.iteration, i as u64));
                let gt_depth = batch.depth_valid[i].then_some(batch.depths[i]);
                let out = ray_backward(
                    model,
                    &batch.rays[i],
                    batch.intervals[i],
                    batch.colors[i],
                    gt_depth,
                    opts,
                    rng.as_mut(),
                    c_scale,
                    d_scale,
                    &mut grads,
                    &mut work,
                )?;
                color_sq += out.color_sq;
                depth_sq += out.depth_sq.unwrap_or(0.0);
            }
            Ok((grads, color_sq, depth_sq))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;

    let mut iter = partials.into_iter();
    let (mut grads, mut color_sq, mut depth_sq) = iter.next().expect("non-empty batch");
    for (g, c, d) in iter {
        grads.add_assign(&g);
        color_sq += c;
        depth_sq += d;
    }

    let reg = add_regularizer_gradient(model, &mut grads, weights.omega_reg);
    let color_mse = color_sq / n as f64;
    let depth = if n_valid > 0 { depth_sq / n_valid as f64 } else { 0.0 };
    let rgb = color_mse + weights.omega_reg * reg;
    let loss = LossBreakdown {
        total: total_loss(rgb, depth, weights.lambda_depth),
        rgb,
        depth,
        color_mse,
        regularizer: reg,
    };
    if let Some(block) = grads.first_non_finite() {
        return Err(TrainError::NonFinite {
            what: format!("gradient of {block}"),
        });
    }
    if !loss.total.is_finite() {
        return Err(TrainError::NonFinite {
            what: "loss".to_string(),
        });
    }
    Ok(BackwardResult { loss, grads })
}

/// Adds `ω sign(θ) / M` to every factor gradient (zero at exactly zero);
/// returns the unweighted mean absolute value.
fn add_regularizer_gradient<T: Real>(model: &FieldModel<T>, grads: &mut GradientSet<T>, omega: f64) -> f64 {
    let total: usize = model
        .blocks()
        .iter()
        .filter(|(id, _)| id.is_factor())
        .map(|(_, d)| d.len())
        .sum();
    let reg = mean_abs_factors(model);
    if omega == 0.0 || total == 0 {
        return reg;
    }
    let step = T::of(omega / total as f64);
    for ((id, g), (_, p)) in grads.model.blocks_mut().into_iter().zip(model.blocks()) {
        if !id.is_factor() {
            continue;
        }
        for (gx, x) in g.iter_mut().zip(p) {
            if *x > T::zero() {
                *gx += step;
            } else if *x < T::zero() {
                *gx -= step;
            }
        }
    }
    reg
}

/// Batch loss through the plain renderer and the standalone loss functions,
/// with deterministic bin-center samples.
pub fn forward_loss<T: Real>(
    model: &FieldModel<T>,
    batch: &RayBatch,
    opts: &RenderOptions,
    weights: &LossWeights,
) -> Result<LossBreakdown, TrainError> {
    let mut colors = Vec::with_capacity(batch.len());
    let mut depths = Vec::with_capacity(batch.len());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (ray, (t0, t1)) in batch.rays.iter().zip(&batch.intervals) {
        let px: RenderedPixel<T> = render_pixel(model, &ray.ray, *t0, *t1, opts, false, &mut rng)?;
        colors.push(px.color.map(|c| c.to_f64_lossy()));
        depths.push(px.depth.to_f64_lossy());
    }
    let rgb = rgb_loss(&colors, &batch.colors, model, weights.omega_reg);
    let depth = depth_loss(&depths, &batch.depths, &batch.depth_valid);
    Ok(LossBreakdown {
        total: total_loss(rgb, depth, weights.lambda_depth),
        rgb,
        depth,
        color_mse: color_error(&colors, &batch.colors),
        regularizer: mean_abs_factors(model),
    })
}

/// Address of one scalar parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamLocator {
    pub block: BlockId,
    pub index: usize,
}

/// `(f(x + h) − f(x − h)) / 2h`
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Central difference `(L(θ + h) − L(θ − h)) / 2h` of the total loss.
pub fn fd_gradient<T: Real>(
    model: &mut FieldModel<T>,
    batch: &RayBatch,
    opts: &RenderOptions,
    weights: &LossWeights,
    at: ParamLocator,
    h: f64,
) -> Result<f64, TrainError> {
    if !(h > 0.0) {
        return Err(TrainError::Config(format!("finite-difference step {h} must be positive")));
    }
    let original = model
        .blocks()
        .into_iter()
        .find(|(id, _)| *id == at.block)
        .ok_or_else(|| TrainError::Config(format!("no parameter block {}", at.block)))?
        .1
        .get(at.index)
        .copied()
        .ok_or_else(|| TrainError::Config(format!("index {} outside block {}", at.index, at.block)))?
        .to_f64_lossy();
    let mut failure = None;
    let g = central_difference(
        |theta| {
            set_param(model, at, T::of(theta));
            match forward_loss(model, batch, opts, weights) {
                Ok(l) => l.total,
                Err(e) => {
                    failure = Some(e);
                    f64::NAN
                }
            }
        },
        original,
        h,
    );
    set_param(model, at, T::of(original));
    match failure {
        Some(e) => Err(e),
        None => Ok(g),
    }
}

fn set_param<T: Real>(model: &mut FieldModel<T>, at: ParamLocator, value: T) {
    for (id, data) in model.blocks_mut() {
        if id == at.block {
            data[at.index] = value;
        }
    }
}

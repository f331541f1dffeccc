//! Color decoding and volumetric compositing along rays.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldError, FieldModel};
use crate::geometry::{CameraModel, GeometryError, NdcFrame, NdcRay, Ray};
use crate::raster::ColorImage;
use crate::real::{axpy, dot, Real};

/// Sin/cos octaves used to encode the view direction.
pub const DIR_FREQS: usize = 2;

/// Width of the encoded view direction: the raw direction plus a sin and a
/// cos per octave and axis.
pub const DIR_ENCODING_WIDTH: usize = 3 + 6 * DIR_FREQS;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("sampling interval [{near}, {far}] with {samples} samples is degenerate")]
    DegenerateInterval { near: f64, far: f64, samples: usize },
    #[error("compositing inputs disagree in length ({sigmas} sigmas, {colors} colors, {deltas} deltas)")]
    LengthMismatch {
        sigmas: usize,
        colors: usize,
        deltas: usize,
    },
    #[error("sample {index}: density {sigma} and step {delta} must be non-negative and positive")]
    Contract { index: usize, sigma: f64, delta: f64 },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Fully connected layer; `weights` is `outputs × inputs`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    fn seeded(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect();
        Self {
            inputs,
            outputs,
            weights: draw(inputs * outputs),
            bias: draw(outputs),
        }
    }

    #[inline]
    fn forward(&self, x: &[T], out: &mut [T]) {
        for (o, y) in out.iter_mut().enumerate() {
            *y = dot(&self.weights[o * self.inputs..(o + 1) * self.inputs], x) + self.bias[o];
        }
    }

    /// Accumulate parameter gradients for upstream `g_out` at input `x`, and
    /// write the input gradient when `g_in` is given.
    #[inline]
    fn backward(&self, x: &[T], g_out: &[T], grads: &mut Dense<T>, g_in: Option<&mut [T]>) {
        for (o, g) in g_out.iter().enumerate() {
            if *g == T::zero() {
                continue;
            }
            axpy(*g, x, &mut grads.weights[o * self.inputs..(o + 1) * self.inputs]);
            grads.bias[o] += *g;
        }
        if let Some(g_in) = g_in {
            g_in.iter_mut().for_each(|v| *v = T::zero());
            for (o, g) in g_out.iter().enumerate() {
                if *g != T::zero() {
                    axpy(*g, &self.weights[o * self.inputs..(o + 1) * self.inputs], g_in);
                }
            }
        }
    }
}

/// The view-dependent color decoder: `[feature, enc(dir)] → 2 × ReLU hidden
/// → logistic RGB`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderMlp<T> {
    pub layers: Vec<Dense<T>>,
}

/// Activations of one decoder evaluation, kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct DecoderTrace<T> {
    pub input: Vec<T>,
    pub hidden1: Vec<T>,
    pub hidden2: Vec<T>,
    pub output: [T; 3],
}

impl<T: Real> DecoderTrace<T> {
    pub fn new(decoder: &DecoderMlp<T>) -> Self {
        Self {
            input: vec![T::zero(); decoder.input_width()],
            hidden1: vec![T::zero(); decoder.hidden_width()],
            hidden2: vec![T::zero(); decoder.hidden_width()],
            output: [T::zero(); 3],
        }
    }
}

#[inline]
fn logistic<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Real> DecoderMlp<T> {
    pub fn seeded(channels: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let input = channels + DIR_ENCODING_WIDTH;
        Self {
            layers: vec![
                Dense::seeded(input, hidden, rng),
                Dense::seeded(hidden, hidden, rng),
                Dense::seeded(hidden, 3, rng),
            ],
        }
    }

    /// All weights and biases zero; outputs logistic(0) everywhere.
    pub fn zeros(channels: usize, hidden: usize) -> Self {
        let layer = |i: usize, o: usize| Dense {
            inputs: i,
            outputs: o,
            weights: vec![T::zero(); i * o],
            bias: vec![T::zero(); o],
        };
        Self {
            layers: vec![
                layer(channels + DIR_ENCODING_WIDTH, hidden),
                layer(hidden, hidden),
                layer(hidden, 3),
            ],
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn feature_width(&self) -> usize {
        self.input_width() - DIR_ENCODING_WIDTH
    }

    pub fn hidden_width(&self) -> usize {
        self.layers[0].outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameter count of a decoder with the given shape.
    pub fn count_for(channels: usize, hidden: usize) -> usize {
        let input = channels + DIR_ENCODING_WIDTH;
        input * hidden + hidden + hidden * hidden + hidden + hidden * 3 + 3
    }

    /// Hidden width whose parameter count is exactly `count`, if any.
    pub fn hidden_for_count(channels: usize, count: usize) -> Option<usize> {
        // h^2 + (input + 5) h + 3 = count
        let b = (channels + DIR_ENCODING_WIDTH + 5) as f64;
        let c = count as f64 - 3.0;
        if c <= 0.0 {
            return None;
        }
        let h = ((-b + (b * b + 4.0 * c).sqrt()) / 2.0).round() as usize;
        (h >= 1 && Self::count_for(channels, h) == count).then_some(h)
    }

    /// Forward pass with `trace.input` already filled.
    pub fn forward_traced(&self, trace: &mut DecoderTrace<T>) -> [T; 3] {
        let [l1, l2, l3] = [&self.layers[0], &self.layers[1], &self.layers[2]];
        l1.forward(&trace.input, &mut trace.hidden1);
        trace.hidden1.iter_mut().for_each(|v| *v = v.max(T::zero()));
        l2.forward(&trace.hidden1, &mut trace.hidden2);
        trace.hidden2.iter_mut().for_each(|v| *v = v.max(T::zero()));
        let mut out = [T::zero(); 3];
        l3.forward(&trace.hidden2, &mut out);
        trace.output = out.map(logistic);
        trace.output
    }

    /// Reverse pass for one traced evaluation. Accumulates into `grads` and
    /// writes the gradient of the feature part of the input to `g_feature`.
    pub fn backward_traced(
        &self,
        trace: &DecoderTrace<T>,
        g_rgb: [T; 3],
        grads: &mut DecoderMlp<T>,
        g_feature: &mut [T],
        scratch: &mut DecoderScratch<T>,
    ) {
        let g_logit: [T; 3] = [0, 1, 2].map(|c| {
            let o = trace.output[c];
            g_rgb[c] * o * (T::one() - o)
        });
        let (g3, rest) = grads.layers.split_at_mut(2);
        let (g1, g2) = g3.split_at_mut(1);
        self.layers[2].backward(&trace.hidden2, &g_logit, &mut rest[0], Some(&mut scratch.g_hidden2));
        for (g, h) in scratch.g_hidden2.iter_mut().zip(&trace.hidden2) {
            if *h <= T::zero() {
                *g = T::zero();
            }
        }
        self.layers[1].backward(&trace.hidden1, &scratch.g_hidden2, &mut g2[0], Some(&mut scratch.g_hidden1));
        for (g, h) in scratch.g_hidden1.iter_mut().zip(&trace.hidden1) {
            if *h <= T::zero() {
                *g = T::zero();
            }
        }
        self.layers[0].backward(&trace.input, &scratch.g_hidden1, &mut g1[0], Some(&mut scratch.g_input));
        g_feature.copy_from_slice(&scratch.g_input[..g_feature.len()]);
    }

    pub fn cast<U: Real>(&self) -> DecoderMlp<U> {
        DecoderMlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    weights: l.weights.iter().map(|x| U::of(x.to_f64_lossy())).collect(),
                    bias: l.bias.iter().map(|x| U::of(x.to_f64_lossy())).collect(),
                })
                .collect(),
        }
    }
}

/// Reusable buffers for [`DecoderMlp::backward_traced`].
#[derive(Clone, Debug)]
pub struct DecoderScratch<T> {
    g_hidden1: Vec<T>,
    g_hidden2: Vec<T>,
    g_input: Vec<T>,
}

impl<T: Real> DecoderScratch<T> {
    pub fn new(decoder: &DecoderMlp<T>) -> Self {
        Self {
            g_hidden1: vec![T::zero(); decoder.hidden_width()],
            g_hidden2: vec![T::zero(); decoder.hidden_width()],
            g_input: vec![T::zero(); decoder.input_width()],
        }
    }
}

/// `[d, sin(2^k π d), cos(2^k π d)]` for `k < DIR_FREQS`.
pub fn encode_direction<T: Real>(dir: &Vector3<f64>, out: &mut [T]) {
    debug_assert_eq!(out.len(), DIR_ENCODING_WIDTH);
    for a in 0..3 {
        out[a] = T::of(dir[a]);
    }
    let mut o = 3;
    for k in 0..DIR_FREQS {
        let w = std::f64::consts::PI * (1u32 << k) as f64;
        for a in 0..3 {
            out[o] = T::of((w * dir[a]).sin());
            out[o + 1] = T::of((w * dir[a]).cos());
            o += 2;
        }
    }
}

/// Color `S(feature, dir)`.
pub fn decode_color<T: Real>(feature: &[T], dir: &Vector3<f64>, decoder: &DecoderMlp<T>) -> [T; 3] {
    let mut trace = DecoderTrace::new(decoder);
    let p = decoder.feature_width();
    trace.input[..p].copy_from_slice(feature);
    encode_direction(dir, &mut trace.input[p..]);
    decoder.forward_traced(&mut trace)
}

/// Stratified samples along a ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySamples {
    pub positions: Vec<Vector3<f64>>,
    pub deltas: Vec<f64>,
    pub distances: Vec<f64>,
}

/// `samples` bins evenly covering `[near, far]`; one sample per bin, at the
/// bin center or uniformly inside it when `jitter` is set.
pub fn sample_along_ray(
    ray: &Ray,
    samples: usize,
    near: f64,
    far: f64,
    jitter: bool,
    rng: &mut impl Rng,
) -> Result<RaySamples, RenderError> {
    if samples == 0 || !(far > near) || !near.is_finite() || !far.is_finite() {
        return Err(RenderError::DegenerateInterval { near, far, samples });
    }
    let bin = (far - near) / samples as f64;
    let distances: Vec<f64> = (0..samples)
        .map(|q| {
            let u = if jitter { rng.random::<f64>() } else { 0.5 };
            near + (q as f64 + u) * bin
        })
        .collect();
    Ok(RaySamples {
        positions: distances.iter().map(|t| ray.at(*t)).collect(),
        deltas: vec![bin; samples],
        distances,
    })
}

/// Composited output of one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedPixel<T> {
    pub color: [T; 3],
    pub depth: T,
    pub weights: Vec<T>,
    pub final_transmittance: T,
}

impl<T: Real> RenderedPixel<T> {
    pub fn empty() -> Self {
        Self {
            color: [T::zero(); 3],
            depth: T::zero(),
            weights: Vec::new(),
            final_transmittance: T::one(),
        }
    }
}

/// Alpha weights `w_q = τ_q (1 - exp(-σ_q Δ_q))` and the final transmittance.
pub fn compositing_weights<T: Real>(sigmas: &[T], deltas: &[T]) -> (Vec<T>, T) {
    let mut trans = T::one();
    let weights = sigmas
        .iter()
        .zip(deltas)
        .map(|(s, d)| {
            let tau = *s * *d;
            let alpha = -(-tau).exp_m1();
            let w = trans * alpha;
            trans *= (-tau).exp();
            w
        })
        .collect();
    (weights, trans)
}

/// `C = Σ_q τ_q (1 - exp(-σ_q Δ_q)) c_q`, composited over black.
pub fn composite<T: Real>(sigmas: &[T], colors: &[[T; 3]], deltas: &[T]) -> Result<RenderedPixel<T>, RenderError> {
    if sigmas.len() != colors.len() || sigmas.len() != deltas.len() {
        return Err(RenderError::LengthMismatch {
            sigmas: sigmas.len(),
            colors: colors.len(),
            deltas: deltas.len(),
        });
    }
    for (index, (s, d)) in sigmas.iter().zip(deltas).enumerate() {
        if !(*s >= T::zero()) || !(*d > T::zero()) {
            return Err(RenderError::Contract {
                index,
                sigma: s.to_f64_lossy(),
                delta: d.to_f64_lossy(),
            });
        }
    }
    let (weights, final_transmittance) = compositing_weights(sigmas, deltas);
    let mut color = [T::zero(); 3];
    for (w, c) in weights.iter().zip(colors) {
        for k in 0..3 {
            color[k] += *w * c[k];
        }
    }
    Ok(RenderedPixel {
        color,
        depth: T::zero(),
        weights,
        final_transmittance,
    })
}

/// Un-normalized expected termination distance `Σ_q w_q t_q`.
pub fn expected_depth<T: Real>(weights: &[T], distances: &[T]) -> Result<T, RenderError> {
    if weights.len() != distances.len() {
        return Err(RenderError::LengthMismatch {
            sigmas: weights.len(),
            colors: distances.len(),
            deltas: distances.len(),
        });
    }
    Ok(weights.iter().zip(distances).map(|(w, t)| *w * *t).sum())
}

/// Ray-marching parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    /// Samples per ray `Q`.
    pub samples: usize,
    /// Multiplier from field density to optical density per NDC unit.
    pub density_scale: f64,
    /// Samples whose compositing weight is at or below this are not decoded
    /// and contribute no color. Zero decodes every sample with density.
    pub weight_threshold: f64,
    /// Upper limit of the NDC depth marched along each ray, in `(0, 1]`.
    pub max_ndc_depth: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            samples: 64,
            density_scale: 1.0,
            weight_threshold: 0.0,
            max_ndc_depth: 1.0,
        }
    }
}

/// Render one ray through the fused field. Samples outside the grid box
/// carry no density.
pub fn render_pixel<T: Real>(
    model: &FieldModel<T>,
    ray: &Ray,
    near: f64,
    far: f64,
    opts: &RenderOptions,
    jitter: bool,
    rng: &mut impl Rng,
) -> Result<RenderedPixel<T>, RenderError> {
    let samples = sample_along_ray(ray, opts.samples, near, far, jitter, rng)?;
    let n = opts.samples;
    let scale = T::of(opts.density_scale);
    let mut sigmas = vec![T::zero(); n];
    let mut points = Vec::with_capacity(n);
    for (q, x) in samples.positions.iter().enumerate() {
        let gp = model.grid.locate::<T>(x);
        if let Some(gp) = &gp {
            sigmas[q] = model.density_at(gp).max(T::zero()) * scale;
        }
        points.push(gp);
    }
    let deltas: Vec<T> = samples.deltas.iter().map(|d| T::of(*d)).collect();
    let (weights, final_transmittance) = compositing_weights(&sigmas, &deltas);

    let p = model.channels();
    let mut comps = vec![T::zero(); 3 * model.views()];
    let mut trace = DecoderTrace::new(&model.decoder);
    encode_direction(&ray.direction, &mut trace.input[p..]);
    let threshold = T::of(opts.weight_threshold);
    let mut color = [T::zero(); 3];
    let mut depth = T::zero();
    for q in 0..n {
        let w = weights[q];
        depth += w * T::of(samples.distances[q]);
        if !(w > threshold) {
            continue;
        }
        let Some(gp) = &points[q] else { continue };
        model.appearance_components_at(gp, &mut comps);
        model.basis.apply(&comps, &mut trace.input[..p]);
        let c = model.decoder.forward_traced(&mut trace);
        for k in 0..3 {
            color[k] += w * c[k];
        }
    }
    Ok(RenderedPixel {
        color,
        depth,
        weights,
        final_transmittance,
    })
}

/// Sampling interval of an NDC ray: its overlap with the grid box, capped
/// at `max_ndc_depth`.
pub fn ndc_interval<T: Real>(model: &FieldModel<T>, ndc: &NdcRay, opts: &RenderOptions) -> Option<(f64, f64)> {
    let (t0, t1) = model.grid.bbox.ray_interval(&ndc.ray.origin, &ndc.ray.direction)?;
    let t1 = t1.min(ndc.max_distance * opts.max_ndc_depth);
    (t1 > t0).then_some((t0, t1))
}

/// Deterministic render of a ray given in the NDC frame.
pub fn render_ndc_ray<T: Real>(
    model: &FieldModel<T>,
    ndc: &NdcRay,
    opts: &RenderOptions,
) -> Result<RenderedPixel<T>, RenderError> {
    match ndc_interval(model, ndc, opts) {
        Some((t0, t1)) => render_pixel(model, &ndc.ray, t0, t1, opts, false, &mut rand::rng()),
        None => Ok(RenderedPixel::empty()),
    }
}

/// Color image and expected-depth map (along NDC rays) seen by `camera`.
pub fn render_view<T: Real>(
    model: &FieldModel<T>,
    frame: &NdcFrame,
    camera: &CameraModel,
    opts: &RenderOptions,
) -> Result<(ColorImage, Vec<f64>), RenderError> {
    let (w, h) = (camera.width(), camera.height());
    let pixels: Vec<([f64; 3], f64)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (col, row) = (i % w, i / w);
            let ray = camera.camera_ray(col as f64 + 0.5, row as f64 + 0.5)?;
            let px = match frame.ray_to_ndc(&ray) {
                Some(ndc) => render_ndc_ray(model, &ndc, opts)?,
                None => RenderedPixel::empty(),
            };
            Ok((px.color.map(|c| c.to_f64_lossy()), px.depth.to_f64_lossy()))
        })
        .collect::<Result<_, RenderError>>()?;
    let image = ColorImage {
        width: w,
        height: h,
        pixels: pixels.iter().map(|p| p.0).collect(),
    };
    Ok((image, pixels.iter().map(|p| p.1).collect()))
}

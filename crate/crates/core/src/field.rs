//! Vector–matrix factorized density and appearance grids.
//!
//! Each input view owns exactly one VM component in each grid. A component
//! is three (axis vector, complementary plane) pairs:
//!
//! | mode | vector axis | plane rows × cols |
//! |------|-------------|-------------------|
//! | X    | I           | J × K             |
//! | Y    | J           | I × K             |
//! | Z    | K           | I × J             |
//!
//! Density is the rectified sum of all `v ∘ M` terms over views and modes.
//! Appearance stacks the `3n` terms (view-major, then X/Y/Z) and maps them
//! through the basis matrix `B` (P × 3n) to a P-channel feature.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PointCloud;
use crate::real::Real;
use crate::render::DecoderMlp;

/// Largest voxel count [`FieldModel::dense_reconstruct`] will materialize by default.
pub const DEFAULT_MATERIALIZE_CAP: usize = 64 * 64 * 64;

/// Range of the seeded uniform draws used for non-indicator initialization.
pub const RANDOM_INIT_RANGE: (f64, f64) = (0.05, 0.35);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("query ({x}, {y}, {z}) lies outside the grid bounding box")]
    OutOfBounds { x: f64, y: f64, z: f64 },
    #[error("no point clouds to initialize from")]
    NoClouds,
    #[error("view {view}: point {index} at ({x}, {y}, {z}) lies outside the grid bounding box")]
    PointOutsideGrid {
        view: usize,
        index: usize,
        x: f64,
        y: f64,
        z: f64,
    },
    #[error("upsampling cannot shrink the grid from {from:?} to {to:?}")]
    Shrink { from: [usize; 3], to: [usize; 3] },
    #[error("refusing to materialize {voxels} voxels (cap {cap})")]
    TooLarge { voxels: usize, cap: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    X = 0,
    Y = 1,
    Z = 2,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::X, Mode::Y, Mode::Z];

    #[inline]
    pub fn axis(self) -> usize {
        self as usize
    }

    /// Axes spanned by the plane paired with this mode's vector.
    #[inline]
    pub fn plane_axes(self) -> (usize, usize) {
        match self {
            Mode::X => (1, 2),
            Mode::Y => (0, 2),
            Mode::Z => (0, 1),
        }
    }

    pub fn plane_name(self) -> &'static str {
        match self {
            Mode::X => "yz",
            Mode::Y => "xz",
            Mode::Z => "xy",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    /// Parametric interval `[t0, t1]` (clipped to `t >= 0`) where
    /// `origin + t * dir` is inside the box.
    pub fn ray_interval(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if dir[a].abs() < 1e-300 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let (mut lo, mut hi) = ((self.min[a] - origin[a]) * inv, (self.max[a] - origin[a]) * inv);
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            t0 = t0.max(lo);
            t1 = t1.min(hi);
        }
        (t1 > t0).then_some((t0, t1))
    }
}

/// Grid resolution plus the box (in NDC) its corner nodes span.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub bbox: Aabb,
}

/// Continuous grid location: lower node index and fractional offset per axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint<T> {
    pub base: [usize; 3],
    pub frac: [T; 3],
}

impl GridSpec {
    pub fn new(dims: [usize; 3], bbox: Aabb) -> Result<Self, FieldError> {
        if dims.iter().any(|d| *d < 2) {
            return Err(FieldError::InvalidGrid(format!(
                "every axis needs at least 2 nodes, got {dims:?}"
            )));
        }
        if (0..3).any(|a| !(bbox.min[a] < bbox.max[a]) || !bbox.min[a].is_finite() || !bbox.max[a].is_finite()) {
            return Err(FieldError::InvalidGrid(format!(
                "bbox min {:?} must be below max {:?}",
                bbox.min, bbox.max
            )));
        }
        Ok(Self { dims, bbox })
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Continuous node coordinate along `axis`.
    #[inline]
    fn node_coord(&self, axis: usize, x: f64) -> f64 {
        (x - self.bbox.min[axis]) / (self.bbox.max[axis] - self.bbox.min[axis])
            * (self.dims[axis] - 1) as f64
    }

    /// World position of node `(i, j, k)`.
    pub fn node_position(&self, idx: [usize; 3]) -> Vector3<f64> {
        Vector3::from_fn(|a, _| {
            self.bbox.min[a]
                + (self.bbox.max[a] - self.bbox.min[a]) * idx[a] as f64 / (self.dims[a] - 1) as f64
        })
    }

    pub fn locate<T: Real>(&self, x: &Vector3<f64>) -> Option<GridPoint<T>> {
        let mut base = [0usize; 3];
        let mut frac = [T::zero(); 3];
        for a in 0..3 {
            let u = self.node_coord(a, x[a]);
            let hi = (self.dims[a] - 1) as f64;
            let slack = 1e-9 * hi.max(1.0);
            if !(u >= -slack && u <= hi + slack) {
                return None;
            }
            let u = u.clamp(0.0, hi);
            let b = (u.floor() as usize).min(self.dims[a] - 2);
            base[a] = b;
            frac[a] = T::of(u - b as f64);
        }
        Some(GridPoint { base, frac })
    }

    pub fn locate_or_err<T: Real>(&self, x: &Vector3<f64>) -> Result<GridPoint<T>, FieldError> {
        self.locate(x).ok_or(FieldError::OutOfBounds {
            x: x[0],
            y: x[1],
            z: x[2],
        })
    }

    /// Nearest node per axis, or `None` outside the box.
    pub fn nearest_node(&self, x: &Vector3<f64>) -> Option<[usize; 3]> {
        let gp = self.locate::<f64>(x)?;
        Some([0, 1, 2].map(|a| gp.base[a] + usize::from(gp.frac[a] >= 0.5)))
    }

    pub fn plane_shape(&self, mode: Mode) -> (usize, usize) {
        let (a, b) = mode.plane_axes();
        (self.dims[a], self.dims[b])
    }
}

#[inline]
fn lerp<T: Real>(v: &[T], i: usize, f: T) -> T {
    v[i] + (v[i + 1] - v[i]) * f
}

#[inline]
fn bilerp<T: Real>(m: &[T], cols: usize, r: usize, fr: T, c: usize, fc: T) -> T {
    let row0 = r * cols + c;
    let row1 = row0 + cols;
    let top = m[row0] + (m[row0 + 1] - m[row0]) * fc;
    let bot = m[row1] + (m[row1 + 1] - m[row1]) * fc;
    top + (bot - top) * fr
}

/// One VM component: a vector and a complementary plane per mode.
#[derive(Clone, Debug, PartialEq)]
pub struct VmFactor<T> {
    pub vectors: [Vec<T>; 3],
    /// Row-major planes, shaped by [`GridSpec::plane_shape`].
    pub planes: [Vec<T>; 3],
}

impl<T: Real> VmFactor<T> {
    pub fn filled(dims: [usize; 3], value: T) -> Self {
        Self {
            vectors: [0, 1, 2].map(|a| vec![value; dims[a]]),
            planes: Mode::ALL.map(|m| {
                let (a, b) = m.plane_axes();
                vec![value; dims[a] * dims[b]]
            }),
        }
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Self::filled(dims, T::zero())
    }

    pub fn random(dims: [usize; 3], rng: &mut ChaCha8Rng) -> Self {
        let mut f = Self::zeros(dims);
        for v in f.vectors.iter_mut().chain(f.planes.iter_mut()) {
            fill_uniform(v, rng);
        }
        f
    }

    pub fn param_count(&self) -> usize {
        self.vectors.iter().chain(&self.planes).map(Vec::len).sum()
    }

    pub fn dims(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.vectors[a].len())
    }

    /// `(vector(x_axis), plane(complement))` interpolated at `gp`.
    #[inline]
    pub fn mode_terms(&self, mode: Mode, dims: &[usize; 3], gp: &GridPoint<T>) -> (T, T) {
        let axis = mode.axis();
        let (a, b) = mode.plane_axes();
        let lin = lerp(&self.vectors[axis], gp.base[axis], gp.frac[axis]);
        let bil = bilerp(
            &self.planes[axis],
            dims[b],
            gp.base[a],
            gp.frac[a],
            gp.base[b],
            gp.frac[b],
        );
        (lin, bil)
    }

    /// Adjoint of [`Self::mode_terms`]: accumulate `g_lin` into the two
    /// vector taps and `g_bil` into the four plane taps.
    #[inline]
    pub fn scatter_mode(&mut self, mode: Mode, dims: &[usize; 3], gp: &GridPoint<T>, g_lin: T, g_bil: T) {
        let axis = mode.axis();
        let (a, b) = mode.plane_axes();
        let i = gp.base[axis];
        let f = gp.frac[axis];
        let v = &mut self.vectors[axis];
        v[i] += g_lin * (T::one() - f);
        v[i + 1] += g_lin * f;

        let cols = dims[b];
        let (fr, fc) = (gp.frac[a], gp.frac[b]);
        let row0 = gp.base[a] * cols + gp.base[b];
        let row1 = row0 + cols;
        let m = &mut self.planes[axis];
        let top = g_bil * (T::one() - fr);
        let bot = g_bil * fr;
        m[row0] += top * (T::one() - fc);
        m[row0 + 1] += top * fc;
        m[row1] += bot * (T::one() - fc);
        m[row1 + 1] += bot * fc;
    }
}

fn fill_uniform<T: Real>(v: &mut [T], rng: &mut ChaCha8Rng) {
    let (lo, hi) = RANDOM_INIT_RANGE;
    for x in v {
        *x = T::of(rng.random_range(lo..hi));
    }
}

/// Linear interpolation of `v` at the axis coordinate times bilinear
/// interpolation of `m` at the complementary plane coordinates.
pub fn component_interp<T: Real>(
    grid: &GridSpec,
    mode: Mode,
    v: &[T],
    m: &[T],
    x: &Vector3<f64>,
) -> Result<T, FieldError> {
    let (a, b) = mode.plane_axes();
    if v.len() != grid.dims[mode.axis()] || m.len() != grid.dims[a] * grid.dims[b] {
        return Err(FieldError::Shape(format!(
            "mode {mode:?} factor shapes do not match grid {:?}",
            grid.dims
        )));
    }
    let gp = grid.locate_or_err::<T>(x)?;
    let axis = mode.axis();
    Ok(lerp(v, gp.base[axis], gp.frac[axis])
        * bilerp(m, grid.dims[b], gp.base[a], gp.frac[a], gp.base[b], gp.frac[b]))
}

/// The `P × 3n` appearance dictionary, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisMatrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> BasisMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    /// Seeded uniform draw; the first three rows (color slots) are copies of
    /// row 0 so those feature channels start as one shared grayscale signal.
    pub fn seeded(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut b = Self::zeros(rows, cols);
        fill_uniform(&mut b.data, rng);
        for r in 1..rows.min(3) {
            let (head, tail) = b.data.split_at_mut(r * cols);
            tail[..cols].copy_from_slice(&head[..cols]);
        }
        b
    }

    /// `out = B · a`
    #[inline]
    pub fn apply(&self, a: &[T], out: &mut [T]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = crate::real::dot(&self.data[r * self.cols..(r + 1) * self.cols], a);
        }
    }
}

/// Stable identity of one parameter array, in checkpoint order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockId {
    DensityVector { view: usize, mode: Mode },
    DensityPlane { view: usize, mode: Mode },
    AppearanceVector { view: usize, mode: Mode },
    AppearancePlane { view: usize, mode: Mode },
    Basis,
    DecoderWeight { layer: usize },
    DecoderBias { layer: usize },
}

impl BlockId {
    /// Grid factors, the arrays covered by the sparsity regularizer.
    pub fn is_factor(&self) -> bool {
        matches!(
            self,
            BlockId::DensityVector { .. }
                | BlockId::DensityPlane { .. }
                | BlockId::AppearanceVector { .. }
                | BlockId::AppearancePlane { .. }
        )
    }

    pub fn is_decoder(&self) -> bool {
        matches!(self, BlockId::DecoderWeight { .. } | BlockId::DecoderBias { .. })
    }
}

impl std::fmt::Display for BlockId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BlockId::DensityVector { view, mode } => write!(f, "density[{view}].v_{mode:?}"),
            BlockId::DensityPlane { view, mode } => write!(f, "density[{view}].m_{}", mode.plane_name()),
            BlockId::AppearanceVector { view, mode } => write!(f, "appearance[{view}].v_{mode:?}"),
            BlockId::AppearancePlane { view, mode } => {
                write!(f, "appearance[{view}].m_{}", mode.plane_name())
            }
            BlockId::Basis => write!(f, "basis"),
            BlockId::DecoderWeight { layer } => write!(f, "decoder.layer{layer}.weight"),
            BlockId::DecoderBias { layer } => write!(f, "decoder.layer{layer}.bias"),
        }
    }
}

/// Parameter counts for the factorized model against a dense grid with the
/// same resolution and `P + 1` channels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCount {
    pub factorized: u64,
    pub dense_equivalent: u64,
    pub ratio: f64,
}

/// Closed-form count for a model with `views` components per grid.
pub fn count_params(dims: [usize; 3], views: usize, channels: usize, decoder_params: usize) -> ParamCount {
    let [i, j, k] = dims.map(|d| d as u64);
    let per_component = (i + j + k) + (j * k + i * k + i * j);
    let factorized = 2 * views as u64 * per_component
        + 3 * views as u64 * channels as u64
        + decoder_params as u64;
    let dense_equivalent = i * j * k * (channels as u64 + 1);
    ParamCount {
        factorized,
        dense_equivalent,
        ratio: factorized as f64 / dense_equivalent as f64,
    }
}

/// Explicitly materialized grids, for testing.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrids<T> {
    pub dims: [usize; 3],
    /// Unrectified density sum, `I × J × K` with `k` fastest.
    pub density: Vec<T>,
    /// `I × J × K × P` with the channel fastest.
    pub appearance: Vec<T>,
    pub channels: usize,
}

impl<T: Real> DenseGrids<T> {
    #[inline]
    pub fn voxel(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }
}

/// Architecture of the non-grid parts of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    /// Appearance feature channels `P`.
    pub channels: usize,
    /// Width of both decoder hidden layers.
    pub hidden: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            channels: 27,
            hidden: 128,
        }
    }
}

/// The fused scene: one density and one appearance component per view, the
/// basis matrix and the color decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldModel<T> {
    pub grid: GridSpec,
    pub density: Vec<VmFactor<T>>,
    pub appearance: Vec<VmFactor<T>>,
    pub basis: BasisMatrix<T>,
    pub decoder: DecoderMlp<T>,
}

impl<T: Real> FieldModel<T> {
    /// All-zero factors and basis; the decoder is seeded.
    pub fn zeros(views: usize, grid: GridSpec, shape: ModelShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            grid,
            density: (0..views).map(|_| VmFactor::zeros(grid.dims)).collect(),
            appearance: (0..views).map(|_| VmFactor::zeros(grid.dims)).collect(),
            basis: BasisMatrix::zeros(shape.channels, 3 * views),
            decoder: DecoderMlp::seeded(shape.channels, shape.hidden, &mut rng),
        }
    }

    /// Every factor entry drawn at random: the no-point-cloud baseline.
    pub fn random(views: usize, grid: GridSpec, shape: ModelShape, seed: u64) -> Result<Self, FieldError> {
        if views == 0 {
            return Err(FieldError::NoClouds);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let decoder = DecoderMlp::seeded(shape.channels, shape.hidden, &mut rng);
        let basis = BasisMatrix::seeded(shape.channels, 3 * views, &mut rng);
        let mut density = Vec::with_capacity(views);
        let mut appearance = Vec::with_capacity(views);
        for _ in 0..views {
            density.push(VmFactor::random(grid.dims, &mut rng));
            appearance.push(VmFactor::random(grid.dims, &mut rng));
        }
        Ok(Self {
            grid,
            density,
            appearance,
            basis,
            decoder,
        })
    }

    /// Point-cloud initialization: indicator density factors, mean-gray
    /// appearance planes, random appearance vectors and basis.
    pub fn from_point_clouds(
        clouds: &[PointCloud],
        grid: GridSpec,
        shape: ModelShape,
        seed: u64,
    ) -> Result<Self, FieldError> {
        if clouds.is_empty() {
            return Err(FieldError::NoClouds);
        }
        let nodes = clouds
            .iter()
            .enumerate()
            .map(|(view, cloud)| cloud_nodes(view, cloud, &grid))
            .collect::<Result<Vec<_>, _>>()?;

        let views = clouds.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let decoder = DecoderMlp::seeded(shape.channels, shape.hidden, &mut rng);
        let basis = BasisMatrix::seeded(shape.channels, 3 * views, &mut rng);
        let mut density = Vec::with_capacity(views);
        let mut appearance = Vec::with_capacity(views);
        for (cloud, nodes) in clouds.iter().zip(&nodes) {
            let mut dens = VmFactor::zeros(grid.dims);
            for node in nodes {
                for mode in Mode::ALL {
                    let (a, b) = mode.plane_axes();
                    dens.vectors[mode.axis()][node[mode.axis()]] = T::one();
                    dens.planes[mode.axis()][node[a] * grid.dims[b] + node[b]] = T::one();
                }
            }
            let mut app = VmFactor::zeros(grid.dims);
            for v in app.vectors.iter_mut() {
                fill_uniform(v, &mut rng);
            }
            for mode in Mode::ALL {
                let means = plane_color_means(cloud, &grid, mode)?;
                for (dst, mean) in app.planes[mode.axis()].iter_mut().zip(means) {
                    if let Some(rgb) = mean {
                        *dst = T::of((rgb[0] + rgb[1] + rgb[2]) / 3.0);
                    }
                }
            }
            density.push(dens);
            appearance.push(app);
        }
        Ok(Self {
            grid,
            density,
            appearance,
            basis,
            decoder,
        })
    }

    pub fn views(&self) -> usize {
        self.density.len()
    }

    pub fn channels(&self) -> usize {
        self.basis.rows
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            channels: self.channels(),
            hidden: self.decoder.hidden_width(),
        }
    }

    /// Check every array against the grid and view count.
    pub fn validate(&self) -> Result<(), FieldError> {
        let n = self.density.len();
        if n == 0 || self.appearance.len() != n {
            return Err(FieldError::Shape(format!(
                "{} density vs {} appearance components",
                n,
                self.appearance.len()
            )));
        }
        for f in self.density.iter().chain(&self.appearance) {
            for mode in Mode::ALL {
                let (r, c) = self.grid.plane_shape(mode);
                if f.vectors[mode.axis()].len() != self.grid.dims[mode.axis()]
                    || f.planes[mode.axis()].len() != r * c
                {
                    return Err(FieldError::Shape(format!(
                        "factor shapes disagree with grid {:?}",
                        self.grid.dims
                    )));
                }
            }
        }
        if self.basis.cols != 3 * n || self.basis.data.len() != self.basis.rows * self.basis.cols {
            return Err(FieldError::Shape(format!(
                "basis is {}x{} for {n} views",
                self.basis.rows, self.basis.cols
            )));
        }
        if self.decoder.feature_width() != self.basis.rows {
            return Err(FieldError::Shape(format!(
                "decoder expects {} channels, basis provides {}",
                self.decoder.feature_width(),
                self.basis.rows
            )));
        }
        Ok(())
    }

    /// Unrectified density at a located point.
    #[inline]
    pub fn density_at(&self, gp: &GridPoint<T>) -> T {
        let dims = &self.grid.dims;
        let mut sum = T::zero();
        for f in &self.density {
            for mode in Mode::ALL {
                let (lin, bil) = f.mode_terms(mode, dims, gp);
                sum += lin * bil;
            }
        }
        sum
    }

    /// Stacked appearance component values `[A_{r,m}]`, view-major.
    #[inline]
    pub fn appearance_components_at(&self, gp: &GridPoint<T>, out: &mut [T]) {
        let dims = &self.grid.dims;
        for (r, f) in self.appearance.iter().enumerate() {
            for mode in Mode::ALL {
                let (lin, bil) = f.mode_terms(mode, dims, gp);
                out[3 * r + mode.axis()] = lin * bil;
            }
        }
    }

    pub fn density_preactivation(&self, x: &Vector3<f64>) -> Result<T, FieldError> {
        Ok(self.density_at(&self.grid.locate_or_err(x)?))
    }

    /// Rectified density `max(0, Σ_r Σ_m A_{σ,r}^m(x))`.
    pub fn sample_density(&self, x: &Vector3<f64>) -> Result<T, FieldError> {
        Ok(self.density_preactivation(x)?.max(T::zero()))
    }

    /// P-channel appearance feature `B · [A_{c,r}^m(x)]`.
    pub fn sample_appearance(&self, x: &Vector3<f64>) -> Result<Vec<T>, FieldError> {
        let gp = self.grid.locate_or_err(x)?;
        let mut comps = vec![T::zero(); 3 * self.views()];
        self.appearance_components_at(&gp, &mut comps);
        let mut out = vec![T::zero(); self.channels()];
        self.basis.apply(&comps, &mut out);
        Ok(out)
    }

    /// Resample every factor onto `new_dims` (vectors linearly, planes
    /// bilinearly, corner-aligned); basis, decoder and bbox are kept.
    pub fn upsample(&self, new_dims: [usize; 3]) -> Result<Self, FieldError> {
        let old = self.grid.dims;
        if (0..3).any(|a| new_dims[a] < old[a]) {
            return Err(FieldError::Shrink {
                from: old,
                to: new_dims,
            });
        }
        if new_dims == old {
            return Ok(self.clone());
        }
        let grid = GridSpec::new(new_dims, self.grid.bbox)?;
        let resample = |f: &VmFactor<T>| VmFactor {
            vectors: [0, 1, 2].map(|a| resample_vector(&f.vectors[a], new_dims[a])),
            planes: Mode::ALL.map(|m| {
                let (a, b) = m.plane_axes();
                resample_plane(&f.planes[m.axis()], (old[a], old[b]), (new_dims[a], new_dims[b]))
            }),
        };
        Ok(Self {
            grid,
            density: self.density.iter().map(resample).collect(),
            appearance: self.appearance.iter().map(resample).collect(),
            basis: self.basis.clone(),
            decoder: self.decoder.clone(),
        })
    }

    /// Count by walking every allocated array.
    pub fn param_count(&self) -> ParamCount {
        let factorized: usize = self.blocks().iter().map(|(_, data)| data.len()).sum();
        let [i, j, k] = self.grid.dims.map(|d| d as u64);
        let dense_equivalent = i * j * k * (self.channels() as u64 + 1);
        ParamCount {
            factorized: factorized as u64,
            dense_equivalent,
            ratio: factorized as f64 / dense_equivalent as f64,
        }
    }

    pub fn dense_reconstruct(&self) -> Result<DenseGrids<T>, FieldError> {
        self.dense_reconstruct_capped(DEFAULT_MATERIALIZE_CAP)
    }

    /// Explicit per-voxel evaluation of the factorization.
    pub fn dense_reconstruct_capped(&self, cap: usize) -> Result<DenseGrids<T>, FieldError> {
        let voxels = self.grid.voxel_count();
        if voxels > cap {
            return Err(FieldError::TooLarge { voxels, cap });
        }
        let [ni, nj, nk] = self.grid.dims;
        let p = self.channels();
        let n = self.views();
        let mut density = vec![T::zero(); voxels];
        let mut appearance = vec![T::zero(); voxels * p];
        let mut comps = vec![T::zero(); 3 * n];
        let term = |f: &VmFactor<T>, mode: Mode, idx: [usize; 3]| {
            let (a, b) = mode.plane_axes();
            f.vectors[mode.axis()][idx[mode.axis()]] * f.planes[mode.axis()][idx[a] * self.grid.dims[b] + idx[b]]
        };
        for i in 0..ni {
            for j in 0..nj {
                for k in 0..nk {
                    let idx = [i, j, k];
                    let v = (i * nj + j) * nk + k;
                    let mut s = T::zero();
                    for f in &self.density {
                        for mode in Mode::ALL {
                            s += term(f, mode, idx);
                        }
                    }
                    density[v] = s;
                    for (r, f) in self.appearance.iter().enumerate() {
                        for mode in Mode::ALL {
                            comps[3 * r + mode.axis()] = term(f, mode, idx);
                        }
                    }
                    self.basis.apply(&comps, &mut appearance[v * p..(v + 1) * p]);
                }
            }
        }
        Ok(DenseGrids {
            dims: self.grid.dims,
            density,
            appearance,
            channels: p,
        })
    }

    /// Same-shaped model with every parameter zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, data) in z.blocks_mut() {
            data.iter_mut().for_each(|x| *x = T::zero());
        }
        z
    }

    /// Every parameter array in checkpoint order: per view the six density
    /// arrays then the six appearance arrays, then `B`, then the decoder.
    pub fn blocks(&self) -> Vec<(BlockId, &[T])> {
        let mut out = Vec::new();
        for (view, (d, a)) in self.density.iter().zip(&self.appearance).enumerate() {
            for mode in Mode::ALL {
                out.push((BlockId::DensityVector { view, mode }, d.vectors[mode.axis()].as_slice()));
            }
            for mode in Mode::ALL {
                out.push((BlockId::DensityPlane { view, mode }, d.planes[mode.axis()].as_slice()));
            }
            for mode in Mode::ALL {
                out.push((BlockId::AppearanceVector { view, mode }, a.vectors[mode.axis()].as_slice()));
            }
            for mode in Mode::ALL {
                out.push((BlockId::AppearancePlane { view, mode }, a.planes[mode.axis()].as_slice()));
            }
        }
        out.push((BlockId::Basis, self.basis.data.as_slice()));
        for (layer, l) in self.decoder.layers.iter().enumerate() {
            out.push((BlockId::DecoderWeight { layer }, l.weights.as_slice()));
            out.push((BlockId::DecoderBias { layer }, l.bias.as_slice()));
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(BlockId, &mut [T])> {
        let mut out = Vec::new();
        for (view, (d, a)) in self.density.iter_mut().zip(self.appearance.iter_mut()).enumerate() {
            let [dvx, dvy, dvz] = &mut d.vectors;
            let [dpx, dpy, dpz] = &mut d.planes;
            let [avx, avy, avz] = &mut a.vectors;
            let [apx, apy, apz] = &mut a.planes;
            out.push((BlockId::DensityVector { view, mode: Mode::X }, dvx.as_mut_slice()));
            out.push((BlockId::DensityVector { view, mode: Mode::Y }, dvy.as_mut_slice()));
            out.push((BlockId::DensityVector { view, mode: Mode::Z }, dvz.as_mut_slice()));
            out.push((BlockId::DensityPlane { view, mode: Mode::X }, dpx.as_mut_slice()));
            out.push((BlockId::DensityPlane { view, mode: Mode::Y }, dpy.as_mut_slice()));
            out.push((BlockId::DensityPlane { view, mode: Mode::Z }, dpz.as_mut_slice()));
            out.push((BlockId::AppearanceVector { view, mode: Mode::X }, avx.as_mut_slice()));
            out.push((BlockId::AppearanceVector { view, mode: Mode::Y }, avy.as_mut_slice()));
            out.push((BlockId::AppearanceVector { view, mode: Mode::Z }, avz.as_mut_slice()));
            out.push((BlockId::AppearancePlane { view, mode: Mode::X }, apx.as_mut_slice()));
            out.push((BlockId::AppearancePlane { view, mode: Mode::Y }, apy.as_mut_slice()));
            out.push((BlockId::AppearancePlane { view, mode: Mode::Z }, apz.as_mut_slice()));
        }
        out.push((BlockId::Basis, self.basis.data.as_mut_slice()));
        for (layer, l) in self.decoder.layers.iter_mut().enumerate() {
            out.push((BlockId::DecoderWeight { layer }, l.weights.as_mut_slice()));
            out.push((BlockId::DecoderBias { layer }, l.bias.as_mut_slice()));
        }
        out
    }

    pub fn cast<U: Real>(&self) -> FieldModel<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::of(x.to_f64_lossy())).collect::<Vec<U>>();
        let factor = |f: &VmFactor<T>| VmFactor {
            vectors: [0, 1, 2].map(|a| conv(&f.vectors[a])),
            planes: [0, 1, 2].map(|a| conv(&f.planes[a])),
        };
        FieldModel {
            grid: self.grid,
            density: self.density.iter().map(factor).collect(),
            appearance: self.appearance.iter().map(factor).collect(),
            basis: BasisMatrix {
                rows: self.basis.rows,
                cols: self.basis.cols,
                data: conv(&self.basis.data),
            },
            decoder: self.decoder.cast(),
        }
    }
}

/// Nearest grid node for every point of a cloud.
fn cloud_nodes(view: usize, cloud: &PointCloud, grid: &GridSpec) -> Result<Vec<[usize; 3]>, FieldError> {
    cloud
        .points
        .iter()
        .enumerate()
        .map(|(index, p)| {
            grid.nearest_node(&p.position).ok_or(FieldError::PointOutsideGrid {
                view,
                index,
                x: p.position[0],
                y: p.position[1],
                z: p.position[2],
            })
        })
        .collect()
}

/// Mean RGB of the points whose nearest node projects onto each element of
/// the `mode` plane; `None` where no point lands.
pub fn plane_color_means(
    cloud: &PointCloud,
    grid: &GridSpec,
    mode: Mode,
) -> Result<Vec<Option<[f64; 3]>>, FieldError> {
    let (a, b) = mode.plane_axes();
    let (rows, cols) = grid.plane_shape(mode);
    let mut sums = vec![[0.0f64; 3]; rows * cols];
    let mut counts = vec![0usize; rows * cols];
    for node_and_point in cloud_nodes(cloud.source_view, cloud, grid)?.iter().zip(&cloud.points) {
        let (node, p) = node_and_point;
        let e = node[a] * cols + node[b];
        for c in 0..3 {
            sums[e][c] += p.color[c];
        }
        counts[e] += 1;
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, n)| (n > 0).then(|| s.map(|c| c / n as f64)))
        .collect())
}

fn resample_vector<T: Real>(v: &[T], len: usize) -> Vec<T> {
    let old = v.len();
    (0..len)
        .map(|i| {
            let u = i as f64 * (old - 1) as f64 / (len - 1) as f64;
            let b = (u.floor() as usize).min(old - 2);
            lerp(v, b, T::of(u - b as f64))
        })
        .collect()
}

fn resample_plane<T: Real>(m: &[T], old: (usize, usize), new: (usize, usize)) -> Vec<T> {
    let coord = |i: usize, o: usize, n: usize| {
        let u = i as f64 * (o - 1) as f64 / (n - 1) as f64;
        let b = (u.floor() as usize).min(o - 2);
        (b, T::of(u - b as f64))
    };
    let mut out = Vec::with_capacity(new.0 * new.1);
    for r in 0..new.0 {
        let (rb, rf) = coord(r, old.0, new.0);
        for c in 0..new.1 {
            let (cb, cf) = coord(c, old.1, new.1);
            out.push(bilerp(m, old.1, rb, rf, cb, cf));
        }
    }
    out
}

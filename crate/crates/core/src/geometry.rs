//! Pinhole cameras, rays, depth lifting and the NDC frame.
//!
//! Conventions: the camera looks down `+z`, `R`/`t` map world to camera
//! (`x_c = R x_w + t`), depth is z-depth in camera coordinates, and pixel
//! coordinates are continuous with pixel `(col, row)` centered at
//! `(col + 0.5, row + 0.5)`.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::raster::ColorImage;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("depth must be finite and positive, got {0}")]
    InvalidDepth(f64),
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelOutOfBounds {
        u: f64,
        v: f64,
        width: usize,
        height: usize,
    },
    #[error("point at camera depth {z} is in front of the near plane {near}")]
    OutOfFrustum { z: f64, near: f64 },
    #[error("image is {image_w}x{image_h} but depth map is {depth_w}x{depth_h}")]
    DimensionMismatch {
        image_w: usize,
        image_h: usize,
        depth_w: usize,
        depth_h: usize,
    },
    #[error("view {view}: pixel ({col}, {row}) does not map into the NDC frame: {source}")]
    PointOutsideFrame {
        view: usize,
        col: usize,
        row: usize,
        source: Box<GeometryError>,
    },
}

/// Pinhole camera with world-to-camera extrinsics.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    k: Matrix3<f64>,
    k_inv: Matrix3<f64>,
    r: Matrix3<f64>,
    t: Vector3<f64>,
    width: usize,
    height: usize,
}

impl CameraModel {
    pub fn new(
        k: Matrix3<f64>,
        r: Matrix3<f64>,
        t: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidCamera(format!(
                "image size {width}x{height} must be positive"
            )));
        }
        if !(k.iter().all(|v| v.is_finite()) && r.iter().all(|v| v.is_finite()))
            || !t.iter().all(|v| v.is_finite())
        {
            return Err(GeometryError::InvalidCamera("non-finite entry".into()));
        }
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(GeometryError::InvalidCamera(
                "K must be upper triangular".into(),
            ));
        }
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) || k[(2, 2)] != 1.0 {
            return Err(GeometryError::InvalidCamera(
                "K needs positive focal lengths and K[2][2] = 1".into(),
            ));
        }
        let gram_err = (r.transpose() * r - Matrix3::identity()).amax();
        if gram_err > ORTHONORMAL_TOL {
            return Err(GeometryError::InvalidCamera(format!(
                "R is not orthonormal (|R^T R - I|_inf = {gram_err:e})"
            )));
        }
        if r.determinant() <= 0.0 {
            return Err(GeometryError::InvalidCamera(
                "R must have determinant +1".into(),
            ));
        }
        let k_inv = k
            .try_inverse()
            .ok_or_else(|| GeometryError::InvalidCamera("K is singular".into()))?;
        Ok(Self {
            k,
            k_inv,
            r,
            t,
            width,
            height,
        })
    }

    /// Camera with principal point at the image center and square pixels.
    pub fn look_from(
        focal: f64,
        width: usize,
        height: usize,
        r: Matrix3<f64>,
        t: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let k = Matrix3::new(
            focal,
            0.0,
            width as f64 / 2.0,
            0.0,
            focal,
            height as f64 / 2.0,
            0.0,
            0.0,
            1.0,
        );
        Self::new(k, r, t, width, height)
    }

    pub fn k(&self) -> &Matrix3<f64> {
        &self.k
    }

    pub fn r(&self) -> &Matrix3<f64> {
        &self.r
    }

    pub fn t(&self) -> &Vector3<f64> {
        &self.t
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.r.transpose() * self.t)
    }

    pub fn world_to_camera(&self, x_w: &Vector3<f64>) -> Vector3<f64> {
        self.r * x_w + self.t
    }

    /// Perspective projection to `(u, v, z)`; `None` behind the camera.
    pub fn project(&self, x_w: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let p = self.k * self.world_to_camera(x_w);
        if p.z <= 0.0 {
            return None;
        }
        Some((p.x / p.z, p.y / p.z, p.z))
    }

    fn check_pixel(&self, u: f64, v: f64) -> Result<(), GeometryError> {
        let inside = u.is_finite()
            && v.is_finite()
            && (0.0..=self.width as f64).contains(&u)
            && (0.0..=self.height as f64).contains(&v);
        if inside {
            Ok(())
        } else {
            Err(GeometryError::PixelOutOfBounds {
                u,
                v,
                width: self.width,
                height: self.height,
            })
        }
    }

    /// Lift pixel `(u, v)` at z-depth `depth` to world space:
    /// `x_w = R^-1 (K^-1 (u, v, 1) D - t)`.
    pub fn pixel_to_world(&self, u: f64, v: f64, depth: f64) -> Result<Vector3<f64>, GeometryError> {
        if !(depth.is_finite() && depth > 0.0) {
            return Err(GeometryError::InvalidDepth(depth));
        }
        self.check_pixel(u, v)?;
        let x_p = Vector3::new(u, v, 1.0);
        Ok(self.r.transpose() * (self.k_inv * x_p * depth - self.t))
    }

    /// World-space ray through pixel `(u, v)`.
    pub fn camera_ray(&self, u: f64, v: f64) -> Result<Ray, GeometryError> {
        self.check_pixel(u, v)?;
        let dir = self.r.transpose() * (self.k_inv * Vector3::new(u, v, 1.0));
        Ok(Ray::new(self.center(), dir))
    }

    /// Forward-facing NDC map of a camera-space point:
    /// `(2 fx x / (W z), 2 fy y / (H z), 1 - near / z)`.
    pub fn camera_to_ndc(&self, p: &Vector3<f64>, near: f64) -> Result<Vector3<f64>, GeometryError> {
        world_to_ndc(p, self, near)
    }
}

/// Forward-facing NDC map of the camera-space point `point_cam`.
pub fn world_to_ndc(
    point_cam: &Vector3<f64>,
    cam: &CameraModel,
    near: f64,
) -> Result<Vector3<f64>, GeometryError> {
    let z = point_cam.z;
    if !(near > 0.0) || !(z >= near) {
        return Err(GeometryError::OutOfFrustum { z, near });
    }
    let ax = 2.0 * cam.k[(0, 0)] / cam.width as f64;
    let ay = 2.0 * cam.k[(1, 1)] / cam.height as f64;
    Ok(Vector3::new(
        ax * point_cam.x / z,
        ay * point_cam.y / z,
        1.0 - near / z,
    ))
}

/// Half-line with a unit direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl Ray {
    /// Normalizes `direction`.
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>) -> Self {
        Self {
            origin,
            direction: direction.normalize(),
        }
    }

    #[inline]
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

/// Per-pixel z-depth with a validity mask; invalid pixels are holes.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(
        width: usize,
        height: usize,
        values: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self, GeometryError> {
        if values.len() != width * height || valid.len() != width * height {
            return Err(GeometryError::DimensionMismatch {
                image_w: width,
                image_h: height,
                depth_w: values.len(),
                depth_h: valid.len(),
            });
        }
        if let Some(bad) = values
            .iter()
            .zip(&valid)
            .find(|(d, ok)| **ok && !(d.is_finite() && **d > 0.0))
        {
            return Err(GeometryError::InvalidDepth(*bad.0));
        }
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> Option<f64> {
        let i = row * self.width + col;
        self.valid[i].then_some(self.values[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// `(min, max)` over valid pixels.
    pub fn valid_range(&self) -> Option<(f64, f64)> {
        self.values
            .iter()
            .zip(&self.valid)
            .filter(|(_, ok)| **ok)
            .fold(None, |acc, (d, _)| match acc {
                None => Some((*d, *d)),
                Some((lo, hi)) => Some((lo.min(*d), hi.max(*d))),
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColoredPoint {
    pub position: Vector3<f64>,
    pub color: [f64; 3],
}

/// Colored points lifted from one input view.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub source_view: usize,
    pub points: Vec<ColoredPoint>,
}

impl PointCloud {
    /// Componentwise `(min, max)` of the point positions.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = self.points.first()?.position;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(&p.position), hi.sup(&p.position))
        }))
    }
}

/// Lift every valid depth pixel to a world-space colored point.
pub fn lift_depth_pixels(
    cam: &CameraModel,
    image: &ColorImage,
    depth: &DepthMap,
) -> Result<Vec<(usize, usize, ColoredPoint)>, GeometryError> {
    if image.width != depth.width || image.height != depth.height {
        return Err(GeometryError::DimensionMismatch {
            image_w: image.width,
            image_h: image.height,
            depth_w: depth.width,
            depth_h: depth.height,
        });
    }
    let mut out = Vec::with_capacity(depth.valid_count());
    for row in 0..depth.height {
        for col in 0..depth.width {
            let Some(d) = depth.get(col, row) else {
                continue;
            };
            let position = cam.pixel_to_world(col as f64 + 0.5, row as f64 + 0.5, d)?;
            out.push((
                col,
                row,
                ColoredPoint {
                    position,
                    color: image.get(col, row),
                },
            ));
        }
    }
    Ok(out)
}

/// One point per valid depth pixel, positioned in the NDC frame.
pub fn build_point_cloud(
    view: usize,
    cam: &CameraModel,
    image: &ColorImage,
    depth: &DepthMap,
    frame: &NdcFrame,
) -> Result<PointCloud, GeometryError> {
    let lifted = lift_depth_pixels(cam, image, depth)?;
    let points = lifted
        .into_iter()
        .map(|(col, row, p)| {
            frame
                .point_to_ndc(&p.position)
                .map(|position| ColoredPoint {
                    position,
                    color: p.color,
                })
                .map_err(|e| GeometryError::PointOutsideFrame {
                    view,
                    col,
                    row,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PointCloud {
        source_view: view,
        points,
    })
}

/// The shared scene space: NDC of one reference camera.
///
/// Straight world rays stay straight in NDC, so every training view's rays can
/// be marched through the same grid.
#[derive(Clone, Debug, PartialEq)]
pub struct NdcFrame {
    pub reference: CameraModel,
    pub near: f64,
}

/// A ray expressed in the NDC frame.
///
/// `ray.at(s)` for `s` in `[0, max_distance]` covers NDC depth `[0, 1]`; the
/// NDC depth of a point at arc length `s` is `s / max_distance`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NdcRay {
    pub ray: Ray,
    pub max_distance: f64,
}

impl NdcFrame {
    pub fn new(reference: CameraModel, near: f64) -> Result<Self, GeometryError> {
        if !(near.is_finite() && near > 0.0) {
            return Err(GeometryError::InvalidDepth(near));
        }
        Ok(Self { reference, near })
    }

    pub fn point_to_ndc(&self, x_w: &Vector3<f64>) -> Result<Vector3<f64>, GeometryError> {
        world_to_ndc(&self.reference.world_to_camera(x_w), &self.reference, self.near)
    }

    /// Map a world ray into the frame. Rays that do not travel forward along
    /// the reference optical axis have no NDC image and yield `None`.
    pub fn ray_to_ndc(&self, world: &Ray) -> Option<NdcRay> {
        let o = self.reference.world_to_camera(&world.origin);
        let d = self.reference.r() * world.direction;
        if !(d.z > 1e-12) {
            return None;
        }
        let ax = 2.0 * self.reference.k[(0, 0)] / self.reference.width as f64;
        let ay = 2.0 * self.reference.k[(1, 1)] / self.reference.height as f64;
        let shift = (self.near - o.z) / d.z;
        let on = o + d * shift;
        let origin = Vector3::new(ax * on.x / self.near, ay * on.y / self.near, 0.0);
        let dir = Vector3::new(
            ax * (d.x / d.z - on.x / self.near),
            ay * (d.y / d.z - on.y / self.near),
            1.0,
        );
        let max_distance = dir.norm();
        Some(NdcRay {
            ray: Ray {
                origin,
                direction: dir / max_distance,
            },
            max_distance,
        })
    }

    /// Arc length along `ndc` of the world point `x_w`, the depth target used
    /// for supervision.
    pub fn depth_along(&self, ndc: &NdcRay, x_w: &Vector3<f64>) -> Result<f64, GeometryError> {
        let p = self.point_to_ndc(x_w)?;
        Ok(p.z * ndc.max_distance)
    }
}

/// Rotation taking world axes to a camera looking from `eye` toward `target`,
/// with `up` giving the approximate `-y` image direction.
pub fn look_at_rotation(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Matrix3<f64> {
    let z = (target - eye).normalize();
    let x = up.cross(&z).normalize() * -1.0;
    let y = z.cross(&x);
    Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_cam() -> CameraModel {
        CameraModel::new(Matrix3::identity(), Matrix3::identity(), Vector3::zeros(), 4, 4).unwrap()
    }

    pub(crate) fn random_camera(rng: &mut ChaCha8Rng) -> CameraModel {
        let axis = Unit::new_normalize(Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ));
        let r = Rotation3::from_axis_angle(&axis, rng.random_range(-3.0..3.0)).into_inner();
        let w = rng.random_range(16..640);
        let h = rng.random_range(16..480);
        let f = rng.random_range(20.0..800.0);
        let k = Matrix3::new(
            f,
            rng.random_range(-0.5..0.5),
            w as f64 * rng.random_range(0.3..0.7),
            0.0,
            f * rng.random_range(0.8..1.2),
            h as f64 * rng.random_range(0.3..0.7),
            0.0,
            0.0,
            1.0,
        );
        let t = Vector3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        );
        CameraModel::new(k, r, t, w, h).unwrap()
    }

    #[test]
    fn identity_camera_lifts_along_axis() {
        let cam = identity_cam();
        let p = cam.pixel_to_world(0.0, 0.0, 2.0).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn pure_translation_shifts_point() {
        let cam = CameraModel::new(
            Matrix3::identity(),
            Matrix3::identity(),
            Vector3::new(0.0, 0.0, -1.0),
            4,
            4,
        )
        .unwrap();
        let p = cam.pixel_to_world(0.0, 0.0, 1.0).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn lifting_matches_linear_solve_of_forward_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let cam = random_camera(&mut rng);
            let u = rng.random_range(0.0..cam.width() as f64);
            let v = rng.random_range(0.0..cam.height() as f64);
            let d = rng.random_range(0.1..50.0);
            let got = cam.pixel_to_world(u, v, d).unwrap();
            // K (R x + t) = x_p D  <=>  (K R) x = x_p D - K t
            let a = cam.k() * cam.r();
            let b = Vector3::new(u, v, 1.0) * d - cam.k() * cam.t();
            let oracle = a.lu().solve(&b).unwrap();
            let residual = a * got - b;
            assert!(residual.amax() <= 1e-9 * b.amax().max(1.0), "{residual}");
            assert!((got - oracle).amax() <= 1e-9 * oracle.amax().max(1.0));
        }
    }

    #[test]
    fn projection_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 2000 {
            let cam = random_camera(&mut rng);
            let u = rng.random_range(0.0..cam.width() as f64);
            let v = rng.random_range(0.0..cam.height() as f64);
            let x = cam.pixel_to_world(u, v, rng.random_range(0.5..20.0)).unwrap();
            let (pu, pv, z) = cam.project(&x).unwrap();
            let back = cam.pixel_to_world(pu, pv, z).unwrap();
            assert!((back - x).norm() <= 1e-9 * x.norm().max(1.0));
            checked += 1;
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let cam = identity_cam();
        assert!(matches!(
            cam.pixel_to_world(1.0, 1.0, 0.0),
            Err(GeometryError::InvalidDepth(_))
        ));
        assert!(matches!(
            cam.pixel_to_world(5.0, 1.0, 1.0),
            Err(GeometryError::PixelOutOfBounds { .. })
        ));
        let skew = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(CameraModel::new(Matrix3::identity(), skew, Vector3::zeros(), 4, 4).is_err());
        let flip = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(CameraModel::new(Matrix3::identity(), flip, Vector3::zeros(), 4, 4).is_err());
        let lower = Matrix3::new(1.0, 0.0, 0.0, 0.3, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(CameraModel::new(lower, Matrix3::identity(), Vector3::zeros(), 4, 4).is_err());
    }

    #[test]
    fn ndc_near_plane_and_axis() {
        let cam = identity_cam();
        let p = world_to_ndc(&Vector3::new(0.3, -0.2, 1.5), &cam, 1.5).unwrap();
        assert_eq!(p.z, 0.0);
        for z in [1.5, 2.0, 7.0, 1e6] {
            let p = world_to_ndc(&Vector3::new(0.0, 0.0, z), &cam, 1.5).unwrap();
            assert_eq!(p, Vector3::new(0.0, 0.0, 1.0 - 1.5 / z));
        }
        assert!(matches!(
            world_to_ndc(&Vector3::new(0.0, 0.0, 1.0), &cam, 1.5),
            Err(GeometryError::OutOfFrustum { .. })
        ));
    }

    #[test]
    fn ndc_depth_is_strictly_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cam = identity_cam();
        for _ in 0..10_000 {
            let near = rng.random_range(0.01..2.0);
            let z1 = near + rng.random_range(0.0..100.0);
            let z2 = z1 + rng.random_range(1e-6..10.0);
            let x = rng.random_range(-3.0..3.0);
            let a = world_to_ndc(&Vector3::new(x, 0.0, z1), &cam, near).unwrap();
            let b = world_to_ndc(&Vector3::new(x, 0.0, z2), &cam, near).unwrap();
            assert!(b.z > a.z, "z1={z1} z2={z2}");
        }
    }

    #[test]
    fn identity_camera_rays() {
        let cam = identity_cam();
        let ray = cam.camera_ray(0.0, 0.0).unwrap();
        assert_eq!(ray.origin, Vector3::zeros());
        assert_eq!(ray.direction, Vector3::new(0.0, 0.0, 1.0));
        let shifted = CameraModel::new(
            Matrix3::identity(),
            Matrix3::identity(),
            Vector3::new(1.0, 0.0, 0.0),
            4,
            4,
        )
        .unwrap();
        assert_eq!(shifted.camera_ray(0.0, 0.0).unwrap().origin, Vector3::new(-1.0, 0.0, 0.0));
    }

    #[test]
    fn lifted_points_lie_on_camera_ray() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let cam = random_camera(&mut rng);
            let u = rng.random_range(0.0..cam.width() as f64);
            let v = rng.random_range(0.0..cam.height() as f64);
            let ray = cam.camera_ray(u, v).unwrap();
            for d in [0.01, 0.7, 3.0, 40.0] {
                let p = cam.pixel_to_world(u, v, d).unwrap();
                let rel = p - ray.origin;
                let dist = (rel - ray.direction * rel.dot(&ray.direction)).norm();
                assert!(dist <= 1e-9 * rel.norm().max(1.0), "dist {dist}");
            }
            assert!((ray.direction.norm() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn point_cloud_respects_mask() {
        let cam = CameraModel::look_from(2.0, 2, 2, Matrix3::identity(), Vector3::zeros()).unwrap();
        let frame = NdcFrame::new(cam.clone(), 0.5).unwrap();
        let image = ColorImage::from_fn(2, 2, |c, r| [c as f64, r as f64, 0.25]);
        let empty = build_point_cloud(0, &cam, &image, &DepthMap::invalid(2, 2), &frame).unwrap();
        assert!(empty.points.is_empty());

        let depth = DepthMap::new(
            2,
            2,
            vec![0.0, 0.0, 3.0, 0.0],
            vec![false, false, true, false],
        )
        .unwrap();
        let cloud = build_point_cloud(4, &cam, &image, &depth, &frame).unwrap();
        assert_eq!(cloud.source_view, 4);
        assert_eq!(cloud.points.len(), 1);
        assert_eq!(cloud.points[0].color, [0.0, 1.0, 0.25]);
        assert!((cloud.points[0].position.z - (1.0 - 0.5 / 3.0)).abs() < 1e-12);

        let mismatched = DepthMap::invalid(3, 2);
        assert!(matches!(
            build_point_cloud(0, &cam, &image, &mismatched, &frame),
            Err(GeometryError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn ndc_rays_pass_through_ndc_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let reference = CameraModel::look_from(60.0, 64, 48, Matrix3::identity(), Vector3::zeros()).unwrap();
        let frame = NdcFrame::new(reference, 1.0).unwrap();
        for _ in 0..500 {
            let eye = Vector3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.3..0.3),
            );
            let r = look_at_rotation(&eye, &Vector3::new(0.0, 0.0, 5.0), &Vector3::new(0.0, -1.0, 0.0));
            let cam = CameraModel::look_from(60.0, 64, 48, r, -(r * eye)).unwrap();
            let ray = cam
                .camera_ray(rng.random_range(0.0..64.0), rng.random_range(0.0..48.0))
                .unwrap();
            let ndc = frame.ray_to_ndc(&ray).unwrap();
            let s = rng.random_range(2.0..30.0);
            let x_w = ray.at(s);
            let p = frame.point_to_ndc(&x_w).unwrap();
            let along = ndc.ray.at(p.z * ndc.max_distance);
            assert!((along - p).amax() < 1e-9, "{along} vs {p}");
            let d = frame.depth_along(&ndc, &x_w).unwrap();
            assert!((ndc.ray.at(d) - p).amax() < 1e-9);
        }
    }

    #[test]
    fn look_at_points_camera_at_target() {
        let eye = Vector3::new(0.4, -0.2, 0.1);
        let target = Vector3::new(0.0, 0.0, 5.0);
        let r = look_at_rotation(&eye, &target, &Vector3::new(0.0, -1.0, 0.0));
        let cam = CameraModel::look_from(50.0, 32, 32, r, -(r * eye)).unwrap();
        let (u, v, _) = cam.project(&target).unwrap();
        assert!((u - 16.0).abs() < 1e-9 && (v - 16.0).abs() < 1e-9);
        assert!((cam.center() - eye).norm() < 1e-12);
        // image y grows downward when up = -y
        let (_, v_up, _) = cam.project(&Vector3::new(0.0, -1.0, 5.0)).unwrap();
        assert!(v_up < 16.0);
    }
}

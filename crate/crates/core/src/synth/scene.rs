//! Analytic scenes ray-cast into RGB-D views.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{look_at_rotation, CameraModel, DepthMap, Ray};
use crate::raster::ColorImage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("primitive {index}: {message}")]
    Primitive { index: usize, message: String },
    #[error("noise fraction {0} outside [0, 1]")]
    Fraction(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
        albedo: [f64; 3],
    },
    Box {
        min: [f64; 3],
        max: [f64; 3],
        albedo: [f64; 3],
    },
}

impl Primitive {
    pub fn albedo(&self) -> [f64; 3] {
        match self {
            Primitive::Sphere { albedo, .. } | Primitive::Box { albedo, .. } => *albedo,
        }
    }

    /// Nearest hit distance along `ray` strictly in front of the origin.
    pub fn intersect(&self, ray: &Ray) -> Option<f64> {
        const EPS: f64 = 1e-12;
        match self {
            Primitive::Sphere { center, radius, .. } => {
                let oc = ray.origin - Vector3::from(*center);
                let b = oc.dot(&ray.direction);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                // Stable roots of t² + 2bt + c = 0.
                let q = if b > 0.0 { -b - s } else { -b + s };
                let (r1, r2) = if q != 0.0 { (q, c / q) } else { (0.0, 0.0) };
                let (t0, t1) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
                if t0 > EPS {
                    Some(t0)
                } else if t1 > EPS {
                    Some(t1)
                } else {
                    None
                }
            }
            Primitive::Box { min, max, .. } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for a in 0..3 {
                    let (o, d) = (ray.origin[a], ray.direction[a]);
                    if d.abs() < 1e-300 {
                        if o < min[a] || o > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let (mut lo, mut hi) = ((min[a] - o) / d, (max[a] - o) / d);
                    if lo > hi {
                        std::mem::swap(&mut lo, &mut hi);
                    }
                    t0 = t0.max(lo);
                    t1 = t1.min(hi);
                }
                if t0 > t1 {
                    None
                } else if t0 > EPS {
                    Some(t0)
                } else if t1 > EPS {
                    Some(t1)
                } else {
                    None
                }
            }
        }
    }

    /// Signed implicit residual at `x`: zero on the surface.
    pub fn implicit(&self, x: &Vector3<f64>) -> f64 {
        match self {
            Primitive::Sphere { center, radius, .. } => (x - Vector3::from(*center)).norm() - radius,
            Primitive::Box { min, max, .. } => {
                let c = (Vector3::from(*min) + Vector3::from(*max)) / 2.0;
                let h = (Vector3::from(*max) - Vector3::from(*min)) / 2.0;
                let q = (x - c).abs() - h;
                let outside = q.map(|v| v.max(0.0)).norm();
                outside + q.max().min(0.0)
            }
        }
    }

    fn validate(&self, index: usize) -> Result<(), SceneError> {
        let err = |m: &str| {
            Err(SceneError::Primitive {
                index,
                message: m.to_string(),
            })
        };
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Primitive::Sphere { center, radius, albedo } => {
                if !finite(center) || !finite(albedo) || !(*radius > 0.0 && radius.is_finite()) {
                    return err("sphere needs a finite center and a positive radius");
                }
            }
            Primitive::Box { min, max, albedo } => {
                if !finite(min) || !finite(max) || !finite(albedo) || (0..3).any(|a| !(min[a] < max[a])) {
                    return err("box needs min < max on every axis");
                }
            }
        }
        Ok(())
    }
}

/// Flat-shaded primitives over a background color.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub background: [f64; 3],
}

impl AnalyticScene {
    pub fn validate(&self) -> Result<(), SceneError> {
        self.primitives.iter().enumerate().try_for_each(|(i, p)| p.validate(i))
    }

    /// Nearest hit as `(distance, primitive index)`.
    pub fn hit(&self, ray: &Ray) -> Option<(f64, usize)> {
        self.primitives
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.intersect(ray).map(|t| (t, i)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }
}

/// Color and exact z-depth through every pixel center. Misses get the
/// background color and an invalid depth.
pub fn raycast_view(scene: &AnalyticScene, cam: &CameraModel) -> (ColorImage, DepthMap) {
    let (w, h) = (cam.width(), cam.height());
    let mut image = ColorImage::new(w, h, scene.background);
    let mut depth = DepthMap::invalid(w, h);
    for row in 0..h {
        for col in 0..w {
            let ray = cam
                .camera_ray(col as f64 + 0.5, row as f64 + 0.5)
                .expect("pixel centers lie inside the image");
            if let Some((t, i)) = scene.hit(&ray) {
                let z = cam.world_to_camera(&ray.at(t)).z;
                if z > 0.0 {
                    image.set(col, row, scene.primitives[i].albedo());
                    depth.values[row * w + col] = z;
                    depth.valid[row * w + col] = true;
                }
            }
        }
    }
    (image, depth)
}

/// Replace a random `fraction` of the valid depths (each pixel independently)
/// with uniform noise over the map's valid range. The mask is untouched.
pub fn add_depth_noise(depth: &DepthMap, fraction: f64, rng: &mut impl Rng) -> Result<DepthMap, SceneError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(SceneError::Fraction(fraction));
    }
    let mut out = depth.clone();
    let Some((lo, hi)) = depth.valid_range() else {
        return Ok(out);
    };
    if fraction == 0.0 {
        return Ok(out);
    }
    for i in 0..out.values.len() {
        if out.valid[i] && rng.random::<f64>() < fraction {
            out.values[i] = if hi > lo { rng.random_range(lo..hi) } else { lo };
        }
    }
    Ok(out)
}

/// The small forward-facing test scene: a back wall, a sphere and a box.
pub fn toy_scene() -> AnalyticScene {
    AnalyticScene {
        primitives: vec![
            Primitive::Box {
                min: [-6.0, -6.0, 7.0],
                max: [6.0, 6.0, 7.5],
                albedo: [0.55, 0.62, 0.78],
            },
            Primitive::Sphere {
                center: [0.45, 0.1, 4.6],
                radius: 1.0,
                albedo: [0.9, 0.35, 0.2],
            },
            Primitive::Box {
                min: [-1.9, -0.6, 3.4],
                max: [-0.6, 1.3, 4.4],
                albedo: [0.25, 0.75, 0.3],
            },
        ],
        background: [0.0, 0.0, 0.0],
    }
}

/// Forward-facing rig: cameras on a small disc around the origin, all
/// looking at `(0, 0, 5)`.
pub fn toy_rig(offsets: &[[f64; 2]], width: usize, height: usize, focal: f64) -> Vec<CameraModel> {
    let target = Vector3::new(0.0, 0.0, 5.0);
    offsets
        .iter()
        .map(|[x, y]| {
            let eye = Vector3::new(*x, *y, 0.0);
            let r = look_at_rotation(&eye, &target, &Vector3::new(0.0, -1.0, 0.0));
            CameraModel::look_from(focal, width, height, r, -(r * eye)).expect("rig cameras are valid")
        })
        .collect()
}

/// Offsets of the default rig: three training positions then two held-out
/// positions between them.
pub const TOY_OFFSETS: [[f64; 2]; 5] = [[0.0, 0.0], [0.5, 0.15], [-0.45, -0.2], [0.25, -0.1], [-0.2, 0.12]];

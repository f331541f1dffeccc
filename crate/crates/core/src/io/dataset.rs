//! RGB-D view collections on disk: `cameras.json` plus PNG images.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::IoError;
use crate::geometry::{CameraModel, DepthMap};
use crate::raster::ColorImage;

pub const CAMERAS_FILE: &str = "cameras.json";

/// One record of a camera file. `image` and `depth` are paths relative to
/// the file; pose-only lists leave them out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
    #[serde(rename = "K")]
    pub k: [f64; 9],
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub width: usize,
    pub height: usize,
    /// Meters per raw depth unit.
    #[serde(default = "default_depth_scale")]
    pub depth_scale: f64,
}

fn default_depth_scale() -> f64 {
    1e-3
}

impl CameraRecord {
    pub fn from_camera(cam: &CameraModel) -> Self {
        let flat = |m: &Matrix3<f64>| {
            let mut out = [0.0; 9];
            for r in 0..3 {
                for c in 0..3 {
                    out[3 * r + c] = m[(r, c)];
                }
            }
            out
        };
        let t = cam.t();
        Self {
            image: None,
            depth: None,
            k: flat(cam.k()),
            r: flat(cam.r()),
            t: [t.x, t.y, t.z],
            width: cam.width(),
            height: cam.height(),
            depth_scale: default_depth_scale(),
        }
    }

    pub fn camera(&self) -> Result<CameraModel, crate::geometry::GeometryError> {
        CameraModel::new(
            Matrix3::from_row_slice(&self.k),
            Matrix3::from_row_slice(&self.r),
            Vector3::from(self.t),
            self.width,
            self.height,
        )
    }
}

/// Read a camera list, validating every camera.
pub fn read_cameras(path: &Path) -> Result<Vec<(CameraRecord, CameraModel)>, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    let records: Vec<CameraRecord> = serde_json::from_str(&text).map_err(|e| IoError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    records
        .into_iter()
        .enumerate()
        .map(|(view, rec)| {
            let cam = rec.camera().map_err(|e| IoError::View {
                path: path.to_path_buf(),
                view,
                message: e.to_string(),
            })?;
            Ok((rec, cam))
        })
        .collect()
}

pub fn write_cameras(path: &Path, records: &[CameraRecord]) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(records).map_err(|e| IoError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    fs::write(path, text).map_err(|e| IoError::file(path, e))
}

/// One RGB-D view.
#[derive(Clone, Debug)]
pub struct View {
    pub camera: CameraModel,
    pub image: ColorImage,
    pub depth: DepthMap,
}

/// Views with a train/held-out split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub views: Vec<View>,
    pub train: Vec<usize>,
    pub holdout: Vec<usize>,
}

impl Dataset {
    /// Split with the given training views; every other view is held out.
    pub fn with_split(views: Vec<View>, train: &[usize]) -> Result<Self, IoError> {
        let holdout = (0..views.len()).filter(|i| !train.contains(i)).collect();
        let d = Self {
            views,
            train: train.to_vec(),
            holdout,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), IoError> {
        if self.train.is_empty() {
            return Err(IoError::Split("at least one training view is required".into()));
        }
        let mut seen = vec![false; self.views.len()];
        for &i in self.train.iter().chain(&self.holdout) {
            if i >= self.views.len() {
                return Err(IoError::Split(format!(
                    "view index {i} out of range ({} views)",
                    self.views.len()
                )));
            }
            if seen[i] {
                return Err(IoError::Split(format!("view {i} listed twice")));
            }
            seen[i] = true;
        }
        Ok(())
    }
}

pub fn read_rgb_png(path: &Path) -> Result<ColorImage, IoError> {
    let img = image::open(path).map_err(|e| IoError::image(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(ColorImage::from_fn(w, h, |c, r| {
        img.get_pixel(c as u32, r as u32).0.map(|v| v as f64 / 255.0)
    }))
}

pub fn write_rgb_png(path: &Path, img: &ColorImage) -> Result<(), IoError> {
    let buf = ImageBuffer::from_fn(img.width as u32, img.height as u32, |c, r| {
        Rgb(img.get(c as usize, r as usize).map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    buf.save(path).map_err(|e| IoError::image(path, e))
}

/// 16-bit depth PNG: `meters = raw × scale`, raw 0 is invalid.
pub fn read_depth_png(path: &Path, scale: f64) -> Result<DepthMap, IoError> {
    let img = image::open(path).map_err(|e| IoError::image(path, e))?;
    let raw = match img {
        image::DynamicImage::ImageLuma16(b) => b,
        other => {
            return Err(IoError::Format {
                path: path.to_path_buf(),
                message: format!("depth must be 16-bit single channel, found {:?}", other.color()),
            })
        }
    };
    let (w, h) = (raw.width() as usize, raw.height() as usize);
    let mut values = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    for (i, p) in raw.pixels().enumerate() {
        if p.0[0] > 0 {
            values[i] = p.0[0] as f64 * scale;
            valid[i] = true;
        }
    }
    DepthMap::new(w, h, values, valid).map_err(|e| IoError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Quantizes to `round(meters / scale)`, clamped to `[1, 65535]` for valid
/// pixels.
pub fn write_depth_png(path: &Path, depth: &DepthMap, scale: f64) -> Result<(), IoError> {
    let buf = ImageBuffer::from_fn(depth.width as u32, depth.height as u32, |c, r| {
        let raw = match depth.get(c as usize, r as usize) {
            Some(d) => (d / scale).round().clamp(1.0, 65535.0) as u16,
            None => 0,
        };
        Luma([raw])
    });
    buf.save(path).map_err(|e| IoError::image(path, e))
}

/// Load `dir/cameras.json` and every referenced image and depth map. All
/// views start out as training views.
pub fn load_views(dir: &Path) -> Result<Vec<View>, IoError> {
    let cams = read_cameras(&dir.join(CAMERAS_FILE))?;
    if cams.is_empty() {
        return Err(IoError::Split(format!("{} lists no views", dir.join(CAMERAS_FILE).display())));
    }
    cams.into_iter()
        .enumerate()
        .map(|(view, (rec, camera))| {
            let missing = |field: &str| IoError::View {
                path: dir.join(CAMERAS_FILE),
                view,
                message: format!("missing `{field}`"),
            };
            let image = read_rgb_png(&dir.join(rec.image.as_ref().ok_or_else(|| missing("image"))?))?;
            let depth_path: PathBuf = dir.join(rec.depth.as_ref().ok_or_else(|| missing("depth"))?);
            let depth = read_depth_png(&depth_path, rec.depth_scale)?;
            if image.width != camera.width() || image.height != camera.height() || depth.width != image.width
                || depth.height != image.height
            {
                return Err(IoError::View {
                    path: dir.join(CAMERAS_FILE),
                    view,
                    message: format!(
                        "camera is {}x{}, image {}x{}, depth {}x{}",
                        camera.width(),
                        camera.height(),
                        image.width,
                        image.height,
                        depth.width,
                        depth.height
                    ),
                });
            }
            Ok(View { camera, image, depth })
        })
        .collect()
}

pub fn load_dataset(dir: &Path, train: &[usize]) -> Result<Dataset, IoError> {
    Dataset::with_split(load_views(dir)?, train)
}

/// Write views as `rgb_XXX.png`, `depth_XXX.png` and `cameras.json`.
pub fn write_dataset(dir: &Path, views: &[View], depth_scale: f64) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|e| IoError::file(dir, e))?;
    let mut records = Vec::with_capacity(views.len());
    for (i, v) in views.iter().enumerate() {
        let image = format!("rgb_{i:03}.png");
        let depth = format!("depth_{i:03}.png");
        write_rgb_png(&dir.join(&image), &v.image)?;
        write_depth_png(&dir.join(&depth), &v.depth, depth_scale)?;
        let mut rec = CameraRecord::from_camera(&v.camera);
        rec.image = Some(image);
        rec.depth = Some(depth);
        rec.depth_scale = depth_scale;
        records.push(rec);
    }
    write_cameras(&dir.join(CAMERAS_FILE), &records)
}

//! Binary model checkpoints and their render sidecar.
//!
//! Layout: `"DGPF"`, version `u32 = 1`, then `n, I, J, K, P` as `u32`, then
//! every parameter array in [`FieldModel::blocks`] order as little-endian
//! `f32`. The decoder width is implied by the remaining payload length.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::CameraRecord;
use super::IoError;
use crate::field::{Aabb, BasisMatrix, FieldModel, GridSpec, VmFactor};
use crate::geometry::NdcFrame;
use crate::render::{DecoderMlp, RenderOptions};

pub const MAGIC: &[u8; 4] = b"DGPF";
pub const VERSION: u32 = 1;
const HEADER_BYTES: usize = 4 + 4 * 6;

/// Box a loaded model spans until its sidecar says otherwise: the full NDC
/// frustum.
pub const NDC_CUBE: Aabb = Aabb {
    min: [-1.0, -1.0, 0.0],
    max: [1.0, 1.0, 1.0],
};

pub fn encode_checkpoint(model: &FieldModel<f32>) -> Vec<u8> {
    let [i, j, k] = model.grid.dims;
    let mut out = Vec::with_capacity(HEADER_BYTES + 4 * model.param_count().factorized as usize);
    out.extend_from_slice(MAGIC);
    for v in [VERSION as usize, model.views(), i, j, k, model.channels()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for (_, data) in model.blocks() {
        for x in data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<FieldModel<f32>, IoError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(IoError::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(IoError::Truncated {
            expected: HEADER_BYTES,
            found: bytes.len(),
        });
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let version = word(4) as u32;
    if version != VERSION {
        return Err(IoError::Version { found: version });
    }
    if bytes.len() < HEADER_BYTES {
        return Err(IoError::Truncated {
            expected: HEADER_BYTES,
            found: bytes.len(),
        });
    }
    let [n, i, j, k, p] = [8, 12, 16, 20, 24].map(word);
    if n == 0 || p == 0 || [i, j, k].iter().any(|d| *d < 2) {
        return Err(IoError::Corrupt(format!("header n={n} dims={i}x{j}x{k} P={p}")));
    }
    let factor = i + j + k + j * k + i * k + i * j;
    let fixed = 2 * n * factor + p * 3 * n;
    let payload = (bytes.len() - HEADER_BYTES) / 4;
    if (bytes.len() - HEADER_BYTES) % 4 != 0 || payload <= fixed {
        return Err(IoError::Truncated {
            expected: HEADER_BYTES + 4 * (fixed + 1),
            found: bytes.len(),
        });
    }
    let hidden = DecoderMlp::<f32>::hidden_for_count(p, payload - fixed).ok_or_else(|| IoError::Truncated {
        expected: HEADER_BYTES + 4 * fixed,
        found: bytes.len(),
    })?;
    let dims = [i, j, k];
    let grid = GridSpec::new(dims, NDC_CUBE).map_err(|e| IoError::Corrupt(e.to_string()))?;
    let mut model = FieldModel {
        grid,
        density: (0..n).map(|_| VmFactor::zeros(dims)).collect(),
        appearance: (0..n).map(|_| VmFactor::zeros(dims)).collect(),
        basis: BasisMatrix::zeros(p, 3 * n),
        decoder: DecoderMlp::zeros(p, hidden),
    };
    let mut cursor = HEADER_BYTES;
    for (_, data) in model.blocks_mut() {
        for x in data.iter_mut() {
            *x = f32::from_le_bytes(bytes[cursor..cursor + 4].try_into().unwrap());
            cursor += 4;
        }
    }
    debug_assert_eq!(cursor, bytes.len());
    Ok(model)
}

pub fn save_checkpoint(model: &FieldModel<f32>, path: &Path) -> Result<(), IoError> {
    fs::write(path, encode_checkpoint(model)).map_err(|e| IoError::file(path, e))
}

/// Load a checkpoint; the grid spans [`NDC_CUBE`] until a sidecar box is
/// applied with [`RenderMeta::apply`].
pub fn load_checkpoint(path: &Path) -> Result<FieldModel<f32>, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::file(path, e))?;
    decode_checkpoint(&bytes)
}

/// What a checkpoint needs to be rendered: the grid box, the NDC frame and
/// the ray-marching options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderMeta {
    pub bbox: Aabb,
    pub near: f64,
    pub reference: CameraRecord,
    pub render: RenderOptions,
}

impl RenderMeta {
    pub fn new(model: &FieldModel<f32>, frame: &NdcFrame, render: RenderOptions) -> Self {
        Self {
            bbox: model.grid.bbox,
            near: frame.near,
            reference: CameraRecord::from_camera(&frame.reference),
            render,
        }
    }

    /// Sidecar path next to a checkpoint.
    pub fn path_for(checkpoint: &Path) -> PathBuf {
        let mut name = checkpoint.as_os_str().to_owned();
        name.push(".meta.json");
        PathBuf::from(name)
    }

    pub fn frame(&self) -> Result<NdcFrame, IoError> {
        let cam = self.reference.camera().map_err(|e| IoError::Corrupt(e.to_string()))?;
        NdcFrame::new(cam, self.near).map_err(|e| IoError::Corrupt(e.to_string()))
    }

    pub fn apply(&self, model: &mut FieldModel<f32>) -> Result<(), IoError> {
        model.grid = GridSpec::new(model.grid.dims, self.bbox).map_err(|e| IoError::Corrupt(e.to_string()))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| IoError::Json {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        fs::write(path, text).map_err(|e| IoError::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
        serde_json::from_str(&text).map_err(|e| IoError::Json {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Checkpoint plus sidecar, ready to render.
pub fn load_renderable(path: &Path) -> Result<(FieldModel<f32>, RenderMeta), IoError> {
    let mut model = load_checkpoint(path)?;
    let meta = RenderMeta::load(&RenderMeta::path_for(path))?;
    meta.apply(&mut model)?;
    Ok((model, meta))
}

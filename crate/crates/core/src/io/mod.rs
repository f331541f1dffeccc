//! Reading and writing datasets, images and checkpoints.

mod checkpoint;
mod dataset;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_renderable, save_checkpoint, RenderMeta, MAGIC,
    NDC_CUBE, VERSION,
};
pub use dataset::{
    load_dataset, load_views, read_cameras, read_depth_png, read_rgb_png, write_cameras, write_dataset,
    write_depth_png, write_rgb_png, CameraRecord, Dataset, View, CAMERAS_FILE,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("{path}: malformed JSON: {message}")]
    Json { path: PathBuf, message: String },
    #[error("{path}: view {view}: {message}")]
    View { path: PathBuf, view: usize, message: String },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("invalid view split: {0}")]
    Split(String),
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {found}")]
    Version { found: u32 },
    #[error("truncated checkpoint: expected at least {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

impl IoError {
    pub(crate) fn file(path: &Path, source: std::io::Error) -> Self {
        IoError::File {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn image(path: &Path, e: image::ImageError) -> Self {
        IoError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

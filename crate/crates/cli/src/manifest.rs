use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use vmfuse::train::TrainConfig;

/// Record of one training run.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub seed: u64,
    pub train_views: Vec<usize>,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    /// Every file the run wrote, relative to the output directory.
    pub artifacts: Vec<PathBuf>,
    /// Hash over the input files, see [`content_hash`].
    pub input_hash: String,
    pub inputs: Vec<InputFile>,
}

#[derive(Debug, Serialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

/// SHA-256 of `"blob <len>\0" + bytes`, the git object framing.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Hash every file, then hash the sorted `"<hash> <path>\n"` listing.
pub fn content_hash(files: &[(PathBuf, PathBuf)]) -> Result<(String, Vec<InputFile>)> {
    let mut entries = Vec::with_capacity(files.len());
    for (label, path) in files {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        entries.push(InputFile {
            path: label.clone(),
            sha256: blob_hash(&bytes),
        });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let listing: String = entries
        .iter()
        .map(|e| format!("{} {}\n", e.sha256, e.path.display()))
        .collect();
    Ok((blob_hash(listing.as_bytes()), entries))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

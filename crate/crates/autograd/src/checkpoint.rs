//! Checkpoint persistence: a JSON manifest next to a raw little-endian `f32` blob.
//!
//! The blob holds every tensor of the store back to back, in manifest order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{AutogradError, Result};
use crate::param::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "fbpick-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    /// Offset into the blob in elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    /// Blob file name, relative to the manifest.
    pub blob: String,
    pub tensors: Vec<TensorEntry>,
    /// Model description and training metadata owned by the caller.
    pub metadata: serde_json::Value,
}

/// Blob path for a manifest path: same stem, `.bin` extension.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn save_checkpoint(manifest_path: &Path, store: &ParamStore<f32>, metadata: serde_json::Value) -> Result<()> {
    let blob = blob_path(manifest_path);
    let mut bytes = Vec::new();
    let mut tensors = Vec::with_capacity(store.len());
    let mut offset = 0;
    for (_, p) in store.iter() {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            trainable: p.trainable,
            offset,
        });
        offset += p.value.numel();
        for v in p.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.to_string(),
        blob: blob
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| AutogradError::Checkpoint(format!("bad path {}", manifest_path.display())))?
            .to_string(),
        tensors,
        metadata,
    };
    fs::write(&blob, bytes)?;
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(manifest_path, text)?;
    Ok(())
}

/// Reads a checkpoint into `(manifest, named tensors in manifest order)`.
pub fn read_checkpoint(manifest_path: &Path) -> Result<(CheckpointManifest, Vec<(String, Tensor<f32>)>)> {
    let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(AutogradError::Checkpoint(format!("unsupported format {:?}", manifest.format)));
    }
    let blob_file = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.blob);
    let bytes = fs::read(&blob_file)?;
    if bytes.len() % 4 != 0 {
        return Err(AutogradError::Checkpoint("blob length is not a multiple of 4".into()));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut out = Vec::with_capacity(manifest.tensors.len());
    let mut expected_offset = 0;
    for e in &manifest.tensors {
        let n: usize = e.shape.iter().product();
        if e.offset != expected_offset || e.offset + n > values.len() {
            return Err(AutogradError::Checkpoint(format!("tensor {} lies outside the blob", e.name)));
        }
        expected_offset += n;
        out.push((e.name.clone(), Tensor::new(&e.shape, values[e.offset..e.offset + n].to_vec())?));
    }
    if expected_offset != values.len() {
        return Err(AutogradError::Checkpoint("blob has trailing data".into()));
    }
    Ok((manifest, out))
}

/// Loads tensor values into an already-built store with the same layout.
pub fn load_checkpoint_into(manifest_path: &Path, store: &mut ParamStore<f32>) -> Result<CheckpointManifest> {
    let (manifest, tensors) = read_checkpoint(manifest_path)?;
    store.load_named(tensors)?;
    Ok(manifest)
}

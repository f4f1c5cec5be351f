use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ProbeConfig, ProbeModel};
use crate::tensor::Matrix;
use crate::{Error, Result};

const FORMAT: &str = "rsa-probe-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub config: ProbeConfig,
    pub seed: u64,
    /// Blob file name, relative to the manifest.
    pub blob: String,
    pub tensors: Vec<TensorEntry>,
}

/// Writes `path` (JSON manifest) and a sibling `.bin` blob of little-endian `f64`s.
pub fn save(model: &ProbeModel, path: &Path) -> Result<Manifest> {
    let blob_path = path.with_extension("bin");
    let blob_name = blob_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Checkpoint(format!("bad checkpoint path {}", path.display())))?
        .to_owned();
    let mut bytes = Vec::new();
    let mut tensors = Vec::new();
    for (name, m) in model.tensors() {
        tensors.push(TensorEntry {
            name: name.to_owned(),
            shape: vec![m.rows(), m.cols()],
            dtype: "f64".into(),
            offset: bytes.len(),
        });
        bytes.extend(m.data().iter().flat_map(|v| v.to_le_bytes()));
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        config: model.config,
        seed: model.seed,
        blob: blob_name,
        tensors,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&blob_path, &bytes)?;
    fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reads a checkpoint written by [`save`], validating every shape and offset.
pub fn load(path: &Path) -> Result<ProbeModel> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    if manifest.format != FORMAT {
        return Err(Error::Checkpoint(format!("unsupported format {:?}", manifest.format)));
    }
    let blob = fs::read(path.with_file_name(&manifest.blob))?;
    let mut model = ProbeModel::new(manifest.config, manifest.seed)?;
    let expected: Vec<(&str, (usize, usize))> = model.tensors().into_iter().map(|(n, m)| (n, m.dims())).collect();
    if expected.len() != manifest.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} tensors, model has {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    let mut end = 0;
    for ((dst, (name, (r, c))), entry) in model.tensors_mut().into_iter().zip(expected).zip(&manifest.tensors) {
        if entry.name != name || entry.shape != [r, c] || entry.dtype != "f64" {
            return Err(Error::Checkpoint(format!(
                "tensor {:?} {:?} {} does not match expected {name:?} [{r}, {c}] f64",
                entry.name, entry.shape, entry.dtype
            )));
        }
        let len = r * c * 8;
        let bytes = blob
            .get(entry.offset..entry.offset + len)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} runs past the blob")))?;
        let data = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        *dst = Matrix::new(r, c, data)?;
        end = end.max(entry.offset + len);
    }
    if end != blob.len() {
        return Err(Error::Checkpoint(format!(
            "blob has {} bytes, manifest covers {end}",
            blob.len()
        )));
    }
    Ok(model)
}

//! Parameter checkpoints: a little-endian `f64` blob next to a JSON
//! manifest describing every tensor, plus free-form metadata.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const FORMAT: &str = "ndfusion-checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub group: String,
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub tensors: Vec<TensorInfo>,
    /// SHA-256 of the blob.
    pub blob_sha256: String,
    /// SHA-256 of the canonical JSON of the model configuration.
    pub config_hash: String,
    pub meta: serde_json::Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of a serialisable configuration.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(config)?.as_bytes()))
}

pub fn paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{stem}.bin")), dir.join(format!("{stem}.json")))
}

pub fn save(dir: &Path, stem: &str, store: &ParamStore, config_hash: &str, meta: serde_json::Value) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let blob: Vec<u8> = store.flatten().iter().flat_map(|v| v.to_le_bytes()).collect();
    let manifest = Manifest {
        format: FORMAT.to_string(),
        tensors: store
            .entries()
            .iter()
            .map(|e| TensorInfo { group: e.group.clone(), name: e.name.clone(), rows: e.value.rows(), cols: e.value.cols() })
            .collect(),
        blob_sha256: sha256_hex(&blob),
        config_hash: config_hash.to_string(),
        meta,
    };
    let (bin, json) = paths(dir, stem);
    std::fs::write(&bin, &blob).map_err(|e| Error::io(&bin, e))?;
    std::fs::write(&json, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&json, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path, stem: &str) -> Result<Manifest> {
    let (_, json) = paths(dir, stem);
    let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format != FORMAT {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint manifest", json.display())));
    }
    Ok(m)
}

/// Load values into `store`, whose layout must match the manifest.
pub fn load(dir: &Path, stem: &str, store: &mut ParamStore, config_hash: &str) -> Result<Manifest> {
    let m = read_manifest(dir, stem)?;
    if m.config_hash != config_hash {
        return Err(Error::Checkpoint("model configuration differs from the checkpoint".to_string()));
    }
    let layout_ok = m.tensors.len() == store.len()
        && m.tensors.iter().zip(store.entries()).all(|(t, e)| {
            t.group == e.group && t.name == e.name && t.rows == e.value.rows() && t.cols == e.value.cols()
        });
    if !layout_ok {
        return Err(Error::Checkpoint("tensor layout differs from the model".to_string()));
    }
    let (bin, _) = paths(dir, stem);
    let blob = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if sha256_hex(&blob) != m.blob_sha256 {
        return Err(Error::Checkpoint(format!("{} does not match its manifest hash", bin.display())));
    }
    if blob.len() % 8 != 0 {
        return Err(Error::Checkpoint("blob length is not a multiple of 8".to_string()));
    }
    let flat: Vec<f64> = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    store.load_flat(&flat).map_err(Error::Checkpoint)?;
    Ok(m)
}

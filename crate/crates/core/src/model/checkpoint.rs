use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::arch::{Model, ModelSpec, ParamKind};
use crate::error::{Error, Result};

pub(crate) const CHECKPOINT_MAGIC: &[u8; 8] = b"CSTRCKP1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub layer_index: usize,
    pub kind: ParamKind,
    pub maskable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub spec: ModelSpec,
    pub seed: u64,
    /// Hash of the configuration that produced the weights.
    pub config_hash: String,
    /// The configuration itself, echoed for provenance.
    pub config: serde_json::Value,
    pub tensors: Vec<TensorInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
}

/// `magic | u64 LE header length | JSON header | payload`, written atomically.
pub(crate) fn write_container<H: Serialize>(path: &Path, magic: &[u8; 8], header: &H, payload: &[u8]) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    let mut bytes = Vec::with_capacity(16 + json.len() + payload.len());
    bytes.extend_from_slice(magic);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    bytes.extend_from_slice(payload);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_container<H: DeserializeOwned>(path: &Path, magic: &[u8; 8], what: &'static str) -> Result<(H, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |detail: &str| Error::Format {
        what,
        detail: format!("{}: {detail}", path.display()),
    };
    if bytes.len() < 16 || &bytes[..8] != magic {
        return Err(bad("bad magic"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if bytes.len() < 16 + len {
        return Err(bad("truncated header"));
    }
    let header = serde_json::from_slice(&bytes[16..16 + len])?;
    Ok((header, bytes[16 + len..].to_vec()))
}

pub fn header_for(model: &Model, seed: u64, config: serde_json::Value, config_hash: String) -> CheckpointHeader {
    CheckpointHeader {
        spec: model.spec.clone(),
        seed,
        config_hash,
        config,
        tensors: model
            .params
            .iter()
            .map(|p| TensorInfo {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                layer_index: p.layer_index,
                kind: p.kind,
                maskable: p.maskable,
            })
            .collect(),
        test_accuracy: None,
    }
}

pub fn save_checkpoint(model: &Model, header: &CheckpointHeader, path: &Path) -> Result<()> {
    let mut payload = Vec::with_capacity(model.param_count() * 8);
    for p in &model.params {
        for v in p.tensor.values() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_container(path, CHECKPOINT_MAGIC, header, &payload)
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointHeader)> {
    let (header, payload): (CheckpointHeader, _) = read_container(path, CHECKPOINT_MAGIC, "checkpoint")?;
    let total: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if payload.len() != total * 8 {
        return Err(Error::Format {
            what: "checkpoint",
            detail: format!("{} payload bytes for {total} values", payload.len()),
        });
    }
    let mut floats = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let values = header
        .tensors
        .iter()
        .map(|t| floats.by_ref().take(t.shape.iter().product()).collect())
        .collect();
    let model = Model::from_values(header.spec.clone(), values)?;
    for (p, t) in model.params.iter().zip(&header.tensors) {
        if p.name != t.name || p.tensor.shape() != t.shape.as_slice() {
            return Err(Error::Format {
                what: "checkpoint",
                detail: format!("tensor {} does not match the architecture", t.name),
            });
        }
    }
    Ok((model, header))
}

//! Model persistence: a JSON manifest next to a raw little-endian payload.
//!
//! `<stem>.json` records the network configuration, element type, and the
//! name and shape of every tensor in canonical order; `<stem>.bin` holds
//! the tensor data concatenated in that same order. Loading restores a
//! bit-identical model.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Scalar;
use crate::unet::{scaffold, Model, UNetConfig};

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config: UNetConfig,
    dtype: String,
    tensors: Vec<TensorEntry>,
}

fn manifest_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

fn payload_path(stem: &Path) -> PathBuf {
    stem.with_extension("bin")
}

pub fn save<F: Scalar>(model: &Model<F>, stem: &Path) -> Result<()> {
    let entries = model.visit();
    let manifest = Manifest {
        config: model.config.clone(),
        dtype: F::DTYPE.to_string(),
        tensors: entries
            .iter()
            .map(|(name, _, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let total: usize = entries.iter().map(|(_, _, t)| t.numel()).sum();
    let mut payload = Vec::with_capacity(total * F::BYTE_WIDTH);
    for (_, _, t) in &entries {
        for v in &t.data {
            payload.extend_from_slice(&v.to_le_bytes_vec());
        }
    }

    let mpath = manifest_path(stem);
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
    fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))?;
    let bpath = payload_path(stem);
    fs::write(&bpath, payload).map_err(|e| Error::io(&bpath, e))
}

pub fn load<F: Scalar>(stem: &Path) -> Result<Model<F>> {
    let mpath = manifest_path(stem);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("manifest parse: {e}")))?;
    if manifest.dtype != F::DTYPE {
        return Err(Error::Config(format!(
            "checkpoint holds {} tensors, loader expects {}",
            manifest.dtype,
            F::DTYPE
        )));
    }

    let mut model = scaffold::<F>(&manifest.config)?;
    let bpath = payload_path(stem);
    let payload = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;

    let mut targets = model.visit_mut();
    if targets.len() != manifest.tensors.len() {
        return Err(Error::Config(format!(
            "manifest lists {} tensors, configuration implies {}",
            manifest.tensors.len(),
            targets.len()
        )));
    }
    let expected: usize = targets.iter().map(|(_, _, t)| t.numel()).sum();
    if payload.len() != expected * F::BYTE_WIDTH {
        return Err(Error::Config(format!(
            "payload holds {} bytes, manifest implies {}",
            payload.len(),
            expected * F::BYTE_WIDTH
        )));
    }

    let mut offset = 0;
    for ((name, _, tensor), entry) in targets.iter_mut().zip(&manifest.tensors) {
        if *name != entry.name || tensor.shape != entry.shape {
            return Err(Error::Config(format!(
                "tensor {} with shape {:?} does not match manifest entry {} {:?}",
                name, tensor.shape, entry.name, entry.shape
            )));
        }
        for v in tensor.data.iter_mut() {
            *v = F::from_le_slice(&payload[offset..offset + F::BYTE_WIDTH]);
            offset += F::BYTE_WIDTH;
        }
    }
    Ok(model)
}

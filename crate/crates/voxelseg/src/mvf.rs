//! Internal cache format for preprocessed samples.
//!
//! A sample is stored under a path stem as three files: `<stem>.json` with
//! geometry and intensity metadata, `<stem>.img.raw` with little-endian
//! float32 voxels, and `<stem>.lbl.raw` with one unsigned byte of class index
//! per voxel when labels are present.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{ImageVolume, IntensityKind, LabelVolume, Sample};

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    shape: (usize, usize, usize),
    spacing: (f32, f32, f32),
    intensity_kind: IntensityKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_classes: Option<u8>,
}

fn sidecar_path(stem: &Path) -> std::path::PathBuf {
    stem.with_extension("json")
}

fn image_path(stem: &Path) -> std::path::PathBuf {
    stem.with_extension("img.raw")
}

fn label_path(stem: &Path) -> std::path::PathBuf {
    stem.with_extension("lbl.raw")
}

pub fn write_mvf(sample: &Sample, stem: impl AsRef<Path>) -> Result<()> {
    let stem = stem.as_ref();
    let sidecar = Sidecar {
        shape: sample.image.shape,
        spacing: sample.image.spacing,
        intensity_kind: sample.image.intensity_kind,
        num_classes: sample.labels.as_ref().map(|l| l.num_classes),
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::Config(format!("sidecar serialization: {e}")))?;
    let sc = sidecar_path(stem);
    fs::write(&sc, json).map_err(|e| Error::io(&sc, e))?;

    let mut img_bytes = Vec::with_capacity(4 * sample.image.voxels.len());
    for v in &sample.image.voxels {
        img_bytes.extend_from_slice(&v.to_le_bytes());
    }
    let ip = image_path(stem);
    fs::write(&ip, img_bytes).map_err(|e| Error::io(&ip, e))?;

    if let Some(ref labels) = sample.labels {
        let lp = label_path(stem);
        fs::write(&lp, &labels.voxels).map_err(|e| Error::io(&lp, e))?;
    }
    Ok(())
}

pub fn read_mvf(stem: impl AsRef<Path>) -> Result<Sample> {
    let stem = stem.as_ref();
    let sc = sidecar_path(stem);
    if !sc.exists() {
        return Err(Error::MissingSidecar { path: sc });
    }
    let json = fs::read_to_string(&sc).map_err(|e| Error::io(&sc, e))?;
    let sidecar: Sidecar = serde_json::from_str(&json)
        .map_err(|e| Error::Config(format!("sidecar parse in {}: {e}", sc.display())))?;

    let count = sidecar.shape.0 * sidecar.shape.1 * sidecar.shape.2;
    let ip = image_path(stem);
    let img_bytes = fs::read(&ip).map_err(|e| Error::io(&ip, e))?;
    if img_bytes.len() != 4 * count {
        return Err(Error::ShapeMismatch(format!(
            "{} holds {} voxels, sidecar declares {count}",
            ip.display(),
            img_bytes.len() / 4
        )));
    }
    let voxels = img_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let image = ImageVolume::new(sidecar.shape, sidecar.spacing, voxels, sidecar.intensity_kind)?;

    let labels = match sidecar.num_classes {
        None => None,
        Some(num_classes) => {
            let lp = label_path(stem);
            let lbl_bytes = fs::read(&lp).map_err(|e| Error::io(&lp, e))?;
            if lbl_bytes.len() != count {
                return Err(Error::ShapeMismatch(format!(
                    "{} holds {} voxels, sidecar declares {count}",
                    lp.display(),
                    lbl_bytes.len()
                )));
            }
            Some(LabelVolume::new(sidecar.shape, lbl_bytes, num_classes)?)
        }
    };

    let id = stem
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sample".to_string());
    Sample::new(id, image, labels)
}

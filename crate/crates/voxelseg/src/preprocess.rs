//! Intensity preprocessing and spatial resampling.
//!
//! The pipeline for a raw CT volume is clip, grayscale normalize, z-score,
//! then resample to the target spacing. Volumes that arrive already on the
//! 0..=255 grayscale range skip the first two steps; the distinction is
//! carried explicitly by [`IntensityKind`], never guessed from voxel values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp;
use crate::volume::{ImageVolume, IntensityKind, LabelVolume, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub clip_min: f32,
    pub clip_max: f32,
    pub grayscale_lo: f32,
    pub grayscale_hi: f32,
    pub target_spacing: (f32, f32, f32),
    pub zscore_epsilon: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            clip_min: -1250.0,
            clip_max: 250.0,
            grayscale_lo: 0.0,
            grayscale_hi: 255.0,
            target_spacing: (1.58, 1.58, 2.70),
            zscore_epsilon: 1e-8,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_min < self.clip_max) {
            return Err(Error::Config(format!(
                "clip_min {} must be below clip_max {}",
                self.clip_min, self.clip_max
            )));
        }
        let t = self.target_spacing;
        if !(t.0 > 0.0 && t.1 > 0.0 && t.2 > 0.0) {
            return Err(Error::Config(format!("target_spacing must be positive, got {t:?}")));
        }
        if !(self.zscore_epsilon > 0.0) {
            return Err(Error::Config("zscore_epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Clamp every voxel into `[min, max]`. Only raw attenuation volumes qualify;
/// already-grayscale inputs must skip clipping.
pub fn clip_intensity(vol: &ImageVolume, min: f32, max: f32) -> Result<ImageVolume> {
    if vol.intensity_kind != IntensityKind::HounsfieldLike {
        return Err(Error::WrongIntensityKind {
            expected: IntensityKind::HounsfieldLike.name().into(),
            actual: vol.intensity_kind.name().into(),
        });
    }
    let voxels = vol.voxels.iter().map(|&v| v.clamp(min, max)).collect();
    ImageVolume::new(vol.shape, vol.spacing, voxels, IntensityKind::HounsfieldLike)
}

/// Linear map of `[src_min, src_max]` onto `[lo, hi]`.
pub fn normalize_grayscale(
    vol: &ImageVolume,
    src_min: f32,
    src_max: f32,
    lo: f32,
    hi: f32,
) -> Result<ImageVolume> {
    if vol.intensity_kind != IntensityKind::HounsfieldLike {
        return Err(Error::WrongIntensityKind {
            expected: IntensityKind::HounsfieldLike.name().into(),
            actual: vol.intensity_kind.name().into(),
        });
    }
    if src_min == src_max {
        return Err(Error::DegenerateRange(format!(
            "source range [{src_min}, {src_max}] has zero width"
        )));
    }
    let scale = (hi - lo) as f64 / (src_max - src_min) as f64;
    let voxels = vol
        .voxels
        .iter()
        .map(|&v| (lo as f64 + (v - src_min) as f64 * scale) as f32)
        .collect();
    ImageVolume::new(vol.shape, vol.spacing, voxels, IntensityKind::Grayscale0to255)
}

/// Standardize to zero mean, unit variance using per-volume population
/// statistics. A volume with std below `epsilon` becomes all zeros.
pub fn zscore(vol: &ImageVolume, epsilon: f64) -> ImageVolume {
    let n = vol.voxels.len() as f64;
    let mean = vol.voxels.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = vol.voxels.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let voxels = if std < epsilon {
        vec![0.0; vol.voxels.len()]
    } else {
        vol.voxels.iter().map(|&v| ((v as f64 - mean) / std) as f32).collect()
    };
    ImageVolume::new(vol.shape, vol.spacing, voxels, IntensityKind::ZScored)
        .expect("zscore preserves shape and finiteness")
}

/// Output shape after resampling: per axis `round_half_up(n * s_in / s_target)`,
/// floored at 1.
pub fn resampled_shape(
    shape: (usize, usize, usize),
    spacing: (f32, f32, f32),
    target: (f32, f32, f32),
) -> (usize, usize, usize) {
    let axis = |n: usize, s: f32, t: f32| -> usize {
        let out = (n as f64 * s as f64 / t as f64 + 0.5).floor();
        (out as usize).max(1)
    };
    (
        axis(shape.0, spacing.0, target.0),
        axis(shape.1, spacing.1, target.1),
        axis(shape.2, spacing.2, target.2),
    )
}

/// Source coordinate of output index `i` under the fixed convention
/// `src = i * s_target / s_in` (voxel centers at `index * spacing`).
#[inline]
fn source_coord(i: usize, s_target: f32, s_in: f32) -> f64 {
    i as f64 * s_target as f64 / s_in as f64
}

/// Trilinear resample onto `target` spacing.
pub fn resample_image(vol: &ImageVolume, target: (f32, f32, f32)) -> ImageVolume {
    if vol.spacing == target {
        return vol.clone();
    }
    let out_shape = resampled_shape(vol.shape, vol.spacing, target);
    let (nx, ny, nz) = out_shape;
    let mut voxels = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        let sz = source_coord(z, target.2, vol.spacing.2);
        for y in 0..ny {
            let sy = source_coord(y, target.1, vol.spacing.1);
            for x in 0..nx {
                let sx = source_coord(x, target.0, vol.spacing.0);
                voxels.push(interp::trilinear(vol.shape, &vol.voxels, (sx, sy, sz)) as f32);
            }
        }
    }
    ImageVolume::new(out_shape, target, voxels, vol.intensity_kind)
        .expect("resampled volume is structurally valid")
}

/// Nearest-neighbor resample of a class-index grid, on the same coordinate
/// convention as [`resample_image`]. `spacing` is the grid's current spacing,
/// taken from the paired image.
pub fn resample_labels(
    labels: &LabelVolume,
    spacing: (f32, f32, f32),
    target: (f32, f32, f32),
) -> LabelVolume {
    if spacing == target {
        return labels.clone();
    }
    let out_shape = resampled_shape(labels.shape, spacing, target);
    let (nx, ny, nz) = out_shape;
    let mut voxels = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        let sz = source_coord(z, target.2, spacing.2);
        for y in 0..ny {
            let sy = source_coord(y, target.1, spacing.1);
            for x in 0..nx {
                let sx = source_coord(x, target.0, spacing.0);
                voxels.push(interp::nearest(labels.shape, &labels.voxels, (sx, sy, sz)));
            }
        }
    }
    LabelVolume::new(out_shape, voxels, labels.num_classes)
        .expect("nearest-neighbor resample cannot introduce new classes")
}

/// Full preprocessing for one sample: intensity steps by kind, then joint
/// resampling of image and labels onto the target spacing.
pub fn preprocess_sample(sample: &Sample, cfg: &PreprocessConfig) -> Result<Sample> {
    cfg.validate()?;
    let standardized = match sample.image.intensity_kind {
        IntensityKind::HounsfieldLike => {
            let clipped = clip_intensity(&sample.image, cfg.clip_min, cfg.clip_max)?;
            let gray = normalize_grayscale(
                &clipped,
                cfg.clip_min,
                cfg.clip_max,
                cfg.grayscale_lo,
                cfg.grayscale_hi,
            )?;
            zscore(&gray, cfg.zscore_epsilon)
        }
        IntensityKind::Grayscale0to255 => zscore(&sample.image, cfg.zscore_epsilon),
        IntensityKind::ZScored => sample.image.clone(),
    };
    let src_spacing = standardized.spacing;
    let image = resample_image(&standardized, cfg.target_spacing);
    let labels = sample
        .labels
        .as_ref()
        .map(|l| resample_labels(l, src_spacing, cfg.target_spacing));
    Sample::new(sample.id.clone(), image, labels)
}

//! Patch extraction and reassembly.
//!
//! Volumes are stored x-fastest, while network tensors use layout
//! `[b, x, y, z, c]` with the channel fastest and x the slowest spatial
//! axis. Patch windows are produced directly in tensor order so batches
//! stack by concatenation; the index transposition happens once here.

use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmentConfig};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::volume::{ImageVolume, LabelVolume, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchGridConfig {
    pub patch_shape: (usize, usize, usize),
    pub overlap: (usize, usize, usize),
    pub batch_size: usize,
}

impl Default for PatchGridConfig {
    fn default() -> Self {
        PatchGridConfig {
            patch_shape: (160, 160, 80),
            overlap: (80, 80, 40),
            batch_size: 2,
        }
    }
}

impl PatchGridConfig {
    pub fn validate(&self) -> Result<()> {
        let p = [self.patch_shape.0, self.patch_shape.1, self.patch_shape.2];
        let o = [self.overlap.0, self.overlap.1, self.overlap.2];
        for axis in 0..3 {
            if p[axis] == 0 {
                return Err(Error::Config(format!("patch_shape axis {axis} must be positive")));
            }
            if o[axis] >= p[axis] {
                return Err(Error::Config(format!(
                    "overlap {} must be below patch extent {} on axis {axis}",
                    o[axis], p[axis]
                )));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// How a sample was grown to reach the minimum patch extent; allows exact
/// crop-back of predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PadRecord {
    pub start: (usize, usize, usize),
    pub original: (usize, usize, usize),
}

impl PadRecord {
    pub fn is_identity(&self) -> bool {
        self.start == (0, 0, 0)
    }
}

/// Grow every axis to at least the patch extent, content centered as evenly
/// as possible. Image padding uses the volume minimum, labels use background.
pub fn pad_to_min(sample: &Sample, patch_shape: (usize, usize, usize)) -> (Sample, PadRecord) {
    let (nx, ny, nz) = sample.image.shape;
    let (px, py, pz) = patch_shape;
    let out = (nx.max(px), ny.max(py), nz.max(pz));
    let record = PadRecord {
        start: ((out.0 - nx) / 2, (out.1 - ny) / 2, (out.2 - nz) / 2),
        original: (nx, ny, nz),
    };
    if out == sample.image.shape {
        return (sample.clone(), record);
    }

    let fill = sample.image.voxels.iter().fold(f32::INFINITY, |m, &v| m.min(v));
    let mut voxels = vec![fill; out.0 * out.1 * out.2];
    for z in 0..nz {
        for y in 0..ny {
            let src = sample.image.index(0, y, z);
            let dst = (record.start.0) + out.0 * ((y + record.start.1) + out.1 * (z + record.start.2));
            voxels[dst..dst + nx].copy_from_slice(&sample.image.voxels[src..src + nx]);
        }
    }
    let image = ImageVolume::new(out, sample.image.spacing, voxels, sample.image.intensity_kind)
        .expect("padding preserves validity");

    let labels = sample.labels.as_ref().map(|l| {
        let mut voxels = vec![0u8; out.0 * out.1 * out.2];
        for z in 0..nz {
            for y in 0..ny {
                let src = l.index(0, y, z);
                let dst = (record.start.0) + out.0 * ((y + record.start.1) + out.1 * (z + record.start.2));
                voxels[dst..dst + nx].copy_from_slice(&l.voxels[src..src + nx]);
            }
        }
        LabelVolume::new(out, voxels, l.num_classes).expect("padding preserves labels")
    });

    (
        Sample::new(sample.id.clone(), image, labels).expect("shapes padded together"),
        record,
    )
}

pub fn crop_back_image(padded: &ImageVolume, record: &PadRecord) -> ImageVolume {
    let (nx, ny, nz) = record.original;
    let mut voxels = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            let src = padded.index(record.start.0, y + record.start.1, z + record.start.2);
            voxels.extend_from_slice(&padded.voxels[src..src + nx]);
        }
    }
    ImageVolume::new(record.original, padded.spacing, voxels, padded.intensity_kind)
        .expect("crop-back of a valid padded volume")
}

pub fn crop_back_labels(padded: &LabelVolume, record: &PadRecord) -> LabelVolume {
    let (nx, ny, nz) = record.original;
    let mut voxels = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            let src = padded.index(record.start.0, y + record.start.1, z + record.start.2);
            voxels.extend_from_slice(&padded.voxels[src..src + nx]);
        }
    }
    LabelVolume::new(record.original, voxels, padded.num_classes)
        .expect("crop-back of a valid padded label volume")
}

/// One training or inference window in tensor order.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub origin: (usize, usize, usize),
    /// `[px, py, pz]`, x slowest.
    pub image: Vec<f32>,
    /// One-hot `[px, py, pz, C]`, channel fastest.
    pub onehot: Option<Vec<f32>>,
}

/// Copy the image window at `origin` into tensor order.
pub fn image_window(vol: &ImageVolume, origin: (usize, usize, usize), patch: (usize, usize, usize)) -> Vec<f32> {
    let (px, py, pz) = patch;
    let mut out = Vec::with_capacity(px * py * pz);
    for x in 0..px {
        for y in 0..py {
            for z in 0..pz {
                out.push(vol.at(origin.0 + x, origin.1 + y, origin.2 + z));
            }
        }
    }
    out
}

fn onehot_window(
    labels: &LabelVolume,
    origin: (usize, usize, usize),
    patch: (usize, usize, usize),
    num_classes: usize,
) -> Vec<f32> {
    let (px, py, pz) = patch;
    let mut out = vec![0.0f32; px * py * pz * num_classes];
    let mut i = 0;
    for x in 0..px {
        for y in 0..py {
            for z in 0..pz {
                let c = labels.at(origin.0 + x, origin.1 + y, origin.2 + z) as usize;
                out[i * num_classes + c] = 1.0;
                i += 1;
            }
        }
    }
    out
}

/// Uniform crop origin over all valid positions per axis.
pub fn crop_origin(
    vol_shape: (usize, usize, usize),
    patch: (usize, usize, usize),
    rng: &mut SeededRng,
) -> Result<(usize, usize, usize)> {
    if patch.0 > vol_shape.0 || patch.1 > vol_shape.1 || patch.2 > vol_shape.2 {
        return Err(Error::PatchExceedsVolume {
            patch,
            volume: vol_shape,
        });
    }
    Ok((
        rng.below(vol_shape.0 - patch.0 + 1),
        rng.below(vol_shape.1 - patch.1 + 1),
        rng.below(vol_shape.2 - patch.2 + 1),
    ))
}

/// Cut one random patch out of a sample already padded to the patch extent.
pub fn random_crop(sample: &Sample, patch: (usize, usize, usize), rng: &mut SeededRng) -> Result<Patch> {
    let origin = crop_origin(sample.image.shape, patch, rng)?;
    let image = image_window(&sample.image, origin, patch);
    let onehot = sample
        .labels
        .as_ref()
        .map(|l| onehot_window(l, origin, patch, l.num_classes as usize));
    Ok(Patch { origin, image, onehot })
}

/// Ordered inference grid: per axis, origins advance by the stride
/// `patch - overlap`; a final origin clamps to `dim - patch` whenever the
/// stride walk stops short of the edge. Cartesian product in x-outer order.
pub fn grid_positions(
    vol_shape: (usize, usize, usize),
    patch: (usize, usize, usize),
    overlap: (usize, usize, usize),
) -> Result<Vec<(usize, usize, usize)>> {
    let axis = |n: usize, p: usize, o: usize| -> Result<Vec<usize>> {
        if p > n {
            return Err(Error::PatchExceedsVolume {
                patch,
                volume: vol_shape,
            });
        }
        let stride = p - o;
        let mut xs = Vec::new();
        let mut at = 0;
        while at + p <= n {
            xs.push(at);
            at += stride;
        }
        let last = *xs.last().expect("p <= n guarantees at least origin 0");
        if last + p < n {
            xs.push(n - p);
        }
        Ok(xs)
    };
    let xs = axis(vol_shape.0, patch.0, overlap.0)?;
    let ys = axis(vol_shape.1, patch.1, overlap.1)?;
    let zs = axis(vol_shape.2, patch.2, overlap.2)?;
    let mut out = Vec::with_capacity(xs.len() * ys.len() * zs.len());
    for &x in &xs {
        for &y in &ys {
            for &z in &zs {
                out.push((x, y, z));
            }
        }
    }
    Ok(out)
}

/// Merge per-patch class probabilities into a full volume by running-mean
/// averaging over the patches covering each voxel.
///
/// Patch input layout is the network output order `[px, py, pz, C]`; the
/// result is voxel-major (x-fastest) with the class vector contiguous per
/// voxel. The running mean leaves identical overlapping values bit-intact.
pub fn reassemble(
    patches: &[((usize, usize, usize), Vec<f32>)],
    vol_shape: (usize, usize, usize),
    patch: (usize, usize, usize),
    num_classes: usize,
) -> Result<Vec<f32>> {
    let (nx, ny, nz) = vol_shape;
    let (px, py, pz) = patch;
    let mut probs = vec![0.0f32; nx * ny * nz * num_classes];
    let mut coverage = vec![0u32; nx * ny * nz];

    for (origin, data) in patches {
        if data.len() != px * py * pz * num_classes {
            return Err(Error::ShapeMismatch(format!(
                "patch at {origin:?} holds {} values, expected {}",
                data.len(),
                px * py * pz * num_classes
            )));
        }
        for x in 0..px {
            for y in 0..py {
                let vx = origin.0 + x;
                let vy = origin.1 + y;
                for z in 0..pz {
                    let vz = origin.2 + z;
                    let voxel = vx + nx * (vy + ny * vz);
                    let k = coverage[voxel] + 1;
                    coverage[voxel] = k;
                    let src = ((x * py + y) * pz + z) * num_classes;
                    let dst = voxel * num_classes;
                    for c in 0..num_classes {
                        let m = probs[dst + c];
                        probs[dst + c] = m + (data[src + c] - m) / k as f32;
                    }
                }
            }
        }
    }

    if let Some(i) = coverage.iter().position(|&c| c == 0) {
        let z = i / (nx * ny);
        let y = (i / nx) % ny;
        let x = i % nx;
        return Err(Error::CoverageGap { index: (x, y, z) });
    }
    Ok(probs)
}

/// Argmax over the class vector of a reassembled probability volume.
pub fn argmax_labels(
    probs: &[f32],
    vol_shape: (usize, usize, usize),
    num_classes: usize,
) -> LabelVolume {
    let n = vol_shape.0 * vol_shape.1 * vol_shape.2;
    let mut voxels = Vec::with_capacity(n);
    for v in 0..n {
        let mut best = 0u8;
        let mut bv = f32::NEG_INFINITY;
        for c in 0..num_classes {
            let p = probs[v * num_classes + c];
            if p > bv {
                bv = p;
                best = c as u8;
            }
        }
        voxels.push(best);
    }
    LabelVolume::new(vol_shape, voxels, num_classes as u8).expect("argmax yields valid classes")
}

/// One generated training batch in tensor layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub batch_size: usize,
    pub patch: (usize, usize, usize),
    pub num_classes: usize,
    /// `[b, px, py, pz, 1]`
    pub images: Vec<f32>,
    /// `[b, px, py, pz, C]`
    pub onehot: Vec<f32>,
}

/// Draw one batch: per slot, pick a sample uniformly with replacement,
/// augment it, then cut a random crop. Every draw comes from a stream derived
/// from `rng` and the slot index, so generation order cannot matter.
pub fn training_batch(
    samples: &[Sample],
    cfg: &PatchGridConfig,
    aug: &AugmentConfig,
    rng: &SeededRng,
) -> Result<TrainingBatch> {
    if samples.is_empty() {
        return Err(Error::Config("cannot draw a batch from an empty dataset".into()));
    }
    let (px, py, pz) = cfg.patch_shape;
    let num_classes = samples[0]
        .labels
        .as_ref()
        .ok_or_else(|| Error::Config(format!("sample {} has no labels for training", samples[0].id)))?
        .num_classes as usize;

    let mut images = Vec::with_capacity(cfg.batch_size * px * py * pz);
    let mut onehot = Vec::with_capacity(cfg.batch_size * px * py * pz * num_classes);
    for slot in 0..cfg.batch_size {
        let mut pick = rng.derive(&[slot as u64, 0]);
        let sample = &samples[pick.below(samples.len())];
        if sample.labels.is_none() {
            return Err(Error::Config(format!("sample {} has no labels for training", sample.id)));
        }
        let augmented = augment::apply_pipeline(sample, aug, &rng.derive(&[slot as u64, 1]));
        let (padded, _) = pad_to_min(&augmented, cfg.patch_shape);
        let mut crop_rng = rng.derive(&[slot as u64, 2]);
        let patch = random_crop(&padded, cfg.patch_shape, &mut crop_rng)?;
        images.extend_from_slice(&patch.image);
        onehot.extend_from_slice(patch.onehot.as_ref().expect("labeled sample produces one-hot"));
    }
    Ok(TrainingBatch {
        batch_size: cfg.batch_size,
        patch: cfg.patch_shape,
        num_classes,
        images,
        onehot,
    })
}

//! On-the-fly augmentation: spatial, color, and noise transforms applied
//! independently, each with a configurable trigger probability.
//!
//! Application order is fixed (mirror, rotation+scaling, elastic, brightness,
//! contrast, gamma, noise). Every method draws from its own derived random
//! stream, so the parameters one method sees never depend on whether another
//! method triggered.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp;
use crate::rng::SeededRng;
use crate::volume::{ImageVolume, LabelVolume, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub p_apply: f64,
    pub rotation_range: f64,
    pub scale_range: (f64, f64),
    pub elastic_alpha: f64,
    pub elastic_sigma: f64,
    pub brightness_range: f64,
    pub contrast_range: (f64, f64),
    pub gamma_range: (f64, f64),
    pub noise_sigma_range: (f64, f64),
    pub mirror_axis_p: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_apply: 0.15,
            rotation_range: 15.0,
            scale_range: (0.85, 1.25),
            elastic_alpha: 10.0,
            elastic_sigma: 5.0,
            brightness_range: 0.3,
            contrast_range: (0.65, 1.5),
            gamma_range: (0.7, 1.5),
            noise_sigma_range: (0.0, 0.1),
            mirror_axis_p: 0.5,
        }
    }
}

impl AugmentConfig {
    /// Configuration whose every draw is the identity transform; used to
    /// verify that the pipeline machinery itself adds nothing.
    pub fn identity() -> Self {
        AugmentConfig {
            p_apply: 1.0,
            rotation_range: 0.0,
            scale_range: (1.0, 1.0),
            elastic_alpha: 0.0,
            elastic_sigma: 5.0,
            brightness_range: 0.0,
            contrast_range: (1.0, 1.0),
            gamma_range: (1.0, 1.0),
            noise_sigma_range: (0.0, 0.0),
            mirror_axis_p: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")))
            }
        };
        prob("p_apply", self.p_apply)?;
        prob("mirror_axis_p", self.mirror_axis_p)?;
        if self.rotation_range < 0.0 {
            return Err(Error::Config("rotation_range must be non-negative".into()));
        }
        let contains = |name: &str, (lo, hi): (f64, f64), id: f64| {
            if lo <= id && id <= hi {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "{name} [{lo}, {hi}] must contain its identity value {id}"
                )))
            }
        };
        contains("scale_range", self.scale_range, 1.0)?;
        contains("contrast_range", self.contrast_range, 1.0)?;
        contains("gamma_range", self.gamma_range, 1.0)?;
        if self.brightness_range < 0.0 {
            return Err(Error::Config("brightness_range must be non-negative".into()));
        }
        let (nlo, nhi) = self.noise_sigma_range;
        if !(0.0 <= nlo && nlo <= nhi) {
            return Err(Error::Config(format!(
                "noise_sigma_range must satisfy 0 <= lo <= hi, got ({nlo}, {nhi})"
            )));
        }
        if self.elastic_alpha < 0.0 || self.elastic_sigma <= 0.0 {
            return Err(Error::Config(
                "elastic_alpha must be non-negative and elastic_sigma positive".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// spatial transforms
// ---------------------------------------------------------------------------

/// Reverse voxel order along each flagged axis, image and labels together.
pub fn mirror(sample: &Sample, axes: (bool, bool, bool)) -> Sample {
    if !(axes.0 || axes.1 || axes.2) {
        return sample.clone();
    }
    let (nx, ny, nz) = sample.image.shape;
    let map = |i: usize, n: usize, flip: bool| if flip { n - 1 - i } else { i };

    let mut voxels = Vec::with_capacity(sample.image.voxels.len());
    for z in 0..nz {
        let sz = map(z, nz, axes.2);
        for y in 0..ny {
            let sy = map(y, ny, axes.1);
            for x in 0..nx {
                voxels.push(sample.image.at(map(x, nx, axes.0), sy, sz));
            }
        }
    }
    let image = ImageVolume::new(sample.image.shape, sample.image.spacing, voxels, sample.image.intensity_kind)
        .expect("mirror permutes voxels");

    let labels = sample.labels.as_ref().map(|l| {
        let mut voxels = Vec::with_capacity(l.voxels.len());
        for z in 0..nz {
            let sz = map(z, nz, axes.2);
            for y in 0..ny {
                let sy = map(y, ny, axes.1);
                for x in 0..nx {
                    voxels.push(l.at(map(x, nx, axes.0), sy, sz));
                }
            }
        }
        LabelVolume::new(l.shape, voxels, l.num_classes).expect("mirror permutes labels")
    });

    Sample::new(sample.id.clone(), image, labels).expect("shapes unchanged")
}

/// Rotation matrix Rz(az)·Ry(ay)·Rx(ax) for angles in degrees. Positive
/// angles rotate x toward y (about z), z toward x (about y), y toward z
/// (about x).
fn rotation_matrix(angles_deg: (f64, f64, f64)) -> [[f64; 3]; 3] {
    let (ax, ay, az) = (
        angles_deg.0.to_radians(),
        angles_deg.1.to_radians(),
        angles_deg.2.to_radians(),
    );
    let (sx, cx) = ax.sin_cos();
    let (sy, cy) = ay.sin_cos();
    let (sz, cz) = az.sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    let mul = |a: [[f64; 3]; 3], b: [[f64; 3]; 3]| {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        m
    };
    mul(rz, mul(ry, rx))
}

/// Rotation about the volume center composed with isotropic scaling about the
/// center. A scale factor above 1 shrinks content in index space. Out-of-field
/// voxels take the image minimum; labels take background 0.
pub fn affine_spatial(sample: &Sample, angles_deg: (f64, f64, f64), scale: f64) -> Sample {
    let (nx, ny, nz) = sample.image.shape;
    let c = ((nx - 1) as f64 / 2.0, (ny - 1) as f64 / 2.0, (nz - 1) as f64 / 2.0);
    let r = rotation_matrix(angles_deg);
    // Output voxel o samples source c + s·R⁻¹·(o − c); R⁻¹ = Rᵀ.
    let rt = [
        [r[0][0], r[1][0], r[2][0]],
        [r[0][1], r[1][1], r[2][1]],
        [r[0][2], r[1][2], r[2][2]],
    ];
    let fill = sample
        .image
        .voxels
        .iter()
        .fold(f32::INFINITY, |m, &v| m.min(v));

    let src_of = |x: usize, y: usize, z: usize| -> (f64, f64, f64) {
        let v = (x as f64 - c.0, y as f64 - c.1, z as f64 - c.2);
        (
            c.0 + scale * (rt[0][0] * v.0 + rt[0][1] * v.1 + rt[0][2] * v.2),
            c.1 + scale * (rt[1][0] * v.0 + rt[1][1] * v.1 + rt[1][2] * v.2),
            c.2 + scale * (rt[2][0] * v.0 + rt[2][1] * v.1 + rt[2][2] * v.2),
        )
    };
    let in_field = |p: (f64, f64, f64)| {
        p.0 >= 0.0
            && p.0 <= (nx - 1) as f64
            && p.1 >= 0.0
            && p.1 <= (ny - 1) as f64
            && p.2 >= 0.0
            && p.2 <= (nz - 1) as f64
    };

    let mut voxels = Vec::with_capacity(sample.image.voxels.len());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = src_of(x, y, z);
                voxels.push(if in_field(p) {
                    interp::trilinear(sample.image.shape, &sample.image.voxels, p) as f32
                } else {
                    fill
                });
            }
        }
    }
    let image = ImageVolume::new(sample.image.shape, sample.image.spacing, voxels, sample.image.intensity_kind)
        .expect("affine resample preserves structure");

    let labels = sample.labels.as_ref().map(|l| {
        let mut voxels = Vec::with_capacity(l.voxels.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let p = src_of(x, y, z);
                    voxels.push(if in_field(p) { interp::nearest(l.shape, &l.voxels, p) } else { 0 });
                }
            }
        }
        LabelVolume::new(l.shape, voxels, l.num_classes).expect("affine resample preserves labels")
    });

    Sample::new(sample.id.clone(), image, labels).expect("shapes unchanged")
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut w: Vec<f64> = (-radius..=radius)
        .map(|j| (-(j as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Separable Gaussian smoothing along one axis; border taps renormalize over
/// the in-range kernel weights.
fn smooth_axis(shape: (usize, usize, usize), data: &[f64], axis: usize, kernel: &[f64]) -> Vec<f64> {
    let (nx, ny, nz) = shape;
    let n = [nx, ny, nz][axis];
    let radius = (kernel.len() / 2) as i64;
    let stride = match axis {
        0 => 1,
        1 => nx,
        _ => nx * ny,
    };
    let mut out = vec![0.0; data.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = [x, y, z][axis] as i64;
                let base = x + nx * (y + ny * z);
                let mut acc = 0.0;
                let mut wsum = 0.0;
                for (k, &w) in kernel.iter().enumerate() {
                    let j = i + k as i64 - radius;
                    if j < 0 || j >= n as i64 {
                        continue;
                    }
                    let off = (base as i64 + (j - i) * stride as i64) as usize;
                    acc += w * data[off];
                    wsum += w;
                }
                out[base] = acc / wsum;
            }
        }
    }
    out
}

/// Random smooth displacement field: per axis, i.i.d. standard normal noise
/// smoothed by a Gaussian of width `sigma`, scaled by `alpha` voxels.
pub fn elastic_deform(sample: &Sample, alpha: f64, sigma: f64, rng: &mut SeededRng) -> Sample {
    let shape = sample.image.shape;
    let n = sample.image.num_voxels();
    let kernel = gaussian_kernel(sigma);

    let mut fields = Vec::with_capacity(3);
    for _ in 0..3 {
        let raw: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
        let mut f = raw;
        for axis in 0..3 {
            f = smooth_axis(shape, &f, axis, &kernel);
        }
        for v in &mut f {
            *v *= alpha;
        }
        fields.push(f);
    }

    let (nx, ny, nz) = shape;
    let mut voxels = Vec::with_capacity(n);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = x + nx * (y + ny * z);
                let p = (
                    x as f64 + fields[0][i],
                    y as f64 + fields[1][i],
                    z as f64 + fields[2][i],
                );
                voxels.push(interp::trilinear(shape, &sample.image.voxels, p) as f32);
            }
        }
    }
    let image = ImageVolume::new(shape, sample.image.spacing, voxels, sample.image.intensity_kind)
        .expect("elastic resample preserves structure");

    let labels = sample.labels.as_ref().map(|l| {
        let mut voxels = Vec::with_capacity(n);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let i = x + nx * (y + ny * z);
                    let p = (
                        x as f64 + fields[0][i],
                        y as f64 + fields[1][i],
                        z as f64 + fields[2][i],
                    );
                    voxels.push(interp::nearest(l.shape, &l.voxels, p));
                }
            }
        }
        LabelVolume::new(l.shape, voxels, l.num_classes).expect("elastic resample preserves labels")
    });

    Sample::new(sample.id.clone(), image, labels).expect("shapes unchanged")
}

// ---------------------------------------------------------------------------
// color and noise transforms
// ---------------------------------------------------------------------------

pub fn brightness(vol: &ImageVolume, shift: f32) -> ImageVolume {
    let voxels = vol.voxels.iter().map(|&v| v + shift).collect();
    ImageVolume::new(vol.shape, vol.spacing, voxels, vol.intensity_kind)
        .expect("brightness shift of a finite volume stays finite")
}

/// Scale deviations from the volume mean: `mean + factor * (v - mean)`.
pub fn contrast(vol: &ImageVolume, factor: f32) -> ImageVolume {
    let mean = (vol.voxels.iter().map(|&v| v as f64).sum::<f64>() / vol.voxels.len() as f64) as f32;
    let voxels = vol.voxels.iter().map(|&v| mean + factor * (v - mean)).collect();
    ImageVolume::new(vol.shape, vol.spacing, voxels, vol.intensity_kind)
        .expect("contrast of a finite volume stays finite")
}

/// Gamma curve on the min-max normalized volume, rescaled to the original
/// range. A constant volume has no range to normalize and passes through
/// unchanged.
pub fn gamma(vol: &ImageVolume, g: f64) -> ImageVolume {
    let min = vol.voxels.iter().fold(f32::INFINITY, |m, &v| m.min(v)) as f64;
    let max = vol.voxels.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    if min == max {
        return vol.clone();
    }
    let range = max - min;
    let voxels = vol
        .voxels
        .iter()
        .map(|&v| (min + ((v as f64 - min) / range).powf(g) * range) as f32)
        .collect();
    ImageVolume::new(vol.shape, vol.spacing, voxels, vol.intensity_kind)
        .expect("gamma keeps values inside the original range")
}

pub fn gaussian_noise(vol: &ImageVolume, sigma: f64, rng: &mut SeededRng) -> ImageVolume {
    if sigma == 0.0 {
        return vol.clone();
    }
    let voxels = vol
        .voxels
        .iter()
        .map(|&v| (v as f64 + sigma * rng.standard_normal()) as f32)
        .collect();
    ImageVolume::new(vol.shape, vol.spacing, voxels, vol.intensity_kind)
        .expect("additive Gaussian noise stays finite")
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

fn population_std(vol: &ImageVolume) -> f64 {
    let n = vol.voxels.len() as f64;
    let mean = vol.voxels.iter().map(|&v| v as f64).sum::<f64>() / n;
    (vol.voxels.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Apply the seven augmentation methods in fixed order, each triggered
/// independently with probability `cfg.p_apply`. Intended for standardized
/// (z-scored) samples; noise magnitudes are calibrated to that scale.
pub fn apply_pipeline(sample: &Sample, cfg: &AugmentConfig, rng: &SeededRng) -> Sample {
    let mut triggers = rng.derive(&[0]);
    let fire: Vec<bool> = (0..7).map(|_| triggers.chance(cfg.p_apply)).collect();

    let mut out = sample.clone();
    if fire[0] {
        let mut r = rng.derive(&[1]);
        let axes = (
            r.chance(cfg.mirror_axis_p),
            r.chance(cfg.mirror_axis_p),
            r.chance(cfg.mirror_axis_p),
        );
        out = mirror(&out, axes);
    }
    if fire[1] {
        let mut r = rng.derive(&[2]);
        let a = cfg.rotation_range;
        let angles = (r.uniform(-a, a), r.uniform(-a, a), r.uniform(-a, a));
        let scale = r.uniform(cfg.scale_range.0, cfg.scale_range.1);
        out = affine_spatial(&out, angles, scale);
    }
    if fire[2] {
        let mut r = rng.derive(&[3]);
        out = elastic_deform(&out, cfg.elastic_alpha, cfg.elastic_sigma, &mut r);
    }
    if fire[3] {
        let mut r = rng.derive(&[4]);
        let frac = r.uniform(-cfg.brightness_range, cfg.brightness_range);
        let shift = (frac * population_std(&out.image)) as f32;
        out.image = brightness(&out.image, shift);
    }
    if fire[4] {
        let mut r = rng.derive(&[5]);
        let factor = r.uniform(cfg.contrast_range.0, cfg.contrast_range.1) as f32;
        out.image = contrast(&out.image, factor);
    }
    if fire[5] {
        let mut r = rng.derive(&[6]);
        let g = r.uniform(cfg.gamma_range.0, cfg.gamma_range.1);
        out.image = gamma(&out.image, g);
    }
    if fire[6] {
        let mut r = rng.derive(&[7]);
        let sigma = r.uniform(cfg.noise_sigma_range.0, cfg.noise_sigma_range.1);
        out.image = gaussian_noise(&out.image, sigma, &mut r);
    }
    out
}

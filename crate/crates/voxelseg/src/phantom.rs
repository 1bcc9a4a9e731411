//! Synthetic chest phantoms with analytically known geometry: two lung
//! ellipsoids in a soft-tissue background, spherical infection blobs
//! strictly inside the lungs, Gaussian texture noise on top. Labels come
//! from the same geometry, so they are exact by construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::volume::{class, ImageVolume, IntensityKind, LabelVolume, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub shape: (usize, usize, usize),
    pub spacing: (f32, f32, f32),
    /// Attenuation bands, HU-like.
    pub lung_intensity: f32,
    pub tissue_intensity: f32,
    pub infection_intensity: f32,
    pub noise_std: f32,
    pub max_blobs_per_lung: usize,
    /// Infection sphere radius range in voxels.
    pub blob_radius: (f64, f64),
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            shape: (64, 64, 32),
            spacing: (1.58, 1.58, 2.70),
            lung_intensity: -900.0,
            tissue_intensity: 40.0,
            infection_intensity: 75.0,
            noise_std: 12.0,
            max_blobs_per_lung: 4,
            blob_radius: (4.1, 4.8),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    pub center: (f64, f64, f64),
    pub radii: (f64, f64, f64),
}

impl Ellipsoid {
    /// Normalized radial coordinate; inside means <= 1.
    pub fn rho(&self, p: (f64, f64, f64)) -> f64 {
        let dx = (p.0 - self.center.0) / self.radii.0;
        let dy = (p.1 - self.center.1) / self.radii.1;
        let dz = (p.2 - self.center.2) / self.radii.2;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    fn min_radius(&self) -> f64 {
        self.radii.0.min(self.radii.1).min(self.radii.2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub center: (f64, f64, f64),
    pub radius: f64,
    /// Index into the lungs array of the geometry.
    pub lung: usize,
}

impl Blob {
    fn contains(&self, p: (f64, f64, f64)) -> bool {
        let dx = p.0 - self.center.0;
        let dy = p.1 - self.center.1;
        let dz = p.2 - self.center.2;
        dx * dx + dy * dy + dz * dz <= self.radius * self.radius
    }
}

/// Generating geometry; lungs[0] is the lower-x (left) lung.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomGeometry {
    pub lungs: [Ellipsoid; 2],
    pub blobs: Vec<Blob>,
}

fn draw_lung(spec: &PhantomSpec, center_frac_x: f64, rng: &mut SeededRng) -> Ellipsoid {
    let (nx, ny, nz) = spec.shape;
    let (nx, ny, nz) = (nx as f64, ny as f64, nz as f64);
    Ellipsoid {
        center: (
            center_frac_x * nx + rng.uniform(-1.0, 1.0),
            0.5 * ny + rng.uniform(-1.0, 1.0),
            0.5 * nz + rng.uniform(-1.0, 1.0),
        ),
        radii: (
            nx * rng.uniform(0.14, 0.17),
            ny * rng.uniform(0.19, 0.23),
            nz * rng.uniform(0.25, 0.31),
        ),
    }
}

fn draw_blob(
    lung_idx: usize,
    lung: &Ellipsoid,
    spec: &PhantomSpec,
    rng: &mut SeededRng,
) -> Result<Blob> {
    let radius = rng.uniform(spec.blob_radius.0, spec.blob_radius.1);
    // Keep the whole sphere inside: moving r voxels shifts rho by at most
    // r / min_radius.
    let margin = 1.0 - radius / lung.min_radius();
    if margin <= 0.0 {
        return Err(Error::Config(format!(
            "blob radius {radius:.2} does not fit a lung with minimum semi-axis {:.2}",
            lung.min_radius()
        )));
    }
    for _ in 0..100_000 {
        let p = (
            lung.center.0 + rng.uniform(-lung.radii.0, lung.radii.0),
            lung.center.1 + rng.uniform(-lung.radii.1, lung.radii.1),
            lung.center.2 + rng.uniform(-lung.radii.2, lung.radii.2),
        );
        if lung.rho(p) <= margin {
            return Ok(Blob {
                center: p,
                radius,
                lung: lung_idx,
            });
        }
    }
    unreachable!("nonempty acceptance region");
}

pub fn draw_geometry(spec: &PhantomSpec, rng: &mut SeededRng) -> Result<PhantomGeometry> {
    let a = draw_lung(spec, 0.30, rng);
    let b = draw_lung(spec, 0.70, rng);
    let lungs = if a.center.0 <= b.center.0 { [a, b] } else { [b, a] };

    // At least one blob overall; redraw the pair of counts until so.
    let (n0, n1) = loop {
        let n0 = rng.below(spec.max_blobs_per_lung + 1);
        let n1 = rng.below(spec.max_blobs_per_lung + 1);
        if n0 + n1 > 0 {
            break (n0, n1);
        }
    };
    let mut blobs = Vec::with_capacity(n0 + n1);
    for (idx, count) in [(0, n0), (1, n1)] {
        for _ in 0..count {
            blobs.push(draw_blob(idx, &lungs[idx], spec, rng)?);
        }
    }
    Ok(PhantomGeometry { lungs, blobs })
}

/// Rasterize geometry into an image with banded intensities plus Gaussian
/// noise, and exact labels.
pub fn rasterize(
    spec: &PhantomSpec,
    geometry: &PhantomGeometry,
    id: &str,
    rng: &mut SeededRng,
) -> Result<Sample> {
    let (nx, ny, nz) = spec.shape;
    let n = nx * ny * nz;
    let mut voxels = vec![0.0f32; n];
    let mut labels = vec![class::BACKGROUND; n];
    let mut at = 0;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = (x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5);
                let (label, base) = if geometry.blobs.iter().any(|b| b.contains(p)) {
                    (class::INFECTION, spec.infection_intensity)
                } else if geometry.lungs[0].rho(p) <= 1.0 {
                    (class::LUNG_LEFT, spec.lung_intensity)
                } else if geometry.lungs[1].rho(p) <= 1.0 {
                    (class::LUNG_RIGHT, spec.lung_intensity)
                } else {
                    (class::BACKGROUND, spec.tissue_intensity)
                };
                labels[at] = label;
                voxels[at] = base;
                at += 1;
            }
        }
    }
    for v in voxels.iter_mut() {
        *v += spec.noise_std * rng.standard_normal() as f32;
    }
    Ok(Sample {
        id: id.to_string(),
        image: ImageVolume::new(spec.shape, spec.spacing, voxels, IntensityKind::HounsfieldLike)?,
        labels: Some(LabelVolume::new(spec.shape, labels, class::COUNT)?),
    })
}

pub fn generate(spec: &PhantomSpec, id: &str, rng: &mut SeededRng) -> Result<Sample> {
    let geometry = draw_geometry(spec, rng)?;
    rasterize(spec, &geometry, id, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fractions(sample: &Sample) -> (f64, f64, f64) {
        let labels = sample.labels.as_ref().unwrap();
        let n = labels.voxels.len() as f64;
        let count = |c: u8| labels.voxels.iter().filter(|&&v| v == c).count() as f64;
        (
            count(class::BACKGROUND) / n,
            (count(class::LUNG_LEFT) + count(class::LUNG_RIGHT)) / n,
            count(class::INFECTION) / n,
        )
    }

    #[test]
    fn class_fractions_sit_in_their_bands() {
        let spec = PhantomSpec::default();
        for seed in 0..6 {
            let mut rng = SeededRng::from_seed(seed);
            let sample = generate(&spec, "p", &mut rng).unwrap();
            let (bg, lungs, infection) = fractions(&sample);
            assert!((0.05..=0.15).contains(&lungs), "seed {seed}: lungs {lungs}");
            assert!(
                (0.002..=0.03).contains(&infection),
                "seed {seed}: infection {infection}"
            );
            assert!(bg > lungs && lungs > infection, "seed {seed}");
        }
    }

    #[test]
    fn same_seed_makes_byte_identical_phantoms() {
        let spec = PhantomSpec::default();
        let a = generate(&spec, "p", &mut SeededRng::from_seed(3)).unwrap();
        let b = generate(&spec, "p", &mut SeededRng::from_seed(3)).unwrap();
        let bits = |s: &Sample| -> Vec<u32> { s.image.voxels.iter().map(|v| v.to_bits()).collect() };
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn infection_lies_strictly_inside_the_lungs() {
        let spec = PhantomSpec::default();
        for seed in 0..4 {
            let mut rng = SeededRng::from_seed(100 + seed);
            let geometry = draw_geometry(&spec, &mut rng).unwrap();
            assert!(!geometry.blobs.is_empty());
            for blob in &geometry.blobs {
                let lung = &geometry.lungs[blob.lung];
                assert!(lung.rho(blob.center) + blob.radius / lung.radii.0.min(lung.radii.1).min(lung.radii.2) <= 1.0);
            }
            let sample = rasterize(&spec, &geometry, "p", &mut rng).unwrap();
            let labels = sample.labels.as_ref().unwrap();
            let (nx, ny, _) = spec.shape;
            for (i, &v) in labels.voxels.iter().enumerate() {
                if v == class::INFECTION {
                    let (x, y, z) = (i % nx, (i / nx) % ny, i / (nx * ny));
                    let p = (x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5);
                    assert!(
                        geometry.lungs.iter().any(|l| l.rho(p) <= 1.0),
                        "infection voxel outside both lungs at {p:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn left_lung_sits_at_lower_x_than_right() {
        let spec = PhantomSpec::default();
        let sample = generate(&spec, "p", &mut SeededRng::from_seed(9)).unwrap();
        let labels = sample.labels.as_ref().unwrap();
        let (nx, ny, _) = spec.shape;
        let xs = |c: u8| -> Vec<usize> {
            labels
                .voxels
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == c)
                .map(|(i, _)| i % nx)
                .collect()
        };
        let left = xs(class::LUNG_LEFT);
        let right = xs(class::LUNG_RIGHT);
        assert!(!left.is_empty() && !right.is_empty());
        assert!(left.iter().max() < right.iter().min());
        let _ = ny;
    }

    #[test]
    fn intensity_bands_carry_the_configured_noise() {
        let spec = PhantomSpec::default();
        let sample = generate(&spec, "p", &mut SeededRng::from_seed(5)).unwrap();
        let labels = sample.labels.as_ref().unwrap();
        assert_eq!(sample.image.intensity_kind, IntensityKind::HounsfieldLike);
        assert_eq!(sample.image.spacing, spec.spacing);

        for (cls, band) in [
            (class::LUNG_LEFT, spec.lung_intensity),
            (class::BACKGROUND, spec.tissue_intensity),
            (class::INFECTION, spec.infection_intensity),
        ] {
            let values: Vec<f64> = sample
                .image
                .voxels
                .iter()
                .zip(&labels.voxels)
                .filter(|(_, &l)| l == cls)
                .map(|(&v, _)| v as f64)
                .collect();
            assert!(values.len() > 100, "class {cls} underpopulated");
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
            assert!((mean - band as f64).abs() < 3.0, "class {cls}: mean {mean}");
            let std = var.sqrt();
            assert!((std - spec.noise_std as f64).abs() < 3.0, "class {cls}: std {std}");
        }
    }
}

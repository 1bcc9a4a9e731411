//! Core volume data model shared by every pipeline stage.
//!
//! Voxels are stored densely in x-fastest order: the flat index of `(x, y, z)`
//! is `x + nx * (y + ny * z)`. All stages assume this layout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interpretation of the scalar values in an [`ImageVolume`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityKind {
    /// Raw CT attenuation values, roughly -1024 to +3000.
    HounsfieldLike,
    /// Already mapped onto the 0..=255 grayscale range.
    Grayscale0to255,
    /// Standardized to zero mean and unit variance.
    ZScored,
}

impl IntensityKind {
    pub fn name(self) -> &'static str {
        match self {
            IntensityKind::HounsfieldLike => "hounsfield_like",
            IntensityKind::Grayscale0to255 => "grayscale_0_255",
            IntensityKind::ZScored => "z_scored",
        }
    }
}

/// Dense 3-d scalar grid with voxel spacing in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageVolume {
    pub shape: (usize, usize, usize),
    pub spacing: (f32, f32, f32),
    pub voxels: Vec<f32>,
    pub intensity_kind: IntensityKind,
}

impl ImageVolume {
    pub fn new(
        shape: (usize, usize, usize),
        spacing: (f32, f32, f32),
        voxels: Vec<f32>,
        intensity_kind: IntensityKind,
    ) -> Result<Self> {
        if shape.0 == 0 || shape.1 == 0 || shape.2 == 0 {
            return Err(Error::InvalidVolume(format!(
                "shape components must be at least 1, got {shape:?}"
            )));
        }
        if !(spacing.0 > 0.0 && spacing.1 > 0.0 && spacing.2 > 0.0) {
            return Err(Error::InvalidVolume(format!(
                "spacing components must be positive, got {spacing:?}"
            )));
        }
        let expected = shape.0 * shape.1 * shape.2;
        if voxels.len() != expected {
            return Err(Error::InvalidVolume(format!(
                "voxel count {} does not match shape {shape:?} ({expected})",
                voxels.len()
            )));
        }
        if let Some(bad) = voxels.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume(format!("non-finite voxel value {bad}")));
        }
        Ok(ImageVolume {
            shape,
            spacing,
            voxels,
            intensity_kind,
        })
    }

    pub fn num_voxels(&self) -> usize {
        self.shape.0 * self.shape.1 * self.shape.2
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.shape.0 * (y + self.shape.1 * z)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[self.index(x, y, z)]
    }
}

/// Dense 3-d class-index grid aligned to an [`ImageVolume`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    pub shape: (usize, usize, usize),
    pub voxels: Vec<u8>,
    pub num_classes: u8,
}

/// Class indices fixed across the pipeline.
pub mod class {
    pub const BACKGROUND: u8 = 0;
    pub const LUNG_LEFT: u8 = 1;
    pub const LUNG_RIGHT: u8 = 2;
    pub const INFECTION: u8 = 3;
    pub const COUNT: u8 = 4;
}

impl LabelVolume {
    pub fn new(shape: (usize, usize, usize), voxels: Vec<u8>, num_classes: u8) -> Result<Self> {
        if shape.0 == 0 || shape.1 == 0 || shape.2 == 0 {
            return Err(Error::InvalidVolume(format!(
                "shape components must be at least 1, got {shape:?}"
            )));
        }
        let expected = shape.0 * shape.1 * shape.2;
        if voxels.len() != expected {
            return Err(Error::InvalidVolume(format!(
                "voxel count {} does not match shape {shape:?} ({expected})",
                voxels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::InvalidVolume("num_classes must be positive".into()));
        }
        if let Some(&bad) = voxels.iter().find(|&&v| v >= num_classes) {
            return Err(Error::InvalidLabel {
                value: bad as f32,
                num_classes,
            });
        }
        Ok(LabelVolume {
            shape,
            voxels,
            num_classes,
        })
    }

    /// Reinterpret a scalar field as class indices.
    ///
    /// Accepts only whole values in `0..num_classes`; label maps stored as
    /// float or int16 scalar files pass through here after loading.
    pub fn from_scalar_field(image: &ImageVolume, num_classes: u8) -> Result<Self> {
        let mut voxels = Vec::with_capacity(image.voxels.len());
        for &v in &image.voxels {
            if v.fract() != 0.0 || v < 0.0 || v >= num_classes as f32 {
                return Err(Error::InvalidLabel {
                    value: v,
                    num_classes,
                });
            }
            voxels.push(v as u8);
        }
        LabelVolume::new(image.shape, voxels, num_classes)
    }

    pub fn num_voxels(&self) -> usize {
        self.shape.0 * self.shape.1 * self.shape.2
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.shape.0 * (y + self.shape.1 * z)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> u8 {
        self.voxels[self.index(x, y, z)]
    }
}

/// One case: an image, its optional reference labels, and an identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: ImageVolume,
    pub labels: Option<LabelVolume>,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: ImageVolume, labels: Option<LabelVolume>) -> Result<Self> {
        if let Some(ref l) = labels {
            if l.shape != image.shape {
                return Err(Error::ShapeMismatch(format!(
                    "label shape {:?} does not match image shape {:?}",
                    l.shape, image.shape
                )));
            }
        }
        Ok(Sample {
            id: id.into(),
            image,
            labels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(shape: (usize, usize, usize), fill: f32) -> Vec<f32> {
        vec![fill; shape.0 * shape.1 * shape.2]
    }

    #[test]
    fn image_volume_validates_shape_and_length() {
        assert!(ImageVolume::new((2, 2, 2), (1.0, 1.0, 1.0), flat((2, 2, 2), 0.0), IntensityKind::HounsfieldLike).is_ok());
        assert!(ImageVolume::new((0, 2, 2), (1.0, 1.0, 1.0), vec![], IntensityKind::HounsfieldLike).is_err());
        assert!(ImageVolume::new((2, 2, 2), (1.0, 1.0, 1.0), vec![0.0; 7], IntensityKind::HounsfieldLike).is_err());
        assert!(ImageVolume::new((2, 2, 2), (1.0, 0.0, 1.0), flat((2, 2, 2), 0.0), IntensityKind::HounsfieldLike).is_err());
        assert!(ImageVolume::new((2, 2, 2), (1.0, 1.0, 1.0), vec![f32::NAN; 8], IntensityKind::HounsfieldLike).is_err());
    }

    #[test]
    fn index_is_x_fastest() {
        let mut voxels = flat((3, 4, 5), 0.0);
        let v = ImageVolume::new((3, 4, 5), (1.0, 1.0, 1.0), voxels.clone(), IntensityKind::ZScored).unwrap();
        assert_eq!(v.index(1, 0, 0), 1);
        assert_eq!(v.index(0, 1, 0), 3);
        assert_eq!(v.index(0, 0, 1), 12);
        assert_eq!(v.index(2, 3, 4), 2 + 3 * 3 + 4 * 12);
        voxels[v.index(2, 1, 3)] = 9.0;
        let v = ImageVolume::new((3, 4, 5), (1.0, 1.0, 1.0), voxels, IntensityKind::ZScored).unwrap();
        assert_eq!(v.at(2, 1, 3), 9.0);
    }

    #[test]
    fn label_volume_rejects_out_of_range_classes() {
        assert!(LabelVolume::new((2, 1, 1), vec![0, 3], 4).is_ok());
        let err = LabelVolume::new((2, 1, 1), vec![0, 4], 4).unwrap_err();
        assert!(matches!(err, Error::InvalidLabel { .. }));
    }

    #[test]
    fn labels_from_scalar_field_require_whole_values() {
        let img = |vals: Vec<f32>| {
            ImageVolume::new((2, 1, 1), (1.0, 1.0, 1.0), vals, IntensityKind::HounsfieldLike).unwrap()
        };
        assert!(LabelVolume::from_scalar_field(&img(vec![0.0, 3.0]), 4).is_ok());
        assert!(LabelVolume::from_scalar_field(&img(vec![0.5, 1.0]), 4).is_err());
        assert!(LabelVolume::from_scalar_field(&img(vec![-1.0, 1.0]), 4).is_err());
        assert!(LabelVolume::from_scalar_field(&img(vec![4.0, 1.0]), 4).is_err());
    }

    #[test]
    fn sample_requires_matching_shapes() {
        let image = ImageVolume::new((2, 2, 1), (1.0, 1.0, 1.0), flat((2, 2, 1), 0.0), IntensityKind::ZScored).unwrap();
        let labels = LabelVolume::new((2, 1, 1), vec![0, 0], 4).unwrap();
        assert!(Sample::new("s", image, Some(labels)).is_err());
    }
}

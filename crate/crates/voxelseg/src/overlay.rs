//! Slice renderings: grayscale anatomy with class colors alpha-blended on
//! top, written as 8-bit RGB PNG. Lungs draw blue, infection red.

use std::path::Path;

use image::{ImageError, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::volume::{class, ImageVolume, LabelVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceAxis {
    X,
    Y,
    Z,
}

impl SliceAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(SliceAxis::X),
            "y" | "Y" => Ok(SliceAxis::Y),
            "z" | "Z" => Ok(SliceAxis::Z),
            other => Err(Error::Config(format!("unknown slice axis {other:?}"))),
        }
    }

    pub fn letter(self) -> char {
        match self {
            SliceAxis::X => 'x',
            SliceAxis::Y => 'y',
            SliceAxis::Z => 'z',
        }
    }

    fn extent(self, shape: (usize, usize, usize)) -> usize {
        match self {
            SliceAxis::X => shape.0,
            SliceAxis::Y => shape.1,
            SliceAxis::Z => shape.2,
        }
    }

    /// Plane dimensions (width, height) of one slice.
    fn plane(self, shape: (usize, usize, usize)) -> (usize, usize) {
        match self {
            SliceAxis::X => (shape.1, shape.2),
            SliceAxis::Y => (shape.0, shape.2),
            SliceAxis::Z => (shape.0, shape.1),
        }
    }

    fn voxel(self, i: usize, j: usize, index: usize) -> (usize, usize, usize) {
        match self {
            SliceAxis::X => (index, i, j),
            SliceAxis::Y => (i, index, j),
            SliceAxis::Z => (i, j, index),
        }
    }
}

const OVERLAY_ALPHA: f32 = 0.4;

fn class_color(label: u8) -> Option<[f32; 3]> {
    match label {
        class::LUNG_LEFT | class::LUNG_RIGHT => Some([0.0, 0.0, 255.0]),
        class::INFECTION => Some([255.0, 0.0, 0.0]),
        _ => None,
    }
}

/// Render one slice to `path`. The grayscale window is the slice's own
/// min-max range; labeled voxels are blended `0.6 * gray + 0.4 * color`.
pub fn render_overlay(
    image: &ImageVolume,
    labels: &LabelVolume,
    axis: SliceAxis,
    index: usize,
    path: &Path,
) -> Result<()> {
    if image.shape != labels.shape {
        return Err(Error::ShapeMismatch(format!(
            "image shape {:?} vs labels {:?}",
            image.shape, labels.shape
        )));
    }
    let extent = axis.extent(image.shape);
    if index >= extent {
        return Err(Error::IndexOutOfRange {
            what: format!("{} slice", axis.letter()),
            index,
            extent,
        });
    }

    let (w, h) = axis.plane(image.shape);
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for j in 0..h {
        for i in 0..w {
            let (x, y, z) = axis.voxel(i, j, index);
            let v = image.at(x, y, z);
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let span = if hi > lo { hi - lo } else { 1.0 };

    let mut png = RgbImage::new(w as u32, h as u32);
    for j in 0..h {
        for i in 0..w {
            let (x, y, z) = axis.voxel(i, j, index);
            let gray = 255.0 * (image.at(x, y, z) - lo) / span;
            let label = labels.voxels[image.index(x, y, z)];
            let rgb = match class_color(label) {
                Some(color) => {
                    let mix = |c: f32| (1.0 - OVERLAY_ALPHA) * gray + OVERLAY_ALPHA * c;
                    [mix(color[0]), mix(color[1]), mix(color[2])]
                }
                None => [gray, gray, gray],
            };
            png.put_pixel(
                i as u32,
                j as u32,
                Rgb(rgb.map(|c| c.round().clamp(0.0, 255.0) as u8)),
            );
        }
    }
    png.save(path).map_err(|e| match e {
        ImageError::IoError(io) => Error::io(path, io),
        other => Error::Config(format!("png encode {}: {other}", path.display())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::IntensityKind;

    fn gradient_image() -> ImageVolume {
        let shape = (6, 5, 4);
        let vox = (0..120).map(|i| i as f32).collect();
        ImageVolume::new(shape, (1.0, 1.0, 1.0), vox, IntensityKind::Grayscale0to255).unwrap()
    }

    fn blank_labels() -> LabelVolume {
        LabelVolume::new((6, 5, 4), vec![0; 120], 4).unwrap()
    }

    #[test]
    fn background_only_renders_pure_grayscale() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plain_z0.png");
        render_overlay(&gradient_image(), &blank_labels(), SliceAxis::Z, 0, &path).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!((img.width(), img.height()), (6, 5));
        for p in img.pixels() {
            assert_eq!(p[0], p[1]);
            assert_eq!(p[1], p[2]);
        }
    }

    #[test]
    fn infection_voxel_blends_toward_red() {
        let image = gradient_image();
        let mut labels = blank_labels();
        let idx = image.index(2, 3, 1);
        labels.voxels[idx] = class::INFECTION;

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sample_z1.png");
        render_overlay(&image, &labels, SliceAxis::Z, 1, &path).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        let p = img.get_pixel(2, 3);

        // Slice 1 covers values 30..=59; voxel (2,3) holds 50, 20 above the
        // window floor. One rounding happens after the blend.
        let gray = 255.0f32 * 20.0 / 29.0;
        let want_r = (0.6 * gray + 0.4 * 255.0).round() as u8;
        let want_gb = (0.6 * gray).round() as u8;
        assert_eq!(p[0], want_r);
        assert_eq!(p[1], want_gb);
        assert_eq!(p[2], want_gb);
        assert!(p[0] > p[1]);
    }

    #[test]
    fn lungs_blend_toward_blue_on_every_axis() {
        let image = gradient_image();
        let mut labels = blank_labels();
        for v in labels.voxels.iter_mut() {
            *v = class::LUNG_RIGHT;
        }
        let dir = tempfile::tempdir().unwrap();
        for (axis, w, h) in [
            (SliceAxis::X, 5u32, 4u32),
            (SliceAxis::Y, 6, 4),
            (SliceAxis::Z, 6, 5),
        ] {
            let path = dir.path().join(format!("s_{}0.png", axis.letter()));
            render_overlay(&image, &labels, axis, 0, &path).unwrap();
            let img = image::open(&path).unwrap().to_rgb8();
            assert_eq!((img.width(), img.height()), (w, h));
            for p in img.pixels() {
                assert!(p[2] >= p[0]);
                assert!(p[2] > 0);
            }
        }
    }

    #[test]
    fn out_of_range_slice_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("never.png");
        let err =
            render_overlay(&gradient_image(), &blank_labels(), SliceAxis::Z, 4, &path).unwrap_err();
        assert!(matches!(
            err,
            Error::IndexOutOfRange {
                index: 4,
                extent: 4,
                ..
            }
        ));
        assert!(!path.exists());
    }
}

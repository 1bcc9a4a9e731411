//! Uncompressed single-file NIfTI-1 reader and writer.
//!
//! Supports 3-d volumes with datatype int16 or float32, little-endian only.
//! The orientation affine is ignored; volumes are used in stored index order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{ImageVolume, IntensityKind};

const HEADER_LEN: usize = 348;
/// Standard single-file data offset: header plus a 4-byte extension flag.
const DATA_OFFSET: usize = 352;

const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

fn le_i32(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn le_i16(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes(b[off..off + 2].try_into().unwrap())
}

fn le_f32(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

/// Load a 3-d volume. Intensities are tagged [`IntensityKind::HounsfieldLike`];
/// callers that know better (grayscale exports, label maps) retag after loading.
pub fn read_nifti(path: impl AsRef<Path>) -> Result<ImageVolume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::corrupt_header(path, "file shorter than the 348-byte header"));
    }

    let sizeof_hdr = le_i32(&bytes, 0);
    if sizeof_hdr != 348 {
        return Err(Error::corrupt_header(path, format!("sizeof_hdr {sizeof_hdr}, expected 348")));
    }
    let magic = &bytes[344..348];
    if magic != b"n+1\0" && magic != b"ni1\0" {
        return Err(Error::corrupt_header(path, "unrecognized magic"));
    }

    let ndim = le_i16(&bytes, 40);
    if ndim != 3 {
        return Err(Error::Dimensionality {
            path: path.into(),
            ndim,
        });
    }
    let mut dims = [0usize; 3];
    for (axis, d) in dims.iter_mut().enumerate() {
        let v = le_i16(&bytes, 40 + 2 * (axis + 1));
        if v < 1 {
            return Err(Error::corrupt_header(path, format!("non-positive dim[{}] = {v}", axis + 1)));
        }
        *d = v as usize;
    }

    let datatype = le_i16(&bytes, 70);
    let bitpix = le_i16(&bytes, 72);
    let bytes_per_voxel = match datatype {
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        code => {
            return Err(Error::UnsupportedDatatype {
                path: path.into(),
                code,
            })
        }
    };
    if bitpix as usize != bytes_per_voxel * 8 {
        return Err(Error::corrupt_header(
            path,
            format!("bitpix {bitpix} inconsistent with datatype {datatype}"),
        ));
    }

    let mut spacing = [0f32; 3];
    for (axis, s) in spacing.iter_mut().enumerate() {
        let v = le_f32(&bytes, 76 + 4 * (axis + 1));
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::corrupt_header(path, format!("non-positive pixdim[{}] = {v}", axis + 1)));
        }
        *s = v;
    }

    // Header-pair exports carry vox_offset 0; their payload, when present in
    // the same file, starts right after the extension flag.
    let vox_offset = le_f32(&bytes, 108);
    let offset = if vox_offset < HEADER_LEN as f32 {
        DATA_OFFSET
    } else {
        vox_offset as usize
    };
    let scl_slope = le_f32(&bytes, 112);
    let scl_inter = le_f32(&bytes, 116);

    let count = dims[0] * dims[1] * dims[2];
    let need = count * bytes_per_voxel;
    if bytes.len() < offset + need {
        return Err(Error::corrupt_header(
            path,
            format!("payload holds fewer than {count} voxels"),
        ));
    }
    let data = &bytes[offset..offset + need];

    let mut voxels = Vec::with_capacity(count);
    match datatype {
        DT_INT16 => {
            for chunk in data.chunks_exact(2) {
                voxels.push(i16::from_le_bytes(chunk.try_into().unwrap()) as f32);
            }
        }
        DT_FLOAT32 => {
            for chunk in data.chunks_exact(4) {
                voxels.push(f32::from_le_bytes(chunk.try_into().unwrap()));
            }
        }
        _ => unreachable!(),
    }
    if scl_slope != 0.0 && !(scl_slope == 1.0 && scl_inter == 0.0) {
        for v in &mut voxels {
            *v = *v * scl_slope + scl_inter;
        }
    }

    ImageVolume::new(
        (dims[0], dims[1], dims[2]),
        (spacing[0], spacing[1], spacing[2]),
        voxels,
        IntensityKind::HounsfieldLike,
    )
}

/// Store a volume as float32 with no scaling, so a follow-up read is bit-exact.
pub fn write_nifti(volume: &ImageVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = vec![0u8; DATA_OFFSET + 4 * volume.voxels.len()];

    out[0..4].copy_from_slice(&348i32.to_le_bytes());
    let dims: [i16; 4] = [3, volume.shape.0 as i16, volume.shape.1 as i16, volume.shape.2 as i16];
    for (i, d) in dims.iter().enumerate() {
        out[40 + 2 * i..40 + 2 * i + 2].copy_from_slice(&d.to_le_bytes());
    }
    for i in 4..8 {
        out[40 + 2 * i..40 + 2 * i + 2].copy_from_slice(&1i16.to_le_bytes());
    }
    out[70..72].copy_from_slice(&DT_FLOAT32.to_le_bytes());
    out[72..74].copy_from_slice(&32i16.to_le_bytes());
    let pixdim: [f32; 4] = [1.0, volume.spacing.0, volume.spacing.1, volume.spacing.2];
    for (i, s) in pixdim.iter().enumerate() {
        out[76 + 4 * i..76 + 4 * i + 4].copy_from_slice(&s.to_le_bytes());
    }
    out[108..112].copy_from_slice(&(DATA_OFFSET as f32).to_le_bytes());
    // scl_slope 0 means "no scaling"; writing 1 would force a redundant
    // multiply-add on read that is not bit-transparent for negative zero.
    out[112..116].copy_from_slice(&0f32.to_le_bytes());
    out[116..120].copy_from_slice(&0f32.to_le_bytes());
    out[344..348].copy_from_slice(b"n+1\0");

    for (i, v) in volume.voxels.iter().enumerate() {
        let off = DATA_OFFSET + 4 * i;
        out[off..off + 4].copy_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

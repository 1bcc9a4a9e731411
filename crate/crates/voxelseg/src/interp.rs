//! Shared interpolation kernels over x-fastest voxel grids.
//!
//! Both preprocessing and spatial augmentation sample volumes at fractional
//! coordinates through these functions, so the two stages agree on one
//! coordinate convention: voxel centers sit at integer indices and
//! out-of-range coordinates clamp to the nearest edge voxel.

#[inline]
fn clampf(v: f64, hi: f64) -> f64 {
    v.max(0.0).min(hi)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    // Exact passthrough at t = 0 keeps integer-coordinate samples bit-clean.
    if t == 0.0 {
        a
    } else {
        (1.0 - t) * a + t * b
    }
}

/// Trilinear sample of `data` (shape `(nx, ny, nz)`, x-fastest) at `p`.
pub fn trilinear(shape: (usize, usize, usize), data: &[f32], p: (f64, f64, f64)) -> f64 {
    let (nx, ny, nz) = shape;
    let x = clampf(p.0, (nx - 1) as f64);
    let y = clampf(p.1, (ny - 1) as f64);
    let z = clampf(p.2, (nz - 1) as f64);

    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let z0 = z.floor() as usize;
    let tx = x - x0 as f64;
    let ty = y - y0 as f64;
    let tz = z - z0 as f64;
    let x1 = (x0 + 1).min(nx - 1);
    let y1 = (y0 + 1).min(ny - 1);
    let z1 = (z0 + 1).min(nz - 1);

    let at = |xi: usize, yi: usize, zi: usize| data[xi + nx * (yi + ny * zi)] as f64;

    let c00 = lerp(at(x0, y0, z0), at(x1, y0, z0), tx);
    let c10 = lerp(at(x0, y1, z0), at(x1, y1, z0), tx);
    let c01 = lerp(at(x0, y0, z1), at(x1, y0, z1), tx);
    let c11 = lerp(at(x0, y1, z1), at(x1, y1, z1), tx);
    let c0 = lerp(c00, c10, ty);
    let c1 = lerp(c01, c11, ty);
    lerp(c0, c1, tz)
}

/// Nearest-neighbor index for coordinate `c` on an axis of length `n`.
///
/// Rounds half up, then clamps into range; matches the rounding used for
/// resampled shapes.
#[inline]
pub fn nearest_index(c: f64, n: usize) -> usize {
    let r = (c + 0.5).floor();
    if r < 0.0 {
        0
    } else if r as usize >= n {
        n - 1
    } else {
        r as usize
    }
}

/// Nearest-neighbor sample of a class-index grid at `p`.
pub fn nearest(shape: (usize, usize, usize), data: &[u8], p: (f64, f64, f64)) -> u8 {
    let (nx, ny, nz) = shape;
    let xi = nearest_index(p.0, nx);
    let yi = nearest_index(p.1, ny);
    let zi = nearest_index(p.2, nz);
    data[xi + nx * (yi + ny * zi)]
}

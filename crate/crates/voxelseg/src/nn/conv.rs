//! 3D convolution kernels, forward and backward.
//!
//! Parallelism splits work over disjoint output regions (rows for forward
//! and input-gradient passes, kernel taps for weight gradients); each region
//! is reduced sequentially in a fixed order, so results are bitwise
//! independent of thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};

use super::scalar::Scalar;
use super::tensor::Tensor;

fn ceil_div(n: usize, s: usize) -> usize {
    (n + s - 1) / s
}

pub(super) fn conv3d_out_shape(
    input: &[usize],
    weights: &[usize],
    stride: (usize, usize, usize),
) -> Result<Vec<usize>> {
    let [b, nx, ny, nz, ci] = input[..] else {
        return Err(Error::ShapeMismatch(format!(
            "conv3d input must be rank 5, got {input:?}"
        )));
    };
    let [k0, k1, k2, wci, co] = weights[..] else {
        return Err(Error::ShapeMismatch(format!(
            "conv3d weights must be rank 5, got {weights:?}"
        )));
    };
    if k0 != k1 || k1 != k2 {
        return Err(Error::ShapeMismatch(format!(
            "conv3d kernel must be cubic, got {k0}x{k1}x{k2}"
        )));
    }
    if k0 % 2 == 0 {
        return Err(Error::ShapeMismatch(format!(
            "same padding requires an odd kernel, got {k0}"
        )));
    }
    if wci != ci {
        return Err(Error::ShapeMismatch(format!(
            "conv3d weights expect {wci} input channels, input has {ci}"
        )));
    }
    if stride.0 == 0 || stride.1 == 0 || stride.2 == 0 {
        return Err(Error::ShapeMismatch("conv3d stride must be positive".into()));
    }
    Ok(vec![
        b,
        ceil_div(nx, stride.0),
        ceil_div(ny, stride.1),
        ceil_div(nz, stride.2),
        co,
    ])
}

pub(super) fn conv3d_forward<F: Scalar>(
    input: &Tensor<F>,
    weights: &Tensor<F>,
    bias: &Tensor<F>,
    stride: (usize, usize, usize),
) -> Result<Tensor<F>> {
    let out_shape = conv3d_out_shape(&input.shape, &weights.shape, stride)?;
    let (_, nx, ny, nz, ci_n) = input.dims5()?;
    let k = weights.shape[0];
    let co_n = weights.shape[4];
    if bias.shape != [co_n] {
        return Err(Error::ShapeMismatch(format!(
            "conv3d bias shape {:?} does not match {co_n} output channels",
            bias.shape
        )));
    }
    let (ox_n, oy_n, oz_n) = (out_shape[1], out_shape[2], out_shape[3]);
    let r = (k / 2) as i64;
    let (sx, sy, sz) = stride;

    let mut out = Tensor::zeros(&out_shape);
    let idata = &input.data;
    let wdata = &weights.data;
    let bdata = &bias.data;

    out.data
        .par_chunks_mut(oy_n * oz_n * co_n)
        .enumerate()
        .for_each(|(q, chunk)| {
            let b = q / ox_n;
            let ox = q % ox_n;
            for vox in chunk.chunks_exact_mut(co_n) {
                vox.copy_from_slice(bdata);
            }
            for oy in 0..oy_n {
                let row = &mut chunk[oy * oz_n * co_n..(oy + 1) * oz_n * co_n];
                for dx in 0..k {
                    let ix = (ox * sx) as i64 + dx as i64 - r;
                    if ix < 0 || ix >= nx as i64 {
                        continue;
                    }
                    for dy in 0..k {
                        let iy = (oy * sy) as i64 + dy as i64 - r;
                        if iy < 0 || iy >= ny as i64 {
                            continue;
                        }
                        for dz in 0..k {
                            let off = dz as i64 - r;
                            let oz_lo = if off >= 0 { 0 } else { ceil_div((-off) as usize, sz) };
                            let hi = nz as i64 - 1 - off;
                            if hi < 0 || oz_lo >= oz_n {
                                continue;
                            }
                            let oz_hi = (hi as usize / sz).min(oz_n - 1);
                            let w_tap = &wdata[((dx * k + dy) * k + dz) * ci_n * co_n..][..ci_n * co_n];
                            for oz in oz_lo..=oz_hi {
                                let iz = (oz * sz) as i64 + off;
                                let in_off =
                                    (((b * nx + ix as usize) * ny + iy as usize) * nz + iz as usize) * ci_n;
                                let in_row = &idata[in_off..in_off + ci_n];
                                let out_vox = &mut row[oz * co_n..(oz + 1) * co_n];
                                for (ci, &v) in in_row.iter().enumerate() {
                                    let w_row = &w_tap[ci * co_n..(ci + 1) * co_n];
                                    for (o, &w) in out_vox.iter_mut().zip(w_row) {
                                        *o = *o + v * w;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

pub(super) fn conv3d_backward_input<F: Scalar>(
    weights: &Tensor<F>,
    dout: &Tensor<F>,
    input_shape: &[usize],
    stride: (usize, usize, usize),
    din: &mut [F],
) {
    let (nx, ny, nz, ci_n) = (input_shape[1], input_shape[2], input_shape[3], input_shape[4]);
    let k = weights.shape[0];
    let co_n = weights.shape[4];
    let (ox_n, oy_n, oz_n) = (dout.shape[1], dout.shape[2], dout.shape[3]);
    let r = (k / 2) as i64;
    let (sx, sy, sz) = stride;
    let wdata = &weights.data;
    let gdata = &dout.data;

    din.par_chunks_mut(ny * nz * ci_n).enumerate().for_each(|(q, chunk)| {
        let b = q / nx;
        let ix = q % nx;
        for iy in 0..ny {
            let row = &mut chunk[iy * nz * ci_n..(iy + 1) * nz * ci_n];
            for dx in 0..k {
                let tx = ix as i64 + r - dx as i64;
                if tx < 0 || tx % sx as i64 != 0 {
                    continue;
                }
                let ox = (tx / sx as i64) as usize;
                if ox >= ox_n {
                    continue;
                }
                for dy in 0..k {
                    let ty = iy as i64 + r - dy as i64;
                    if ty < 0 || ty % sy as i64 != 0 {
                        continue;
                    }
                    let oy = (ty / sy as i64) as usize;
                    if oy >= oy_n {
                        continue;
                    }
                    for dz in 0..k {
                        let w_tap = &wdata[((dx * k + dy) * k + dz) * ci_n * co_n..][..ci_n * co_n];
                        for iz in 0..nz {
                            let tz = iz as i64 + r - dz as i64;
                            if tz < 0 || tz % sz as i64 != 0 {
                                continue;
                            }
                            let oz = (tz / sz as i64) as usize;
                            if oz >= oz_n {
                                continue;
                            }
                            let g_off = (((b * ox_n + ox) * oy_n + oy) * oz_n + oz) * co_n;
                            let g_row = &gdata[g_off..g_off + co_n];
                            for ci in 0..ci_n {
                                let w_row = &w_tap[ci * co_n..(ci + 1) * co_n];
                                let mut acc = F::zero();
                                for (&g, &w) in g_row.iter().zip(w_row) {
                                    acc = acc + g * w;
                                }
                                row[iz * ci_n + ci] = row[iz * ci_n + ci] + acc;
                            }
                        }
                    }
                }
            }
        }
    });
}

pub(super) fn conv3d_backward_weights<F: Scalar>(
    input: &Tensor<F>,
    dout: &Tensor<F>,
    k: usize,
    stride: (usize, usize, usize),
    dw: &mut [F],
) {
    let (bn, nx, ny, nz, ci_n) = input.dims5().expect("validated at forward");
    let co_n = dout.shape[4];
    let (ox_n, oy_n, oz_n) = (dout.shape[1], dout.shape[2], dout.shape[3]);
    let r = (k / 2) as i64;
    let (sx, sy, sz) = stride;
    let idata = &input.data;
    let gdata = &dout.data;

    dw.par_chunks_mut(ci_n * co_n).enumerate().for_each(|(t, chunk)| {
        let dx = t / (k * k);
        let dy = (t / k) % k;
        let dz = t % k;
        for b in 0..bn {
            for ox in 0..ox_n {
                let ix = (ox * sx) as i64 + dx as i64 - r;
                if ix < 0 || ix >= nx as i64 {
                    continue;
                }
                for oy in 0..oy_n {
                    let iy = (oy * sy) as i64 + dy as i64 - r;
                    if iy < 0 || iy >= ny as i64 {
                        continue;
                    }
                    for oz in 0..oz_n {
                        let iz = (oz * sz) as i64 + dz as i64 - r;
                        if iz < 0 || iz >= nz as i64 {
                            continue;
                        }
                        let in_off =
                            (((b * nx + ix as usize) * ny + iy as usize) * nz + iz as usize) * ci_n;
                        let in_row = &idata[in_off..in_off + ci_n];
                        let g_off = (((b * ox_n + ox) * oy_n + oy) * oz_n + oz) * co_n;
                        let g_row = &gdata[g_off..g_off + co_n];
                        for (ci, &v) in in_row.iter().enumerate() {
                            let w_row = &mut chunk[ci * co_n..(ci + 1) * co_n];
                            for (w, &g) in w_row.iter_mut().zip(g_row) {
                                *w = *w + v * g;
                            }
                        }
                    }
                }
            }
        }
    });
}

pub(super) fn conv3d_backward_bias<F: Scalar>(dout: &Tensor<F>, dbias: &mut [F]) {
    let co_n = dbias.len();
    for vox in dout.data.chunks_exact(co_n) {
        for (b, &g) in dbias.iter_mut().zip(vox) {
            *b = *b + g;
        }
    }
}

pub(super) fn convt_out_shape(input: &[usize], weights: &[usize]) -> Result<Vec<usize>> {
    let [b, nx, ny, nz, ci] = input[..] else {
        return Err(Error::ShapeMismatch(format!(
            "transposed conv input must be rank 5, got {input:?}"
        )));
    };
    let [k0, k1, k2, co, wci] = weights[..] else {
        return Err(Error::ShapeMismatch(format!(
            "transposed conv weights must be rank 5, got {weights:?}"
        )));
    };
    if (k0, k1, k2) != (2, 2, 2) {
        return Err(Error::ShapeMismatch(format!(
            "transposed conv kernel must be 2x2x2, got {k0}x{k1}x{k2}"
        )));
    }
    if wci != ci {
        return Err(Error::ShapeMismatch(format!(
            "transposed conv weights expect {wci} input channels, input has {ci}"
        )));
    }
    Ok(vec![b, 2 * nx, 2 * ny, 2 * nz, co])
}

/// Stride-2 transposed convolution. Each output voxel reads exactly one
/// input voxel through the tap selected by its parity.
pub(super) fn convt_forward<F: Scalar>(input: &Tensor<F>, weights: &Tensor<F>) -> Result<Tensor<F>> {
    let out_shape = convt_out_shape(&input.shape, &weights.shape)?;
    let (_, nx, ny, nz, ci_n) = input.dims5()?;
    let co_n = weights.shape[3];
    let (ox_n, oy_n, oz_n) = (out_shape[1], out_shape[2], out_shape[3]);

    let mut out = Tensor::zeros(&out_shape);
    let idata = &input.data;
    let wdata = &weights.data;

    out.data
        .par_chunks_mut(oy_n * oz_n * co_n)
        .enumerate()
        .for_each(|(q, chunk)| {
            let b = q / ox_n;
            let ox = q % ox_n;
            let (ix, dx) = (ox / 2, ox % 2);
            for oy in 0..oy_n {
                let (iy, dy) = (oy / 2, oy % 2);
                let row = &mut chunk[oy * oz_n * co_n..(oy + 1) * oz_n * co_n];
                for oz in 0..oz_n {
                    let (iz, dz) = (oz / 2, oz % 2);
                    let in_off = (((b * nx + ix) * ny + iy) * nz + iz) * ci_n;
                    let in_row = &idata[in_off..in_off + ci_n];
                    let w_tap = &wdata[((dx * 2 + dy) * 2 + dz) * co_n * ci_n..][..co_n * ci_n];
                    let out_vox = &mut row[oz * co_n..(oz + 1) * co_n];
                    for (co, o) in out_vox.iter_mut().enumerate() {
                        let w_row = &w_tap[co * ci_n..(co + 1) * ci_n];
                        let mut acc = F::zero();
                        for (&v, &w) in in_row.iter().zip(w_row) {
                            acc = acc + v * w;
                        }
                        *o = acc;
                    }
                }
            }
        });
    Ok(out)
}

pub(super) fn convt_backward_input<F: Scalar>(
    weights: &Tensor<F>,
    dout: &Tensor<F>,
    input_shape: &[usize],
    din: &mut [F],
) {
    let (nx, ny, nz, ci_n) = (input_shape[1], input_shape[2], input_shape[3], input_shape[4]);
    let co_n = weights.shape[3];
    let (oy_n, oz_n) = (dout.shape[2], dout.shape[3]);
    let wdata = &weights.data;
    let gdata = &dout.data;
    let ox_n = dout.shape[1];

    din.par_chunks_mut(ny * nz * ci_n).enumerate().for_each(|(q, chunk)| {
        let b = q / nx;
        let ix = q % nx;
        for iy in 0..ny {
            let row = &mut chunk[iy * nz * ci_n..(iy + 1) * nz * ci_n];
            for dx in 0..2 {
                let ox = 2 * ix + dx;
                for dy in 0..2 {
                    let oy = 2 * iy + dy;
                    for dz in 0..2 {
                        let w_tap = &wdata[((dx * 2 + dy) * 2 + dz) * co_n * ci_n..][..co_n * ci_n];
                        for iz in 0..nz {
                            let oz = 2 * iz + dz;
                            let g_off = (((b * ox_n + ox) * oy_n + oy) * oz_n + oz) * co_n;
                            let g_row = &gdata[g_off..g_off + co_n];
                            let vox = &mut row[iz * ci_n..(iz + 1) * ci_n];
                            for (co, &g) in g_row.iter().enumerate() {
                                let w_row = &w_tap[co * ci_n..(co + 1) * ci_n];
                                for (d, &w) in vox.iter_mut().zip(w_row) {
                                    *d = *d + g * w;
                                }
                            }
                        }
                    }
                }
            }
        }
    });
}

pub(super) fn convt_backward_weights<F: Scalar>(input: &Tensor<F>, dout: &Tensor<F>, dw: &mut [F]) {
    let (bn, nx, ny, nz, ci_n) = input.dims5().expect("validated at forward");
    let co_n = dout.shape[4];
    let (ox_n, oy_n, oz_n) = (dout.shape[1], dout.shape[2], dout.shape[3]);
    let idata = &input.data;
    let gdata = &dout.data;

    dw.par_chunks_mut(co_n * ci_n).enumerate().for_each(|(t, chunk)| {
        let dx = t / 4;
        let dy = (t / 2) % 2;
        let dz = t % 2;
        for b in 0..bn {
            for ix in 0..nx {
                let ox = 2 * ix + dx;
                for iy in 0..ny {
                    let oy = 2 * iy + dy;
                    for iz in 0..nz {
                        let oz = 2 * iz + dz;
                        let in_off = (((b * nx + ix) * ny + iy) * nz + iz) * ci_n;
                        let in_row = &idata[in_off..in_off + ci_n];
                        let g_off = (((b * ox_n + ox) * oy_n + oy) * oz_n + oz) * co_n;
                        let g_row = &gdata[g_off..g_off + co_n];
                        for (co, &g) in g_row.iter().enumerate() {
                            let w_row = &mut chunk[co * ci_n..(co + 1) * ci_n];
                            for (w, &v) in w_row.iter_mut().zip(in_row) {
                                *w = *w + g * v;
                            }
                        }
                    }
                }
            }
        }
    });
}

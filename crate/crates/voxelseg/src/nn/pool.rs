//! 2x2x2 stride-2 max pooling.

use crate::error::{Error, Result};

use super::scalar::Scalar;
use super::tensor::Tensor;

/// Forward pass; returns the pooled tensor and the flat input index of each
/// window maximum (first index on ties) for the backward scatter.
pub(super) fn maxpool_forward<F: Scalar>(input: &Tensor<F>) -> Result<(Tensor<F>, Vec<u32>)> {
    let (bn, nx, ny, nz, cn) = input.dims5()?;
    if nx % 2 != 0 || ny % 2 != 0 || nz % 2 != 0 {
        return Err(Error::IndivisibleShape {
            shape: (nx, ny, nz),
            divisor: 2,
        });
    }
    assert!(input.numel() <= u32::MAX as usize, "argmax indices stored as u32");
    let (ox_n, oy_n, oz_n) = (nx / 2, ny / 2, nz / 2);
    let mut out = Tensor::zeros(&[bn, ox_n, oy_n, oz_n, cn]);
    let mut argmax = vec![0u32; out.numel()];

    let mut o = 0;
    for b in 0..bn {
        for ox in 0..ox_n {
            for oy in 0..oy_n {
                for oz in 0..oz_n {
                    for c in 0..cn {
                        let mut best = F::neg_infinity();
                        let mut best_idx = 0u32;
                        for dx in 0..2 {
                            for dy in 0..2 {
                                for dz in 0..2 {
                                    let idx = (((b * nx + 2 * ox + dx) * ny + 2 * oy + dy) * nz
                                        + 2 * oz
                                        + dz)
                                        * cn
                                        + c;
                                    let v = input.data[idx];
                                    if v > best {
                                        best = v;
                                        best_idx = idx as u32;
                                    }
                                }
                            }
                        }
                        out.data[o] = best;
                        argmax[o] = best_idx;
                        o += 1;
                    }
                }
            }
        }
    }
    Ok((out, argmax))
}

pub(super) fn maxpool_backward<F: Scalar>(dout: &Tensor<F>, argmax: &[u32], din: &mut [F]) {
    for (g, &idx) in dout.data.iter().zip(argmax) {
        let i = idx as usize;
        din[i] = din[i] + *g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_maximum_is_selected() {
        let input = Tensor::from_vec(&[1, 2, 2, 2, 1], (1..=8).map(f64::from).collect()).unwrap();
        let (out, argmax) = maxpool_forward(&input).unwrap();
        assert_eq!(out.shape, vec![1, 1, 1, 1, 1]);
        assert_eq!(out.data, vec![8.0]);
        assert_eq!(argmax, vec![7]);
    }

    #[test]
    fn ties_route_to_first_window_element() {
        let input = Tensor::<f64>::filled(&[1, 2, 2, 2, 1], 4.0);
        let (out, argmax) = maxpool_forward(&input).unwrap();
        assert_eq!(out.data, vec![4.0]);
        assert_eq!(argmax, vec![0]);

        let dout = Tensor::<f64>::filled(&[1, 1, 1, 1, 1], 1.0);
        let mut din = vec![0.0f64; 8];
        maxpool_backward(&dout, &argmax, &mut din);
        assert_eq!(din, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn odd_extent_is_rejected() {
        let input = Tensor::<f64>::zeros(&[1, 3, 2, 2, 1]);
        assert!(matches!(
            maxpool_forward(&input),
            Err(Error::IndivisibleShape { shape: (3, 2, 2), divisor: 2 })
        ));
    }

    #[test]
    fn channels_pool_independently() {
        let mut input = Tensor::<f64>::zeros(&[1, 2, 2, 2, 2]);
        // channel 0 peaks at voxel (0,0,0), channel 1 at voxel (1,1,1)
        input.data[0] = 5.0;
        input.data[7 * 2 + 1] = 9.0;
        let (out, _) = maxpool_forward(&input).unwrap();
        assert_eq!(out.data, vec![5.0, 9.0]);
    }
}

//! Segmentation losses over `[b, x, y, z, C]` probability tensors.

use crate::error::{Error, Result};

use super::scalar::Scalar;
use super::tensor::Tensor;

fn check_pair<F: Scalar>(probs: &Tensor<F>, onehot: &Tensor<F>) -> Result<usize> {
    let (_, _, _, _, c) = probs.dims5()?;
    if probs.shape != onehot.shape {
        return Err(Error::ShapeMismatch(format!(
            "probability shape {:?} differs from target shape {:?}",
            probs.shape, onehot.shape
        )));
    }
    Ok(c)
}

/// Soft confusion counts per class, summed over the whole batch.
#[derive(Debug, Clone)]
pub(super) struct SoftCounts {
    pub tp: Vec<f64>,
    pub fn_: Vec<f64>,
    pub fp: Vec<f64>,
}

pub(super) fn soft_counts<F: Scalar>(probs: &Tensor<F>, onehot: &Tensor<F>) -> Result<SoftCounts> {
    let cn = check_pair(probs, onehot)?;
    let mut tp = vec![0.0f64; cn];
    let mut fn_ = vec![0.0f64; cn];
    let mut fp = vec![0.0f64; cn];
    for (pvox, yvox) in probs.data.chunks_exact(cn).zip(onehot.data.chunks_exact(cn)) {
        for c in 0..cn {
            let p = pvox[c].to_f64();
            let y = yvox[c].to_f64();
            tp[c] += p * y;
            fn_[c] += (1.0 - p) * y;
            fp[c] += p * (1.0 - y);
        }
    }
    Ok(SoftCounts { tp, fn_, fp })
}

/// Loss value C − Σ_c (TP_c + s) / (TP_c + α·FN_c + β·FP_c + s).
pub(super) fn tversky_value(counts: &SoftCounts, alpha: f64, beta: f64, smooth: f64) -> f64 {
    let cn = counts.tp.len();
    let mut loss = cn as f64;
    for c in 0..cn {
        let num = counts.tp[c] + smooth;
        let den = counts.tp[c] + alpha * counts.fn_[c] + beta * counts.fp[c] + smooth;
        loss -= num / den;
    }
    loss
}

pub(super) fn tversky_backward<F: Scalar>(
    onehot: &Tensor<F>,
    counts: &SoftCounts,
    alpha: f64,
    beta: f64,
    smooth: f64,
    g: f64,
    dprobs: &mut [F],
) {
    let cn = counts.tp.len();
    // dL/dTP, dL/dFN, dL/dFP per class; p enters TP with weight y,
    // FN with -y, FP with (1-y).
    let mut per_class = vec![(0.0f64, 0.0f64); cn];
    for c in 0..cn {
        let num = counts.tp[c] + smooth;
        let den = counts.tp[c] + alpha * counts.fn_[c] + beta * counts.fp[c] + smooth;
        let d_tp = (num - den) / (den * den);
        let d_fn = num * alpha / (den * den);
        let d_fp = num * beta / (den * den);
        // dp = (d_tp - d_fn - d_fp)·y + d_fp
        per_class[c] = (d_tp - d_fn - d_fp, d_fp);
    }
    for (yvox, dvox) in onehot.data.chunks_exact(cn).zip(dprobs.chunks_exact_mut(cn)) {
        for c in 0..cn {
            let (on_y, base) = per_class[c];
            let v = g * (on_y * yvox[c].to_f64() + base);
            dvox[c] = dvox[c] + F::from_f64(v);
        }
    }
}

/// Mean over batch voxels of −Σ_c y·ln(p), with p clamped to
/// [floor, 1 − floor].
pub(super) fn cce_value<F: Scalar>(probs: &Tensor<F>, onehot: &Tensor<F>, floor: f64) -> Result<f64> {
    let cn = check_pair(probs, onehot)?;
    let voxels = (probs.numel() / cn) as f64;
    let mut total = 0.0f64;
    for (pvox, yvox) in probs.data.chunks_exact(cn).zip(onehot.data.chunks_exact(cn)) {
        for c in 0..cn {
            let y = yvox[c].to_f64();
            if y != 0.0 {
                let p = pvox[c].to_f64().clamp(floor, 1.0 - floor);
                total -= y * p.ln();
            }
        }
    }
    Ok(total / voxels)
}

pub(super) fn cce_backward<F: Scalar>(
    probs: &Tensor<F>,
    onehot: &Tensor<F>,
    floor: f64,
    g: f64,
    dprobs: &mut [F],
) {
    let cn = probs.shape[4];
    let voxels = (probs.numel() / cn) as f64;
    for ((pvox, yvox), dvox) in probs
        .data
        .chunks_exact(cn)
        .zip(onehot.data.chunks_exact(cn))
        .zip(dprobs.chunks_exact_mut(cn))
    {
        for c in 0..cn {
            let y = yvox[c].to_f64();
            let p = pvox[c].to_f64();
            // The clamp zeroes the derivative outside its open interval.
            if y != 0.0 && p > floor && p < 1.0 - floor {
                let v = -g * y / (p * voxels);
                dvox[c] = dvox[c] + F::from_f64(v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 8 voxels, 2 classes: class-1 truth at voxels 0..3, prediction at
    /// {0,1,2,4}. Both classes then count TP=3, FN=1, FP=1.
    fn hard_example() -> (Tensor<f64>, Tensor<f64>) {
        let gt1 = [true, true, true, true, false, false, false, false];
        let pred1 = [true, true, true, false, true, false, false, false];
        let mut probs = Vec::new();
        let mut onehot = Vec::new();
        for v in 0..8 {
            probs.extend_from_slice(&if pred1[v] { [0.0, 1.0] } else { [1.0, 0.0] });
            onehot.extend_from_slice(&if gt1[v] { [0.0, 1.0] } else { [1.0, 0.0] });
        }
        (
            Tensor::from_vec(&[1, 2, 2, 2, 2], probs).unwrap(),
            Tensor::from_vec(&[1, 2, 2, 2, 2], onehot).unwrap(),
        )
    }

    #[test]
    fn perfect_prediction_scores_zero() {
        let (_, onehot) = hard_example();
        let counts = soft_counts(&onehot, &onehot).unwrap();
        assert_eq!(tversky_value(&counts, 0.5, 0.5, 1e-5), 0.0);
    }

    #[test]
    fn hard_counts_reproduce_hand_computed_loss() {
        let (probs, onehot) = hard_example();
        let counts = soft_counts(&probs, &onehot).unwrap();
        assert_eq!(counts.tp, vec![3.0, 3.0]);
        assert_eq!(counts.fn_, vec![1.0, 1.0]);
        assert_eq!(counts.fp, vec![1.0, 1.0]);
        // 2 − 2·(3 / (3 + 0.5 + 0.5)) = 0.5
        let loss = tversky_value(&counts, 0.5, 0.5, 0.0);
        assert!((loss - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cce_of_half_probability_is_ln_two() {
        let probs = Tensor::from_vec(&[1, 1, 1, 1, 2], vec![0.5, 0.5]).unwrap();
        let onehot = Tensor::from_vec(&[1, 1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let v = cce_value(&probs, &onehot, 1e-7).unwrap();
        assert!((v - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn cce_of_uniform_four_class_prediction() {
        let probs = Tensor::<f64>::filled(&[1, 2, 2, 2, 4], 0.25);
        let mut onehot = Tensor::<f64>::zeros(&[1, 2, 2, 2, 4]);
        for v in 0..8 {
            onehot.data[v * 4 + v % 4] = 1.0;
        }
        let v = cce_value(&probs, &onehot, 1e-7).unwrap();
        assert!((v - 1.386294).abs() < 1e-5);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = Tensor::<f64>::zeros(&[1, 2, 2, 2, 2]);
        let b = Tensor::<f64>::zeros(&[1, 2, 2, 2, 3]);
        assert!(soft_counts(&a, &b).is_err());
        assert!(cce_value(&a, &b, 1e-7).is_err());
    }
}

//! Batch normalization over the (batch, x, y, z) axes per channel.

use crate::error::{Error, Result};

use super::scalar::Scalar;
use super::tensor::Tensor;

/// Per-channel batch statistics from one training-mode pass; population
/// (biased) variance, as used for normalization and the running average.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn check_affine_shapes<F: Scalar>(input: &Tensor<F>, gamma: &Tensor<F>, beta: &Tensor<F>) -> Result<usize> {
    let (_, _, _, _, cn) = input.dims5()?;
    if gamma.shape != [cn] || beta.shape != [cn] {
        return Err(Error::ShapeMismatch(format!(
            "batchnorm affine shapes {:?}/{:?} do not match {cn} channels",
            gamma.shape, beta.shape
        )));
    }
    Ok(cn)
}

/// Training-mode forward. Saves mean and 1/std for the backward pass and
/// reports batch statistics for the caller's running-average update.
pub(super) fn batchnorm_train_forward<F: Scalar>(
    input: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    eps: f64,
) -> Result<(Tensor<F>, Vec<f64>, Vec<f64>, ChannelStats)> {
    let cn = check_affine_shapes(input, gamma, beta)?;
    let n = input.numel() / cn;

    let mut mean = vec![0.0f64; cn];
    for vox in input.data.chunks_exact(cn) {
        for (m, &v) in mean.iter_mut().zip(vox) {
            *m += v.to_f64();
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0f64; cn];
    for vox in input.data.chunks_exact(cn) {
        for c in 0..cn {
            let d = vox[c].to_f64() - mean[c];
            var[c] += d * d;
        }
    }
    for v in &mut var {
        *v /= n as f64;
    }

    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let scale: Vec<f64> = (0..cn).map(|c| gamma.data[c].to_f64() * inv_std[c]).collect();
    let shift: Vec<f64> = (0..cn)
        .map(|c| beta.data[c].to_f64() - mean[c] * scale[c])
        .collect();

    let mut out = Tensor::zeros(&input.shape);
    for (ovox, ivox) in out.data.chunks_exact_mut(cn).zip(input.data.chunks_exact(cn)) {
        for c in 0..cn {
            ovox[c] = F::from_f64(ivox[c].to_f64() * scale[c] + shift[c]);
        }
    }
    Ok((out, mean.clone(), inv_std, ChannelStats { mean, var }))
}

pub(super) fn batchnorm_train_backward<F: Scalar>(
    input: &Tensor<F>,
    gamma: &Tensor<F>,
    dout: &Tensor<F>,
    mean: &[f64],
    inv_std: &[f64],
    din: Option<&mut [F]>,
    dgamma: Option<&mut [F]>,
    dbeta: Option<&mut [F]>,
) {
    let cn = mean.len();
    let n = (input.numel() / cn) as f64;

    // Channel sums of dy and dy*xhat, fixed voxel order.
    let mut s1 = vec![0.0f64; cn];
    let mut s2 = vec![0.0f64; cn];
    for (ivox, gvox) in input.data.chunks_exact(cn).zip(dout.data.chunks_exact(cn)) {
        for c in 0..cn {
            let dy = gvox[c].to_f64();
            let xhat = (ivox[c].to_f64() - mean[c]) * inv_std[c];
            s1[c] += dy;
            s2[c] += dy * xhat;
        }
    }
    if let Some(dg) = dgamma {
        for c in 0..cn {
            dg[c] = dg[c] + F::from_f64(s2[c]);
        }
    }
    if let Some(db) = dbeta {
        for c in 0..cn {
            db[c] = db[c] + F::from_f64(s1[c]);
        }
    }
    if let Some(dx) = din {
        for ((ivox, gvox), xvox) in input
            .data
            .chunks_exact(cn)
            .zip(dout.data.chunks_exact(cn))
            .zip(dx.chunks_exact_mut(cn))
        {
            for c in 0..cn {
                let dy = gvox[c].to_f64();
                let xhat = (ivox[c].to_f64() - mean[c]) * inv_std[c];
                let g = gamma.data[c].to_f64();
                let v = g * inv_std[c] * (dy - s1[c] / n - xhat * s2[c] / n);
                xvox[c] = xvox[c] + F::from_f64(v);
            }
        }
    }
}

/// Inference-mode forward: a per-channel affine map from running statistics.
pub(super) fn batchnorm_infer_forward<F: Scalar>(
    input: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Result<(Tensor<F>, Vec<f64>, Vec<f64>)> {
    let cn = check_affine_shapes(input, gamma, beta)?;
    if running_mean.len() != cn || running_var.len() != cn {
        return Err(Error::ShapeMismatch(format!(
            "running stats of {} channels do not match {cn} input channels",
            running_mean.len()
        )));
    }
    let inv_std: Vec<f64> = running_var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let scale: Vec<f64> = (0..cn).map(|c| gamma.data[c].to_f64() * inv_std[c]).collect();
    let shift: Vec<f64> = (0..cn)
        .map(|c| beta.data[c].to_f64() - running_mean[c] * scale[c])
        .collect();
    let mut out = Tensor::zeros(&input.shape);
    for (ovox, ivox) in out.data.chunks_exact_mut(cn).zip(input.data.chunks_exact(cn)) {
        for c in 0..cn {
            ovox[c] = F::from_f64(ivox[c].to_f64() * scale[c] + shift[c]);
        }
    }
    Ok((out, running_mean.to_vec(), inv_std))
}

pub(super) fn batchnorm_infer_backward<F: Scalar>(
    input: &Tensor<F>,
    gamma: &Tensor<F>,
    dout: &Tensor<F>,
    mean: &[f64],
    inv_std: &[f64],
    din: Option<&mut [F]>,
    dgamma: Option<&mut [F]>,
    dbeta: Option<&mut [F]>,
) {
    let cn = mean.len();
    let mut s1 = vec![0.0f64; cn];
    let mut s2 = vec![0.0f64; cn];
    for (ivox, gvox) in input.data.chunks_exact(cn).zip(dout.data.chunks_exact(cn)) {
        for c in 0..cn {
            let dy = gvox[c].to_f64();
            s1[c] += dy;
            s2[c] += dy * (ivox[c].to_f64() - mean[c]) * inv_std[c];
        }
    }
    if let Some(dg) = dgamma {
        for c in 0..cn {
            dg[c] = dg[c] + F::from_f64(s2[c]);
        }
    }
    if let Some(db) = dbeta {
        for c in 0..cn {
            db[c] = db[c] + F::from_f64(s1[c]);
        }
    }
    if let Some(dx) = din {
        for (gvox, xvox) in dout.data.chunks_exact(cn).zip(dx.chunks_exact_mut(cn)) {
            for c in 0..cn {
                let v = gvox[c].to_f64() * gamma.data[c].to_f64() * inv_std[c];
                xvox[c] = xvox[c] + F::from_f64(v);
            }
        }
    }
}

//! Operation tape for reverse-mode differentiation.

use crate::error::{Error, Result};

use super::conv;
use super::loss::{self, SoftCounts};
use super::norm::{self, ChannelStats};
use super::pool;
use super::scalar::Scalar;
use super::tensor::Tensor;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

/// Recorded operation with whatever the backward pass needs saved.
pub(super) enum Op<F: Scalar> {
    Leaf,
    Conv3d {
        input: Var,
        weights: Var,
        bias: Var,
        stride: (usize, usize, usize),
    },
    ConvTranspose3d {
        input: Var,
        weights: Var,
    },
    MaxPool3d {
        input: Var,
        argmax: Vec<u32>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Relu {
        input: Var,
    },
    ConcatChannels {
        a: Var,
        b: Var,
    },
    SoftmaxChannels {
        input: Var,
    },
    Tversky {
        probs: Var,
        onehot: Var,
        alpha: f64,
        beta: f64,
        smooth: f64,
        counts: SoftCounts,
    },
    Cce {
        probs: Var,
        onehot: Var,
        floor: f64,
    },
    Add {
        a: Var,
        b: Var,
    },
    DotConst {
        input: Var,
        coeffs: Tensor<F>,
    },
}

struct Node<F: Scalar> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Gradients keyed by [`Var`], produced by [`Tape::backward`].
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn wrt(&self, v: Var) -> Option<&[F]> {
        self.grads[v.0].as_deref()
    }
}

pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn conv3d(
        &mut self,
        input: Var,
        weights: Var,
        bias: Var,
        stride: (usize, usize, usize),
    ) -> Result<Var> {
        let out = conv::conv3d_forward(
            self.value(input),
            self.value(weights),
            self.value(bias),
            stride,
        )?;
        let req = self.requires(input) || self.requires(weights) || self.requires(bias);
        Ok(self.push(
            out,
            Op::Conv3d {
                input,
                weights,
                bias,
                stride,
            },
            req,
        ))
    }

    pub fn conv_transpose3d(&mut self, input: Var, weights: Var) -> Result<Var> {
        let out = conv::convt_forward(self.value(input), self.value(weights))?;
        let req = self.requires(input) || self.requires(weights);
        Ok(self.push(out, Op::ConvTranspose3d { input, weights }, req))
    }

    pub fn maxpool3d(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = pool::maxpool_forward(self.value(input))?;
        let req = self.requires(input);
        Ok(self.push(out, Op::MaxPool3d { input, argmax }, req))
    }

    /// Training-mode batch normalization; also reports the batch statistics
    /// so the caller can maintain running averages.
    pub fn batchnorm_train(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, ChannelStats)> {
        let (out, mean, inv_std, stats) = norm::batchnorm_train_forward(
            self.value(input),
            self.value(gamma),
            self.value(beta),
            eps,
        )?;
        let req = self.requires(input) || self.requires(gamma) || self.requires(beta);
        let var = self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
                train: true,
            },
            req,
        );
        Ok((var, stats))
    }

    pub fn batchnorm_infer(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (out, mean, inv_std) = norm::batchnorm_infer_forward(
            self.value(input),
            self.value(gamma),
            self.value(beta),
            running_mean,
            running_var,
            eps,
        )?;
        let req = self.requires(input) || self.requires(gamma) || self.requires(beta);
        Ok(self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
                train: false,
            },
            req,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let v = self.value(input);
        let out = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|&x| if x > F::zero() { x } else { F::zero() }).collect(),
        };
        let req = self.requires(input);
        self.push(out, Op::Relu { input }, req)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ba, xa, ya, za, ca) = self.value(a).dims5()?;
        let (bb, xb, yb, zb, cb) = self.value(b).dims5()?;
        if (ba, xa, ya, za) != (bb, xb, yb, zb) {
            return Err(Error::ShapeMismatch(format!(
                "concat operands {:?} and {:?} differ outside the channel axis",
                self.value(a).shape,
                self.value(b).shape
            )));
        }
        let mut out = Tensor::zeros(&[ba, xa, ya, za, ca + cb]);
        {
            let av = &self.value(a).data;
            let bv = &self.value(b).data;
            for (i, vox) in out.data.chunks_exact_mut(ca + cb).enumerate() {
                vox[..ca].copy_from_slice(&av[i * ca..(i + 1) * ca]);
                vox[ca..].copy_from_slice(&bv[i * cb..(i + 1) * cb]);
            }
        }
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(out, Op::ConcatChannels { a, b }, req))
    }

    pub fn softmax_channels(&mut self, input: Var) -> Result<Var> {
        let (_, _, _, _, cn) = self.value(input).dims5()?;
        let v = self.value(input);
        let mut out = Tensor::zeros(&v.shape);
        for (ovox, ivox) in out.data.chunks_exact_mut(cn).zip(v.data.chunks_exact(cn)) {
            let m = ivox.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x.to_f64()));
            let mut sum = 0.0f64;
            let mut e = vec![0.0f64; cn];
            for c in 0..cn {
                e[c] = (ivox[c].to_f64() - m).exp();
                sum += e[c];
            }
            for c in 0..cn {
                ovox[c] = F::from_f64(e[c] / sum);
            }
        }
        let req = self.requires(input);
        Ok(self.push(out, Op::SoftmaxChannels { input }, req))
    }

    pub fn tversky_loss(
        &mut self,
        probs: Var,
        onehot: Var,
        alpha: f64,
        beta: f64,
        smooth: f64,
    ) -> Result<Var> {
        let counts = loss::soft_counts(self.value(probs), self.value(onehot))?;
        let value = loss::tversky_value(&counts, alpha, beta, smooth);
        let req = self.requires(probs);
        Ok(self.push(
            Tensor::scalar(F::from_f64(value)),
            Op::Tversky {
                probs,
                onehot,
                alpha,
                beta,
                smooth,
                counts,
            },
            req,
        ))
    }

    pub fn cce_loss(&mut self, probs: Var, onehot: Var, floor: f64) -> Result<Var> {
        let value = loss::cce_value(self.value(probs), self.value(onehot), floor)?;
        let req = self.requires(probs);
        Ok(self.push(
            Tensor::scalar(F::from_f64(value)),
            Op::Cce { probs, onehot, floor },
            req,
        ))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape != self.value(b).shape {
            return Err(Error::ShapeMismatch(format!(
                "cannot add shapes {:?} and {:?}",
                self.value(a).shape,
                self.value(b).shape
            )));
        }
        let out = Tensor {
            shape: self.value(a).shape.clone(),
            data: self
                .value(a)
                .data
                .iter()
                .zip(&self.value(b).data)
                .map(|(&x, &y)| x + y)
                .collect(),
        };
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(out, Op::Add { a, b }, req))
    }

    /// Scalar projection Σ c_i·x_i against fixed coefficients; turns any
    /// tensor output into a scalar for gradient verification.
    pub fn dot_const(&mut self, input: Var, coeffs: &Tensor<F>) -> Result<Var> {
        if self.value(input).shape != coeffs.shape {
            return Err(Error::ShapeMismatch(format!(
                "projection coefficients {:?} do not match input {:?}",
                coeffs.shape,
                self.value(input).shape
            )));
        }
        let mut acc = 0.0f64;
        for (&x, &c) in self.value(input).data.iter().zip(&coeffs.data) {
            acc += x.to_f64() * c.to_f64();
        }
        let req = self.requires(input);
        Ok(self.push(
            Tensor::scalar(F::from_f64(acc)),
            Op::DotConst {
                input,
                coeffs: coeffs.clone(),
            },
            req,
        ))
    }

    /// Reverse sweep from a scalar output. Gradients accumulate additively
    /// into every contributing node; inputs that do not require gradients
    /// are skipped.
    pub fn backward(&self, output: Var) -> Result<Gradients<F>> {
        if self.nodes[output.0].value.numel() != 1 {
            return Err(Error::Config(format!(
                "backward starts from a scalar, got shape {:?}",
                self.nodes[output.0].value.shape
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![F::one()]);

        for i in (0..=output.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) || !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let gout = Tensor {
                shape: self.nodes[i].value.shape.clone(),
                data: g,
            };
            self.backward_node(i, &gout, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn grad_slice<'a>(
        &self,
        grads: &'a mut [Option<Vec<F>>],
        v: Var,
    ) -> Option<&'a mut [F]> {
        if !self.requires(v) {
            return None;
        }
        let numel = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); numel]).as_mut_slice())
    }

    fn backward_node(&self, i: usize, gout: &Tensor<F>, grads: &mut [Option<Vec<F>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv3d {
                input,
                weights,
                bias,
                stride,
            } => {
                if let Some(din) = self.grad_slice(grads, *input) {
                    conv::conv3d_backward_input(
                        self.value(*weights),
                        gout,
                        &self.value(*input).shape,
                        *stride,
                        din,
                    );
                }
                if let Some(dw) = self.grad_slice(grads, *weights) {
                    let k = self.value(*weights).shape[0];
                    conv::conv3d_backward_weights(self.value(*input), gout, k, *stride, dw);
                }
                if let Some(db) = self.grad_slice(grads, *bias) {
                    conv::conv3d_backward_bias(gout, db);
                }
            }
            Op::ConvTranspose3d { input, weights } => {
                if let Some(din) = self.grad_slice(grads, *input) {
                    conv::convt_backward_input(
                        self.value(*weights),
                        gout,
                        &self.value(*input).shape,
                        din,
                    );
                }
                if let Some(dw) = self.grad_slice(grads, *weights) {
                    conv::convt_backward_weights(self.value(*input), gout, dw);
                }
            }
            Op::MaxPool3d { input, argmax } => {
                if let Some(din) = self.grad_slice(grads, *input) {
                    pool::maxpool_backward(gout, argmax, din);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
                train,
            } => {
                // The three gradient targets share channel sums; compute
                // them through one call with optional outputs. Temporaries
                // keep the borrows of `grads` disjoint.
                let want_in = self.requires(*input);
                let want_gamma = self.requires(*gamma);
                let want_beta = self.requires(*beta);
                let cn = mean.len();
                let mut din_tmp = if want_in {
                    Some(vec![F::zero(); self.value(*input).numel()])
                } else {
                    None
                };
                let mut dgamma_tmp = if want_gamma { Some(vec![F::zero(); cn]) } else { None };
                let mut dbeta_tmp = if want_beta { Some(vec![F::zero(); cn]) } else { None };
                let backward = if *train {
                    norm::batchnorm_train_backward
                } else {
                    norm::batchnorm_infer_backward
                };
                backward(
                    self.value(*input),
                    self.value(*gamma),
                    gout,
                    mean,
                    inv_std,
                    din_tmp.as_deref_mut(),
                    dgamma_tmp.as_deref_mut(),
                    dbeta_tmp.as_deref_mut(),
                );
                if let (Some(tmp), Some(din)) = (din_tmp, self.grad_slice(grads, *input)) {
                    for (d, t) in din.iter_mut().zip(tmp) {
                        *d = *d + t;
                    }
                }
                if let (Some(tmp), Some(dg)) = (dgamma_tmp, self.grad_slice(grads, *gamma)) {
                    for (d, t) in dg.iter_mut().zip(tmp) {
                        *d = *d + t;
                    }
                }
                if let (Some(tmp), Some(db)) = (dbeta_tmp, self.grad_slice(grads, *beta)) {
                    for (d, t) in db.iter_mut().zip(tmp) {
                        *d = *d + t;
                    }
                }
            }
            Op::Relu { input } => {
                if let Some(din) = self.grad_slice(grads, *input) {
                    for ((d, &x), &g) in
                        din.iter_mut().zip(&self.value(*input).data).zip(&gout.data)
                    {
                        if x > F::zero() {
                            *d = *d + g;
                        }
                    }
                }
            }
            Op::ConcatChannels { a, b } => {
                let ca = *self.value(*a).shape.last().expect("rank checked");
                let cb = *self.value(*b).shape.last().expect("rank checked");
                if let Some(da) = self.grad_slice(grads, *a) {
                    for (i, gvox) in gout.data.chunks_exact(ca + cb).enumerate() {
                        for c in 0..ca {
                            da[i * ca + c] = da[i * ca + c] + gvox[c];
                        }
                    }
                }
                if let Some(db) = self.grad_slice(grads, *b) {
                    for (i, gvox) in gout.data.chunks_exact(ca + cb).enumerate() {
                        for c in 0..cb {
                            db[i * cb + c] = db[i * cb + c] + gvox[ca + c];
                        }
                    }
                }
            }
            Op::SoftmaxChannels { input } => {
                if let Some(din) = self.grad_slice(grads, *input) {
                    let cn = *self.nodes[i].value.shape.last().expect("rank checked");
                    let p = &self.nodes[i].value.data;
                    for ((dvox, pvox), gvox) in din
                        .chunks_exact_mut(cn)
                        .zip(p.chunks_exact(cn))
                        .zip(gout.data.chunks_exact(cn))
                    {
                        let mut dot = 0.0f64;
                        for c in 0..cn {
                            dot += gvox[c].to_f64() * pvox[c].to_f64();
                        }
                        for c in 0..cn {
                            let v = pvox[c].to_f64() * (gvox[c].to_f64() - dot);
                            dvox[c] = dvox[c] + F::from_f64(v);
                        }
                    }
                }
            }
            Op::Tversky {
                probs,
                onehot,
                alpha,
                beta,
                smooth,
                counts,
            } => {
                if let Some(dp) = self.grad_slice(grads, *probs) {
                    loss::tversky_backward(
                        self.value(*onehot),
                        counts,
                        *alpha,
                        *beta,
                        *smooth,
                        gout.data[0].to_f64(),
                        dp,
                    );
                }
            }
            Op::Cce { probs, onehot, floor } => {
                if let Some(dp) = self.grad_slice(grads, *probs) {
                    loss::cce_backward(
                        self.value(*probs),
                        self.value(*onehot),
                        *floor,
                        gout.data[0].to_f64(),
                        dp,
                    );
                }
            }
            Op::Add { a, b } => {
                if let Some(da) = self.grad_slice(grads, *a) {
                    for (d, &g) in da.iter_mut().zip(&gout.data) {
                        *d = *d + g;
                    }
                }
                if let Some(db) = self.grad_slice(grads, *b) {
                    for (d, &g) in db.iter_mut().zip(&gout.data) {
                        *d = *d + g;
                    }
                }
            }
            Op::DotConst { input, coeffs } => {
                if let Some(din) = self.grad_slice(grads, *input) {
                    let g = gout.data[0];
                    for (d, &c) in din.iter_mut().zip(&coeffs.data) {
                        *d = *d + g * c;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut r = SeededRng::from_seed(seed);
        let data = (0..shape.iter().product()).map(|_| r.standard_normal()).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[1, 1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap(), false);
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data, vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::filled(&[1, 1, 1, 1, 4], 1.7), false);
        let y = tape.softmax_channels(x).unwrap();
        for &p in &tape.value(y).data {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_sums_to_one_in_open_interval() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(randn(&[2, 2, 3, 2, 4], 1), false);
        let y = tape.softmax_channels(x).unwrap();
        for vox in tape.value(y).data.chunks_exact(4) {
            let s: f64 = vox.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(vox.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn concat_preserves_both_operands() {
        let mut tape = Tape::<f64>::new();
        let a_val = randn(&[1, 2, 2, 2, 3], 2);
        let b_val = randn(&[1, 2, 2, 2, 2], 3);
        let a = tape.leaf(a_val.clone(), false);
        let b = tape.leaf(b_val.clone(), false);
        let c = tape.concat_channels(a, b).unwrap();
        assert_eq!(tape.value(c).shape, vec![1, 2, 2, 2, 5]);
        for (i, vox) in tape.value(c).data.chunks_exact(5).enumerate() {
            assert_eq!(&vox[..3], &a_val.data[i * 3..(i + 1) * 3]);
            assert_eq!(&vox[3..], &b_val.data[i * 2..(i + 1) * 2]);
        }

        let mismatched = tape.leaf(Tensor::zeros(&[1, 2, 2, 1, 2]), false);
        assert!(tape.concat_channels(a, mismatched).is_err());
    }

    #[test]
    fn concat_backward_splits_gradient_exactly() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(randn(&[1, 2, 2, 2, 3], 4), true);
        let b = tape.leaf(randn(&[1, 2, 2, 2, 2], 5), true);
        let c = tape.concat_channels(a, b).unwrap();
        let coeffs = randn(&[1, 2, 2, 2, 5], 6);
        let out = tape.dot_const(c, &coeffs).unwrap();
        let grads = tape.backward(out).unwrap();

        let ga = grads.wrt(a).unwrap();
        let gb = grads.wrt(b).unwrap();
        for (i, vox) in coeffs.data.chunks_exact(5).enumerate() {
            assert_eq!(&ga[i * 3..(i + 1) * 3], &vox[..3]);
            assert_eq!(&gb[i * 2..(i + 1) * 2], &vox[3..]);
        }
        let n_in: f64 = coeffs.data.iter().map(|v| v * v).sum();
        let n_split: f64 =
            ga.iter().map(|v| v * v).sum::<f64>() + gb.iter().map(|v| v * v).sum::<f64>();
        assert!((n_in - n_split).abs() < 1e-12);
    }

    #[test]
    fn gradients_accumulate_across_consumers() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(randn(&[1, 1, 1, 1, 4], 7), true);
        let c1 = randn(&[1, 1, 1, 1, 4], 8);
        let c2 = randn(&[1, 1, 1, 1, 4], 9);
        let p1 = tape.dot_const(x, &c1).unwrap();
        let p2 = tape.dot_const(x, &c2).unwrap();
        let s = tape.add(p1, p2).unwrap();
        let grads = tape.backward(s).unwrap();
        let gx = grads.wrt(x).unwrap();
        for i in 0..4 {
            assert!((gx[i] - (c1.data[i] + c2.data[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_requires_scalar_output() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(randn(&[1, 2, 2, 2, 1], 10), true);
        let y = tape.relu(x);
        assert!(matches!(tape.backward(y), Err(Error::Config(_))));
    }

    #[test]
    fn leaves_without_grad_are_skipped() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(randn(&[1, 1, 1, 1, 3], 11), false);
        let c = randn(&[1, 1, 1, 1, 3], 12);
        let out = tape.dot_const(x, &c).unwrap();
        let grads = tape.backward(out).unwrap();
        assert!(grads.wrt(x).is_none());
    }

    /// Same graph executed twice gives bit-identical values and gradients,
    /// with the parallel conv kernels in play.
    #[test]
    fn tape_replay_is_bit_deterministic() {
        let run = || -> (Vec<u64>, Vec<u64>, Vec<u64>) {
            let mut tape = Tape::<f32>::new();
            let input = randn(&[2, 4, 4, 4, 2], 20);
            let input32 = Tensor::from_vec(
                &input.shape,
                input.data.iter().map(|&v| v as f32).collect(),
            )
            .unwrap();
            let w = randn(&[3, 3, 3, 2, 4], 21);
            let w32 =
                Tensor::from_vec(&w.shape, w.data.iter().map(|&v| v as f32).collect()).unwrap();
            let x = tape.leaf(input32, false);
            let wv = tape.leaf(w32, true);
            let bias = tape.leaf(Tensor::zeros(&[4]), true);
            let conv = tape.conv3d(x, wv, bias, (1, 1, 1)).unwrap();
            let act = tape.relu(conv);
            let pooled = tape.maxpool3d(act).unwrap();
            let probs = tape.softmax_channels(pooled).unwrap();
            let coeffs32 = Tensor::<f32>::filled(&tape.value(probs).shape.clone(), 0.137);
            let out = tape.dot_const(probs, &coeffs32).unwrap();
            let grads = tape.backward(out).unwrap();
            (
                tape.value(probs).data.iter().map(|v| v.to_bits() as u64).collect(),
                grads.wrt(wv).unwrap().iter().map(|v| v.to_bits() as u64).collect(),
                grads.wrt(bias).unwrap().iter().map(|v| v.to_bits() as u64).collect(),
            )
        };
        assert_eq!(run(), run());
    }
}

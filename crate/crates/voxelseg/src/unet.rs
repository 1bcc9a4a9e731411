//! Standard 3D U-Net assembled from the tape operations.
//!
//! Encoder levels double the channel width and halve the spatial extent;
//! the decoder mirrors them with transposed convolutions and skip
//! concatenations; a 1-cubed convolution plus channel softmax forms the
//! head. Each block is Conv -> ReLU -> BN.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ChannelStats, Scalar, Tape, Tensor, Var};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub base_filters: usize,
    pub num_levels: usize,
    pub convs_per_block: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            in_channels: 1,
            num_classes: 4,
            base_filters: 32,
            num_levels: 5,
            convs_per_block: 2,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.base_filters == 0
            || self.num_levels == 0
            || self.convs_per_block == 0
        {
            return Err(Error::Config("network extents must all be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "softmax head needs at least 2 classes, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Channel width per level, doubling with depth.
    pub fn widths(&self) -> Vec<usize> {
        (0..self.num_levels).map(|l| self.base_filters << l).collect()
    }

    /// Factor every input spatial extent must divide by.
    pub fn spatial_divisor(&self) -> usize {
        1 << (self.num_levels - 1)
    }

    fn check_spatial(&self, shape: (usize, usize, usize)) -> Result<()> {
        let d = self.spatial_divisor();
        if shape.0 % d != 0 || shape.1 % d != 0 || shape.2 % d != 0 {
            return Err(Error::IndivisibleShape { shape, divisor: d });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<F> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnParams<F> {
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
    pub running_mean: Tensor<F>,
    pub running_var: Tensor<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block<F> {
    pub conv: ConvParams<F>,
    pub bn: BnParams<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLevel<F> {
    /// Transposed-conv weights `[2, 2, 2, c_out, c_in]`.
    pub up: Tensor<F>,
    pub blocks: Vec<Block<F>>,
}

/// All parameters of one network, keyed by a stable naming scheme:
/// `enc{L}.block{i}.conv.weight`, `enc{L}.block{i}.bn.gamma`,
/// `dec{L}.up.weight`, `head.bias`, and so on. Decoder levels are stored in
/// execution order (deepest target level first); their names carry the
/// target level index.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<F> {
    pub config: UNetConfig,
    pub encoder: Vec<Vec<Block<F>>>,
    pub decoder: Vec<DecoderLevel<F>>,
    pub head: ConvParams<F>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    RunningStat,
}

fn block_channels(config: &UNetConfig) -> Vec<Vec<(usize, usize)>> {
    // (c_in, c_out) per encoder block per level
    let widths = config.widths();
    let mut enc = Vec::new();
    let mut prev = config.in_channels;
    for &w in &widths {
        let mut level = Vec::new();
        for _ in 0..config.convs_per_block {
            level.push((prev, w));
            prev = w;
        }
        enc.push(level);
    }
    enc
}

fn decoder_channels(config: &UNetConfig) -> Vec<(usize, usize, Vec<(usize, usize)>)> {
    // (target_level, c_in_below, blocks) in execution order
    let widths = config.widths();
    let mut out = Vec::new();
    let mut below = *widths.last().expect("at least one level");
    for l in (0..config.num_levels.saturating_sub(1)).rev() {
        let w = widths[l];
        let mut blocks = Vec::new();
        let mut prev = 2 * w; // concat(skip, up)
        for _ in 0..config.convs_per_block {
            blocks.push((prev, w));
            prev = w;
        }
        out.push((l, below, blocks));
        below = w;
    }
    out
}

fn he_conv<F: Scalar>(shape: &[usize], fan_in: usize, rng: &mut SeededRng) -> Tensor<F> {
    let std = (2.0 / fan_in as f64).sqrt();
    let data = (0..shape.iter().product())
        .map(|_| F::from_f64(std * rng.standard_normal()))
        .collect();
    Tensor::from_vec(shape, data).expect("counted")
}

fn fresh_block<F: Scalar>(c_in: usize, c_out: usize, rng: &mut SeededRng) -> Block<F> {
    Block {
        conv: ConvParams {
            weight: he_conv(&[3, 3, 3, c_in, c_out], 27 * c_in, rng),
            bias: Tensor::zeros(&[c_out]),
        },
        bn: BnParams {
            gamma: Tensor::filled(&[c_out], F::one()),
            beta: Tensor::zeros(&[c_out]),
            running_mean: Tensor::zeros(&[c_out]),
            running_var: Tensor::filled(&[c_out], F::one()),
        },
    }
}

fn zero_block<F: Scalar>(c_in: usize, c_out: usize) -> Block<F> {
    Block {
        conv: ConvParams {
            weight: Tensor::zeros(&[3, 3, 3, c_in, c_out]),
            bias: Tensor::zeros(&[c_out]),
        },
        bn: BnParams {
            gamma: Tensor::filled(&[c_out], F::one()),
            beta: Tensor::zeros(&[c_out]),
            running_mean: Tensor::zeros(&[c_out]),
            running_var: Tensor::filled(&[c_out], F::one()),
        },
    }
}

/// Initialize a network: conv weights scaled-normal with std
/// sqrt(2 / fan_in), biases zero, BN at identity with running stats (0, 1).
/// Draws happen in canonical parameter order from the given stream alone.
pub fn build<F: Scalar>(config: &UNetConfig, rng: &mut SeededRng) -> Result<Model<F>> {
    config.validate()?;
    let encoder = block_channels(config)
        .into_iter()
        .map(|level| level.into_iter().map(|(ci, co)| fresh_block(ci, co, rng)).collect())
        .collect();
    let decoder = decoder_channels(config)
        .into_iter()
        .map(|(l, below, blocks)| {
            let w = config.base_filters << l;
            DecoderLevel {
                up: he_conv(&[2, 2, 2, w, below], below, rng),
                blocks: blocks.into_iter().map(|(ci, co)| fresh_block(ci, co, rng)).collect(),
            }
        })
        .collect();
    let w0 = config.base_filters;
    let head = ConvParams {
        weight: he_conv(&[1, 1, 1, w0, config.num_classes], w0, rng),
        bias: Tensor::zeros(&[config.num_classes]),
    };
    Ok(Model {
        config: config.clone(),
        encoder,
        decoder,
        head,
    })
}

/// Same structure as [`build`] with deterministic placeholder values;
/// checkpoint loading overwrites every tensor.
pub fn scaffold<F: Scalar>(config: &UNetConfig) -> Result<Model<F>> {
    config.validate()?;
    let encoder = block_channels(config)
        .into_iter()
        .map(|level| level.into_iter().map(|(ci, co)| zero_block(ci, co)).collect())
        .collect();
    let decoder = decoder_channels(config)
        .into_iter()
        .map(|(l, below, blocks)| {
            let w = config.base_filters << l;
            DecoderLevel {
                up: Tensor::zeros(&[2, 2, 2, w, below]),
                blocks: blocks.into_iter().map(|(ci, co)| zero_block(ci, co)).collect(),
            }
        })
        .collect();
    let w0 = config.base_filters;
    let head = ConvParams {
        weight: Tensor::zeros(&[1, 1, 1, w0, config.num_classes]),
        bias: Tensor::zeros(&[config.num_classes]),
    };
    Ok(Model {
        config: config.clone(),
        encoder,
        decoder,
        head,
    })
}

fn block_entries<'a, F>(prefix: String, b: &'a Block<F>) -> Vec<(String, ParamKind, &'a Tensor<F>)> {
    use ParamKind::*;
    vec![
        (format!("{prefix}.conv.weight"), Trainable, &b.conv.weight),
        (format!("{prefix}.conv.bias"), Trainable, &b.conv.bias),
        (format!("{prefix}.bn.gamma"), Trainable, &b.bn.gamma),
        (format!("{prefix}.bn.beta"), Trainable, &b.bn.beta),
        (format!("{prefix}.bn.running_mean"), RunningStat, &b.bn.running_mean),
        (format!("{prefix}.bn.running_var"), RunningStat, &b.bn.running_var),
    ]
}

fn block_entries_mut<'a, F>(
    prefix: String,
    b: &'a mut Block<F>,
) -> Vec<(String, ParamKind, &'a mut Tensor<F>)> {
    use ParamKind::*;
    vec![
        (format!("{prefix}.conv.weight"), Trainable, &mut b.conv.weight),
        (format!("{prefix}.conv.bias"), Trainable, &mut b.conv.bias),
        (format!("{prefix}.bn.gamma"), Trainable, &mut b.bn.gamma),
        (format!("{prefix}.bn.beta"), Trainable, &mut b.bn.beta),
        (format!("{prefix}.bn.running_mean"), RunningStat, &mut b.bn.running_mean),
        (format!("{prefix}.bn.running_var"), RunningStat, &mut b.bn.running_var),
    ]
}

impl<F: Scalar> Model<F> {
    /// Every persisted tensor in canonical order: encoder levels ascending,
    /// decoder in execution order, head last.
    pub fn visit(&self) -> Vec<(String, ParamKind, &Tensor<F>)> {
        let mut out = Vec::new();
        for (l, level) in self.encoder.iter().enumerate() {
            for (i, b) in level.iter().enumerate() {
                out.extend(block_entries(format!("enc{l}.block{i}"), b));
            }
        }
        let n = self.config.num_levels;
        for (j, dec) in self.decoder.iter().enumerate() {
            let l = n - 2 - j;
            out.push((format!("dec{l}.up.weight"), ParamKind::Trainable, &dec.up));
            for (i, b) in dec.blocks.iter().enumerate() {
                out.extend(block_entries(format!("dec{l}.block{i}"), b));
            }
        }
        out.push(("head.weight".into(), ParamKind::Trainable, &self.head.weight));
        out.push(("head.bias".into(), ParamKind::Trainable, &self.head.bias));
        out
    }

    pub fn visit_mut(&mut self) -> Vec<(String, ParamKind, &mut Tensor<F>)> {
        let mut out = Vec::new();
        for (l, level) in self.encoder.iter_mut().enumerate() {
            for (i, b) in level.iter_mut().enumerate() {
                out.extend(block_entries_mut(format!("enc{l}.block{i}"), b));
            }
        }
        let n = self.config.num_levels;
        for (j, dec) in self.decoder.iter_mut().enumerate() {
            let l = n - 2 - j;
            out.push((format!("dec{l}.up.weight"), ParamKind::Trainable, &mut dec.up));
            for (i, b) in dec.blocks.iter_mut().enumerate() {
                out.extend(block_entries_mut(format!("dec{l}.block{i}"), b));
            }
        }
        out.push(("head.weight".into(), ParamKind::Trainable, &mut self.head.weight));
        out.push(("head.bias".into(), ParamKind::Trainable, &mut self.head.bias));
        out
    }

    /// BN blocks in forward execution order; the order batch statistics are
    /// reported in by [`forward`].
    pub fn bn_blocks_mut(&mut self) -> Vec<&mut BnParams<F>> {
        let mut out = Vec::new();
        for level in self.encoder.iter_mut() {
            for b in level.iter_mut() {
                out.push(&mut b.bn);
            }
        }
        for dec in self.decoder.iter_mut() {
            for b in dec.blocks.iter_mut() {
                out.push(&mut b.bn);
            }
        }
        out
    }

    /// Total element count over all persisted tensors, running stats
    /// included; equals the checkpoint payload element total.
    pub fn param_elements(&self) -> usize {
        self.visit().iter().map(|(_, _, t)| t.numel()).sum()
    }
}

/// Element count of one cubic convolution with bias.
pub fn conv_param_count(k: usize, c_in: usize, c_out: usize) -> usize {
    k * k * k * c_in * c_out + c_out
}

/// Persisted element total for a configuration, without building a model.
pub fn param_count(config: &UNetConfig) -> usize {
    let mut total = 0;
    for level in block_channels(config) {
        for (ci, co) in level {
            total += conv_param_count(3, ci, co) + 4 * co;
        }
    }
    for (l, below, blocks) in decoder_channels(config) {
        let w = config.base_filters << l;
        total += 8 * w * below;
        for (ci, co) in blocks {
            total += conv_param_count(3, ci, co) + 4 * co;
        }
    }
    total + conv_param_count(1, config.base_filters, config.num_classes)
}

/// Symbolic per-layer output shapes `(x, y, z, channels)`.
pub struct ShapeTable {
    pub rows: Vec<(String, (usize, usize, usize, usize))>,
}

impl ShapeTable {
    pub fn bottleneck(&self) -> (usize, usize, usize) {
        let (_, (x, y, z, _)) = self
            .rows
            .iter()
            .find(|(name, _)| name == "bottleneck")
            .expect("every table has a bottleneck row");
        (*x, *y, *z)
    }
}

pub fn shape_inference(config: &UNetConfig, input: (usize, usize, usize)) -> Result<ShapeTable> {
    config.validate()?;
    config.check_spatial(input)?;
    let widths = config.widths();
    let mut rows = Vec::new();
    rows.push(("input".into(), (input.0, input.1, input.2, config.in_channels)));
    let mut s = input;
    for (l, &w) in widths.iter().enumerate() {
        for i in 0..config.convs_per_block {
            rows.push((format!("enc{l}.block{i}"), (s.0, s.1, s.2, w)));
        }
        if l + 1 < config.num_levels {
            s = (s.0 / 2, s.1 / 2, s.2 / 2);
            rows.push((format!("enc{l}.pool"), (s.0, s.1, s.2, w)));
        }
    }
    rows.push(("bottleneck".into(), (s.0, s.1, s.2, *widths.last().expect("nonempty"))));
    for (l, _, blocks) in decoder_channels(config) {
        s = (s.0 * 2, s.1 * 2, s.2 * 2);
        let w = widths[l];
        rows.push((format!("dec{l}.up"), (s.0, s.1, s.2, w)));
        rows.push((format!("dec{l}.concat"), (s.0, s.1, s.2, 2 * w)));
        for (i, &(_, co)) in blocks.iter().enumerate() {
            rows.push((format!("dec{l}.block{i}"), (s.0, s.1, s.2, co)));
        }
    }
    rows.push(("head".into(), (s.0, s.1, s.2, config.num_classes)));
    Ok(ShapeTable { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Outcome of one recorded forward pass.
pub struct ForwardPass {
    /// Per-voxel class probabilities, shape = input spatial shape x classes.
    pub probs: Var,
    /// Trainable parameters as tape leaves, canonical order.
    pub params: Vec<(String, Var)>,
    /// Batch statistics per BN block in execution order; train mode only.
    pub batch_stats: Vec<ChannelStats>,
}

const BN_EPS: f64 = 1e-5;

/// Record the full network onto `tape` starting from `input` (already a
/// tape leaf). Train mode uses batch statistics in BN and reports them;
/// infer mode uses the stored running statistics.
pub fn forward<F: Scalar>(
    model: &Model<F>,
    tape: &mut Tape<F>,
    input: Var,
    mode: Mode,
) -> Result<ForwardPass> {
    let (_, nx, ny, nz, ci) = tape.value(input).dims5()?;
    if ci != model.config.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "input has {ci} channels, network expects {}",
            model.config.in_channels
        )));
    }
    model.config.check_spatial((nx, ny, nz))?;

    let train = mode == Mode::Train;
    let mut params = Vec::new();
    let mut batch_stats = Vec::new();

    let apply_block = |tape: &mut Tape<F>,
                           x: Var,
                           prefix: &str,
                           b: &Block<F>,
                           params: &mut Vec<(String, Var)>,
                           batch_stats: &mut Vec<ChannelStats>|
     -> Result<Var> {
        let w = tape.leaf(b.conv.weight.clone(), train);
        let bias = tape.leaf(b.conv.bias.clone(), train);
        params.push((format!("{prefix}.conv.weight"), w));
        params.push((format!("{prefix}.conv.bias"), bias));
        let conv = tape.conv3d(x, w, bias, (1, 1, 1))?;
        let act = tape.relu(conv);
        let gamma = tape.leaf(b.bn.gamma.clone(), train);
        let beta = tape.leaf(b.bn.beta.clone(), train);
        params.push((format!("{prefix}.bn.gamma"), gamma));
        params.push((format!("{prefix}.bn.beta"), beta));
        if train {
            let (out, stats) = tape.batchnorm_train(act, gamma, beta, BN_EPS)?;
            batch_stats.push(stats);
            Ok(out)
        } else {
            let rm: Vec<f64> = b.bn.running_mean.data.iter().map(|&v| Scalar::to_f64(v)).collect();
            let rv: Vec<f64> = b.bn.running_var.data.iter().map(|&v| Scalar::to_f64(v)).collect();
            tape.batchnorm_infer(act, gamma, beta, &rm, &rv, BN_EPS)
        }
    };

    let mut x = input;
    let mut skips = Vec::new();
    for (l, level) in model.encoder.iter().enumerate() {
        for (i, b) in level.iter().enumerate() {
            x = apply_block(tape, x, &format!("enc{l}.block{i}"), b, &mut params, &mut batch_stats)?;
        }
        if l + 1 < model.config.num_levels {
            skips.push(x);
            x = tape.maxpool3d(x)?;
        }
    }

    let n = model.config.num_levels;
    for (j, dec) in model.decoder.iter().enumerate() {
        let l = n - 2 - j;
        let up_w = tape.leaf(dec.up.clone(), train);
        params.push((format!("dec{l}.up.weight"), up_w));
        let up = tape.conv_transpose3d(x, up_w)?;
        let skip = skips.pop().expect("one skip per decoder level");
        x = tape.concat_channels(skip, up)?;
        for (i, b) in dec.blocks.iter().enumerate() {
            x = apply_block(tape, x, &format!("dec{l}.block{i}"), b, &mut params, &mut batch_stats)?;
        }
    }

    let head_w = tape.leaf(model.head.weight.clone(), train);
    let head_b = tape.leaf(model.head.bias.clone(), train);
    params.push(("head.weight".into(), head_w));
    params.push(("head.bias".into(), head_b));
    let logits = tape.conv3d(x, head_w, head_b, (1, 1, 1))?;
    let probs = tape.softmax_channels(logits)?;

    Ok(ForwardPass {
        probs,
        params,
        batch_stats,
    })
}

/// Fold freshly observed batch statistics into the running averages:
/// `running = (1 - momentum) * running + momentum * batch`.
pub fn update_running_stats<F: Scalar>(
    model: &mut Model<F>,
    stats: &[ChannelStats],
    momentum: f64,
) {
    let blocks = model.bn_blocks_mut();
    assert_eq!(blocks.len(), stats.len(), "one statistic set per BN block");
    for (bn, st) in blocks.into_iter().zip(stats) {
        for (r, &m) in bn.running_mean.data.iter_mut().zip(&st.mean) {
            *r = F::from_f64((1.0 - momentum) * Scalar::to_f64(*r) + momentum * m);
        }
        for (r, &v) in bn.running_var.data.iter_mut().zip(&st.var) {
            *r = F::from_f64((1.0 - momentum) * Scalar::to_f64(*r) + momentum * v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_config() -> UNetConfig {
        UNetConfig {
            base_filters: 4,
            num_levels: 3,
            ..UNetConfig::default()
        }
    }

    #[test]
    fn filter_ladders_double_per_level() {
        assert_eq!(UNetConfig::default().widths(), vec![32, 64, 128, 256, 512]);
        assert_eq!(desk_config().widths(), vec![4, 8, 16]);
    }

    #[test]
    fn shape_inference_hits_known_bottlenecks() {
        let t = shape_inference(&UNetConfig::default(), (160, 160, 80)).unwrap();
        assert_eq!(t.bottleneck(), (10, 10, 5));

        let one = UNetConfig {
            num_levels: 1,
            base_filters: 4,
            ..UNetConfig::default()
        };
        let t = shape_inference(&one, (7, 9, 3)).unwrap();
        assert_eq!(t.bottleneck(), (7, 9, 3));

        assert!(matches!(
            shape_inference(&UNetConfig::default(), (30, 30, 30)),
            Err(Error::IndivisibleShape { divisor: 16, .. })
        ));
    }

    #[test]
    fn clinical_scale_head_shape_without_allocation() {
        let t = shape_inference(&UNetConfig::default(), (160, 160, 80)).unwrap();
        let (_, head) = t.rows.last().unwrap();
        assert_eq!(*head, (160, 160, 80, 4));
    }

    #[test]
    fn single_conv_parameter_arithmetic() {
        assert_eq!(conv_param_count(3, 1, 4), 112);
    }

    #[test]
    fn param_count_matches_built_model_and_checkpoint_total() {
        let cfg = desk_config();
        let mut rng = SeededRng::from_seed(1);
        let model: Model<f32> = build(&cfg, &mut rng).unwrap();
        assert_eq!(param_count(&cfg), model.param_elements());
    }

    #[test]
    fn doubling_base_filters_roughly_quadruples_parameters() {
        let small = param_count(&desk_config());
        let big = param_count(&UNetConfig {
            base_filters: 8,
            ..desk_config()
        });
        let ratio = big as f64 / small as f64;
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn same_seed_builds_identical_models() {
        let cfg = desk_config();
        let a: Model<f32> = build(&cfg, &mut SeededRng::from_seed(9)).unwrap();
        let b: Model<f32> = build(&cfg, &mut SeededRng::from_seed(9)).unwrap();
        for ((na, _, ta), (nb, _, tb)) in a.visit().iter().zip(b.visit().iter()) {
            assert_eq!(na, nb);
            let ba: Vec<u32> = ta.data.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = tb.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ba, bb, "{na}");
        }
    }

    fn rand_input(shape: &[usize], seed: u64) -> Tensor<f32> {
        let mut r = SeededRng::from_seed(seed);
        let data = (0..shape.iter().product())
            .map(|_| r.standard_normal() as f32)
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn forward_preserves_spatial_shape_and_normalizes() {
        let cfg = desk_config();
        let model: Model<f32> = build(&cfg, &mut SeededRng::from_seed(2)).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(rand_input(&[1, 32, 32, 16, 1], 3), false);
        let pass = forward(&model, &mut tape, x, Mode::Infer).unwrap();
        let out = tape.value(pass.probs);
        assert_eq!(out.shape, vec![1, 32, 32, 16, 4]);
        for vox in out.data.chunks_exact(4) {
            let s: f32 = vox.iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
            assert!(vox.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn forward_accepts_every_divisible_shape() {
        let cfg = UNetConfig {
            base_filters: 2,
            num_levels: 3,
            ..UNetConfig::default()
        };
        let model: Model<f32> = build(&cfg, &mut SeededRng::from_seed(4)).unwrap();
        let mut r = SeededRng::from_seed(5);
        for _ in 0..4 {
            let shape = (
                4 * (1 + r.below(3)),
                4 * (1 + r.below(3)),
                4 * (1 + r.below(3)),
            );
            let mut tape = Tape::new();
            let x = tape.leaf(rand_input(&[1, shape.0, shape.1, shape.2, 1], 6), false);
            let pass = forward(&model, &mut tape, x, Mode::Infer).unwrap();
            assert_eq!(
                tape.value(pass.probs).shape,
                vec![1, shape.0, shape.1, shape.2, 4]
            );
        }

        let mut tape = Tape::new();
        let x = tape.leaf(rand_input(&[1, 6, 8, 8, 1], 7), false);
        assert!(matches!(
            forward(&model, &mut tape, x, Mode::Infer),
            Err(Error::IndivisibleShape { divisor: 4, .. })
        ));
    }

    #[test]
    fn gradient_reaches_every_trainable_parameter() {
        let cfg = UNetConfig {
            base_filters: 2,
            num_levels: 2,
            ..UNetConfig::default()
        };
        let model: Model<f32> = build(&cfg, &mut SeededRng::from_seed(8)).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(rand_input(&[1, 4, 4, 4, 1], 9), false);
        let pass = forward(&model, &mut tape, x, Mode::Train).unwrap();

        // Random one-hot target, summed loss.
        let mut r = SeededRng::from_seed(10);
        let mut onehot = Tensor::<f32>::zeros(&[1, 4, 4, 4, 4]);
        for vox in onehot.data.chunks_exact_mut(4) {
            vox[r.below(4)] = 1.0;
        }
        let y = tape.leaf(onehot, false);
        let tv = tape.tversky_loss(pass.probs, y, 0.5, 0.5, 1e-5).unwrap();
        let ce = tape.cce_loss(pass.probs, y, 1e-7).unwrap();
        let total = tape.add(tv, ce).unwrap();
        let grads = tape.backward(total).unwrap();

        for (name, var) in &pass.params {
            let g = grads
                .wrt(*var)
                .unwrap_or_else(|| panic!("no gradient for {name}"));
            let norm: f64 = g.iter().map(|&v| (v as f64) * (v as f64)).sum();
            assert!(norm > 0.0, "zero gradient norm at {name}");
        }
    }

    #[test]
    fn infer_forward_is_batch_independent() {
        let cfg = desk_config();
        let mut model: Model<f32> = build(&cfg, &mut SeededRng::from_seed(11)).unwrap();
        // Make running stats nontrivial so infer mode actually uses them.
        for bn in model.bn_blocks_mut() {
            for (i, v) in bn.running_mean.data.iter_mut().enumerate() {
                *v = 0.01 * i as f32;
            }
            for (i, v) in bn.running_var.data.iter_mut().enumerate() {
                *v = 1.0 + 0.05 * i as f32;
            }
        }
        let a = rand_input(&[1, 8, 8, 8, 1], 12);
        let b = rand_input(&[1, 8, 8, 8, 1], 13);

        let mut tape = Tape::new();
        let mut stacked = Tensor::<f32>::zeros(&[2, 8, 8, 8, 1]);
        stacked.data[..512].copy_from_slice(&a.data);
        stacked.data[512..].copy_from_slice(&b.data);
        let x2 = tape.leaf(stacked, false);
        let both = forward(&model, &mut tape, x2, Mode::Infer).unwrap();
        let batch_first: Vec<u32> = tape.value(both.probs).data[..512 * 4]
            .iter()
            .map(|v| v.to_bits())
            .collect();

        let mut tape = Tape::new();
        let x1 = tape.leaf(a, false);
        let solo = forward(&model, &mut tape, x1, Mode::Infer).unwrap();
        let alone: Vec<u32> = tape.value(solo.probs).data.iter().map(|v| v.to_bits()).collect();
        assert_eq!(batch_first, alone);
    }

    #[test]
    fn running_stats_update_follows_the_momentum_rule() {
        let cfg = UNetConfig {
            base_filters: 2,
            num_levels: 1,
            convs_per_block: 1,
            ..UNetConfig::default()
        };
        let mut model: Model<f32> = build(&cfg, &mut SeededRng::from_seed(14)).unwrap();
        let stats = vec![ChannelStats {
            mean: vec![1.0, 2.0],
            var: vec![4.0, 9.0],
        }];
        update_running_stats(&mut model, &stats, 0.1);
        let bn = &model.encoder[0][0].bn;
        assert!((bn.running_mean.data[0] - 0.1).abs() < 1e-6);
        assert!((bn.running_mean.data[1] - 0.2).abs() < 1e-6);
        assert!((bn.running_var.data[0] - (0.9 + 0.4)).abs() < 1e-6);
        assert!((bn.running_var.data[1] - (0.9 + 0.9)).abs() < 1e-6);
    }
}

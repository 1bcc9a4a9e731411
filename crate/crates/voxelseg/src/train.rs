//! Patchwise training loop: sampled batches, combined Tversky plus
//! cross-entropy loss, Adam with a plateau schedule and early stopping.
//!
//! All randomness is derived from the caller's stream by (purpose, epoch,
//! batch) position, so two runs with the same seed walk identical batch
//! sequences regardless of timing.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::nn::{Scalar, Tape, Tensor};
use crate::optim::{Adam, EarlyStop, PlateauSchedule};
use crate::patch::{training_batch, PatchGridConfig};
use crate::rng::SeededRng;
use crate::unet::{forward, update_running_stats, Mode, Model};
use crate::volume::Sample;

const TRAIN_DRAWS: u64 = 1;
const VAL_DRAWS: u64 = 2;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Tversky false-negative weight.
    pub alpha: f64,
    /// Tversky false-positive weight.
    pub beta: f64,
    pub tversky_smooth: f64,
    pub loss_prob_floor: f64,
    pub initial_lr: f64,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub min_lr: f64,
    pub es_patience: usize,
    pub max_epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.5,
            beta: 0.5,
            tversky_smooth: 1e-5,
            loss_prob_floor: 1e-7,
            initial_lr: 1e-3,
            lr_factor: 0.1,
            lr_patience: 15,
            min_lr: 1e-5,
            es_patience: 100,
            max_epochs: 1000,
            batches_per_epoch: 150,
            batch_size: 2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            checkpoint_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(Error::Config(format!(
                "lr_factor must lie in (0, 1), got {}",
                self.lr_factor
            )));
        }
        if self.min_lr > self.initial_lr {
            return Err(Error::Config(format!(
                "min_lr {} exceeds initial_lr {}",
                self.min_lr, self.initial_lr
            )));
        }
        if self.initial_lr <= 0.0 {
            return Err(Error::Config("initial_lr must be positive".into()));
        }
        if self.lr_patience == 0 || self.es_patience == 0 {
            return Err(Error::Config("patience values must be at least 1".into()));
        }
        if self.batch_size == 0 || self.batches_per_epoch == 0 {
            return Err(Error::Config("batch extents must be positive".into()));
        }
        if !(self.alpha.is_finite() && self.beta.is_finite() && self.alpha >= 0.0 && self.beta >= 0.0)
        {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitLogRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate in effect while the epoch ran.
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitLog {
    pub rows: Vec<FitLogRow>,
}

impl FitLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr,seconds\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.3}\n",
                r.epoch, r.train_loss, r.val_loss, r.lr, r.seconds
            ));
        }
        out
    }
}

/// One optimization step worth of work: batch assembly, forward, loss,
/// backward, Adam update, running-stat refresh. Returns the batch loss.
fn train_step(
    model: &mut Model<f32>,
    adam: &mut Adam,
    samples: &[Sample],
    patch_cfg: &PatchGridConfig,
    aug: &AugmentConfig,
    cfg: &TrainConfig,
    rng: &SeededRng,
) -> Result<f64> {
    let batch = training_batch(samples, patch_cfg, aug, rng)?;
    let (px, py, pz) = batch.patch;
    let b = batch.batch_size;

    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(&[b, px, py, pz, 1], batch.images)?, false);
    let y = tape.leaf(
        Tensor::from_vec(&[b, px, py, pz, batch.num_classes], batch.onehot)?,
        false,
    );
    let pass = forward(model, &mut tape, x, Mode::Train)?;
    let tversky = tape.tversky_loss(pass.probs, y, cfg.alpha, cfg.beta, cfg.tversky_smooth)?;
    let cce = tape.cce_loss(pass.probs, y, cfg.loss_prob_floor)?;
    let total = tape.add(tversky, cce)?;
    let loss = Scalar::to_f64(tape.value(total).data[0]);
    if !loss.is_finite() {
        return Err(Error::NonFinite("batch loss".into()));
    }
    let grads = tape.backward(total)?;

    // Canonical orders agree between the pass and the model walk.
    let zero_fill: Vec<Option<Vec<f32>>> = pass
        .params
        .iter()
        .map(|(_, v)| match grads.wrt(*v) {
            Some(_) => None,
            None => Some(vec![0.0; tape.value(*v).numel()]),
        })
        .collect();
    let mut targets = model.visit_mut();
    let mut items: Vec<(&mut [f32], &[f32])> = Vec::new();
    let mut pass_it = pass.params.iter().zip(&zero_fill);
    for (name, kind, tensor) in targets.iter_mut() {
        if *kind != crate::unet::ParamKind::Trainable {
            continue;
        }
        let ((pname, var), fill) = pass_it.next().expect("one pass leaf per trainable");
        assert_eq!(name, pname, "parameter walks diverged");
        let grad: &[f32] = match grads.wrt(*var) {
            Some(g) => g,
            None => fill.as_deref().expect("zero fill present when grad absent"),
        };
        items.push((tensor.data.as_mut_slice(), grad));
    }
    adam.step(&mut items)?;
    update_running_stats(model, &pass.batch_stats, BN_MOMENTUM);
    Ok(loss)
}

/// Combined loss of one batch under inference-mode forward.
fn eval_loss(
    model: &Model<f32>,
    samples: &[Sample],
    patch_cfg: &PatchGridConfig,
    aug: &AugmentConfig,
    cfg: &TrainConfig,
    rng: &SeededRng,
) -> Result<f64> {
    let batch = training_batch(samples, patch_cfg, aug, rng)?;
    let (px, py, pz) = batch.patch;
    let b = batch.batch_size;

    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(&[b, px, py, pz, 1], batch.images)?, false);
    let y = tape.leaf(
        Tensor::from_vec(&[b, px, py, pz, batch.num_classes], batch.onehot)?,
        false,
    );
    let pass = forward(model, &mut tape, x, Mode::Infer)?;
    let tversky = tape.tversky_loss(pass.probs, y, cfg.alpha, cfg.beta, cfg.tversky_smooth)?;
    let cce = tape.cce_loss(pass.probs, y, cfg.loss_prob_floor)?;
    let total = tape.add(tversky, cce)?;
    Ok(Scalar::to_f64(tape.value(total).data[0]))
}

/// Run the full fitting schedule. The checkpoint hook fires every
/// `checkpoint_every` epochs with `final_call = false` and once more when
/// training stops. Scheduling (plateau drops and early stopping) watches
/// the training loss.
pub fn fit(
    model: &mut Model<f32>,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    patch_cfg: &PatchGridConfig,
    aug: &AugmentConfig,
    rng: &SeededRng,
    mut on_checkpoint: impl FnMut(&Model<f32>, usize, bool) -> Result<()>,
) -> Result<FitLog> {
    cfg.validate()?;
    patch_cfg.validate()?;
    if cfg.batch_size != patch_cfg.batch_size {
        return Err(Error::Config(format!(
            "training batch size {} disagrees with patch batch size {}",
            cfg.batch_size, patch_cfg.batch_size
        )));
    }

    let mut adam = Adam::new(cfg.initial_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut plateau = PlateauSchedule::new(cfg.lr_factor, cfg.lr_patience, cfg.min_lr);
    let mut early = EarlyStop::new(cfg.es_patience);
    let mut log = FitLog::default();

    if cfg.max_epochs == 0 {
        on_checkpoint(model, 0, true)?;
        return Ok(log);
    }

    let val_batches = (cfg.batches_per_epoch / 10).max(1);
    let mut last_epoch = 0;
    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let lr_in_effect = adam.lr();

        let mut sum = 0.0;
        for b in 0..cfg.batches_per_epoch {
            let stream = rng.derive(&[TRAIN_DRAWS, epoch as u64, b as u64]);
            sum += train_step(model, &mut adam, train, patch_cfg, aug, cfg, &stream).map_err(
                |e| match e {
                    Error::NonFinite(what) => {
                        Error::NonFinite(format!("{what} at epoch {epoch} batch {b}"))
                    }
                    other => other,
                },
            )?;
        }
        let train_loss = sum / cfg.batches_per_epoch as f64;

        let val_loss = if val.is_empty() {
            f64::NAN
        } else {
            let mut vsum = 0.0;
            for i in 0..val_batches {
                let stream = rng.derive(&[VAL_DRAWS, epoch as u64, i as u64]);
                vsum += eval_loss(model, val, patch_cfg, aug, cfg, &stream)?;
            }
            vsum / val_batches as f64
        };

        log.rows.push(FitLogRow {
            epoch,
            train_loss,
            val_loss,
            lr: lr_in_effect,
            seconds: started.elapsed().as_secs_f64(),
        });

        let next_lr = plateau.observe(train_loss, adam.lr());
        if next_lr != adam.lr() {
            adam.set_lr(next_lr);
        }
        last_epoch = epoch;
        if epoch % cfg.checkpoint_every == 0 && epoch != cfg.max_epochs {
            on_checkpoint(model, epoch, false)?;
        }
        if early.observe(train_loss) {
            break;
        }
    }
    on_checkpoint(model, last_epoch, true)?;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unet::{build, UNetConfig};
    use crate::volume::{ImageVolume, IntensityKind, LabelVolume, Sample};

    fn toy_samples(n: usize) -> Vec<Sample> {
        // Left half bright and labeled class 1, right half dark class 0.
        (0..n)
            .map(|i| {
                let shape = (8, 8, 8);
                let mut vox = vec![-1.0f32; 512];
                let mut lab = vec![0u8; 512];
                for z in 0..8 {
                    for y in 0..8 {
                        for x in 0..4 {
                            let idx = x + 8 * (y + 8 * z);
                            vox[idx] = 1.0 + 0.01 * i as f32;
                            lab[idx] = 1;
                        }
                    }
                }
                Sample {
                    id: format!("toy{i}"),
                    image: ImageVolume::new(shape, (1.0, 1.0, 1.0), vox, IntensityKind::ZScored)
                        .unwrap(),
                    labels: Some(LabelVolume::new(shape, lab, 2).unwrap()),
                }
            })
            .collect()
    }

    fn toy_train_config() -> (TrainConfig, PatchGridConfig, UNetConfig) {
        let train = TrainConfig {
            max_epochs: 4,
            batches_per_epoch: 3,
            batch_size: 2,
            checkpoint_every: 2,
            ..TrainConfig::default()
        };
        let patch = PatchGridConfig {
            patch_shape: (8, 8, 8),
            overlap: (4, 4, 4),
            batch_size: 2,
        };
        let unet = UNetConfig {
            num_classes: 2,
            base_filters: 2,
            num_levels: 2,
            ..UNetConfig::default()
        };
        (train, patch, unet)
    }

    #[test]
    fn loss_decreases_on_separable_toy_data() {
        let samples = toy_samples(3);
        let (mut cfg, patch, unet) = toy_train_config();
        cfg.max_epochs = 6;
        let mut model = build::<f32>(&unet, &mut SeededRng::from_seed(30)).unwrap();
        let log = fit(
            &mut model,
            &samples,
            &samples,
            &cfg,
            &patch,
            &AugmentConfig::identity(),
            &SeededRng::from_seed(31),
            |_, _, _| Ok(()),
        )
        .unwrap();
        assert_eq!(log.rows.len(), 6);
        let first = log.rows.first().unwrap().train_loss;
        let last = log.rows.last().unwrap().train_loss;
        assert!(last < first, "loss went {first} -> {last}");
        assert!(log.rows.iter().all(|r| r.val_loss.is_finite()));
    }

    #[test]
    fn same_seed_fits_identically() {
        let samples = toy_samples(2);
        let (cfg, patch, unet) = toy_train_config();
        let run = || {
            let mut model = build::<f32>(&unet, &mut SeededRng::from_seed(40)).unwrap();
            let log = fit(
                &mut model,
                &samples,
                &samples,
                &cfg,
                &patch,
                &AugmentConfig::identity(),
                &SeededRng::from_seed(41),
                |_, _, _| Ok(()),
            )
            .unwrap();
            let bits: Vec<u32> = model
                .visit()
                .iter()
                .flat_map(|(_, _, t)| t.data.iter().map(|v| v.to_bits()))
                .collect();
            (log, bits)
        };
        let (la, pa) = run();
        let (lb, pb) = run();
        assert_eq!(pa, pb);
        for (ra, rb) in la.rows.iter().zip(&lb.rows) {
            assert_eq!(ra.epoch, rb.epoch);
            assert_eq!(ra.train_loss.to_bits(), rb.train_loss.to_bits());
            assert_eq!(ra.val_loss.to_bits(), rb.val_loss.to_bits());
            assert_eq!(ra.lr.to_bits(), rb.lr.to_bits());
        }
    }

    #[test]
    fn checkpoint_hook_sees_cadence_and_final_call() {
        let samples = toy_samples(2);
        let (cfg, patch, unet) = toy_train_config();
        let mut model = build::<f32>(&unet, &mut SeededRng::from_seed(50)).unwrap();
        let mut calls = Vec::new();
        fit(
            &mut model,
            &samples,
            &[],
            &cfg,
            &patch,
            &AugmentConfig::identity(),
            &SeededRng::from_seed(51),
            |_, epoch, final_call| {
                calls.push((epoch, final_call));
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(calls, vec![(2, false), (4, true)]);
    }

    #[test]
    fn empty_validation_set_logs_nan() {
        let samples = toy_samples(2);
        let (cfg, patch, unet) = toy_train_config();
        let mut model = build::<f32>(&unet, &mut SeededRng::from_seed(60)).unwrap();
        let log = fit(
            &mut model,
            &samples,
            &[],
            &cfg,
            &patch,
            &AugmentConfig::identity(),
            &SeededRng::from_seed(61),
            |_, _, _| Ok(()),
        )
        .unwrap();
        assert!(log.rows.iter().all(|r| r.val_loss.is_nan()));
    }

    #[test]
    fn zero_epochs_returns_initial_model_and_empty_log() {
        let samples = toy_samples(1);
        let (mut cfg, patch, unet) = toy_train_config();
        cfg.max_epochs = 0;
        let mut model = build::<f32>(&unet, &mut SeededRng::from_seed(70)).unwrap();
        let reference = model.clone();
        let mut finals = Vec::new();
        let log = fit(
            &mut model,
            &samples,
            &[],
            &cfg,
            &patch,
            &AugmentConfig::identity(),
            &SeededRng::from_seed(71),
            |_, epoch, final_call| {
                finals.push((epoch, final_call));
                Ok(())
            },
        )
        .unwrap();
        assert!(log.rows.is_empty());
        assert_eq!(finals, vec![(0, true)]);
        assert_eq!(model, reference);
    }

    #[test]
    fn log_reports_the_lr_in_effect_from_the_start() {
        let samples = toy_samples(2);
        let (mut cfg, patch, unet) = toy_train_config();
        cfg.max_epochs = 2;
        let mut model = build::<f32>(&unet, &mut SeededRng::from_seed(80)).unwrap();
        let log = fit(
            &mut model,
            &samples,
            &[],
            &cfg,
            &patch,
            &AugmentConfig::identity(),
            &SeededRng::from_seed(81),
            |_, _, _| Ok(()),
        )
        .unwrap();
        assert_eq!(log.rows[0].lr, 1e-3);
        let csv = log.to_csv();
        assert!(csv.starts_with("epoch,train_loss,val_loss,lr,seconds\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn mismatched_batch_sizes_are_rejected() {
        let samples = toy_samples(1);
        let (mut cfg, patch, unet) = toy_train_config();
        cfg.batch_size = 4;
        let mut model = build::<f32>(&unet, &mut SeededRng::from_seed(90)).unwrap();
        let err = fit(
            &mut model,
            &samples,
            &[],
            &cfg,
            &patch,
            &AugmentConfig::identity(),
            &SeededRng::from_seed(91),
            |_, _, _| Ok(()),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}

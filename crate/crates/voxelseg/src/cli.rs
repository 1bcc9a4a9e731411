//! Command bodies behind the binary: synthetic data generation,
//! preprocessing, training, prediction, evaluation, and cross-validation.
//! Each writes its artifacts plus a `config.resolved` copy into the target
//! directory and is byte-deterministic for a fixed seed, timing excepted.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{aggregate, cv_split, evaluate_sample, CvReport, SampleMetrics};
use crate::mvf::{read_mvf, write_mvf};
use crate::nifti::write_nifti;
use crate::nn::{Tape, Tensor};
use crate::overlay::{render_overlay, SliceAxis};
use crate::patch::{
    argmax_labels, crop_back_labels, grid_positions, image_window, pad_to_min, reassemble,
    PatchGridConfig,
};
use crate::phantom::generate;
use crate::preprocess::preprocess_sample;
use crate::rng::SeededRng;
use crate::train::{fit, FitLog};
use crate::unet::{build, forward, Mode, Model};
use crate::volume::{ImageVolume, IntensityKind, LabelVolume, Sample};

const STREAM_SYNTH: u64 = 10;
const STREAM_MODEL: u64 = 11;
const STREAM_FIT: u64 = 12;

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Sample stems in a directory, sorted by id. A sample is any `<id>.json`
/// sidecar with its `<id>.img.raw` voxel file next to it.
pub fn discover_samples(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let stem = path.with_extension("");
        if !stem.with_extension("img.raw").exists() {
            continue;
        }
        let id = stem
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Config(format!("unusable sample name {}", path.display())))?
            .to_string();
        out.push((id, stem));
    }
    out.sort();
    Ok(out)
}

fn load_samples(dir: &Path) -> Result<Vec<Sample>> {
    let found = discover_samples(dir)?;
    if found.is_empty() {
        return Err(Error::Config(format!(
            "no samples found under {}",
            dir.display()
        )));
    }
    found.into_iter().map(|(_, stem)| read_mvf(stem)).collect()
}

/// Generate `n` phantoms into `out_dir`, one image+label pair each.
pub fn cmd_synth(cfg: &PipelineConfig, n: usize, out_dir: &Path) -> Result<Vec<String>> {
    if n == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    ensure_dir(out_dir)?;
    let master = SeededRng::from_seed(cfg.seed);
    let mut ids = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("phantom{i:02}");
        let mut rng = master.derive(&[STREAM_SYNTH, i as u64]);
        let sample = generate(&cfg.phantom, &id, &mut rng)?;
        write_mvf(&sample, out_dir.join(&id))?;
        ids.push(id);
    }
    cfg.write_resolved(out_dir)?;
    Ok(ids)
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    original_shape: (usize, usize, usize),
    resampled_shape: (usize, usize, usize),
    stages: Vec<String>,
}

fn stages_for(kind: IntensityKind) -> Vec<String> {
    let all: &[&str] = match kind {
        IntensityKind::HounsfieldLike => &["clip", "normalize", "zscore", "resample"],
        IntensityKind::Grayscale0to255 => &["zscore", "resample"],
        IntensityKind::ZScored => &["resample"],
    };
    all.iter().map(|s| s.to_string()).collect()
}

/// Preprocess every sample of `in_dir` into `out_dir` and write a manifest
/// of original and resampled shapes.
pub fn cmd_preprocess(cfg: &PipelineConfig, in_dir: &Path, out_dir: &Path) -> Result<()> {
    ensure_dir(out_dir)?;
    let found = discover_samples(in_dir)?;
    if found.is_empty() {
        return Err(Error::Config(format!(
            "no samples found under {}",
            in_dir.display()
        )));
    }
    let mut manifest = Vec::with_capacity(found.len());
    for (id, stem) in found {
        let sample = read_mvf(&stem)?;
        let stages = stages_for(sample.image.intensity_kind);
        let processed = preprocess_sample(&sample, &cfg.preprocess)?;
        manifest.push(ManifestEntry {
            id: id.clone(),
            original_shape: sample.image.shape,
            resampled_shape: processed.image.shape,
            stages,
        });
        write_mvf(&processed, out_dir.join(&id))?;
    }
    let mpath = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
    fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))?;
    cfg.write_resolved(out_dir)
}

fn partition_by_ids<'a>(
    samples: &'a [Sample],
    ids: &[String],
) -> Result<(Vec<&'a Sample>, Vec<&'a Sample>)> {
    let want: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    let have: BTreeSet<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    if let Some(missing) = want.iter().find(|id| !have.contains(*id)) {
        return Err(Error::Config(format!("unknown sample id {missing:?}")));
    }
    let (chosen, rest) = samples
        .iter()
        .partition(|s| want.contains(s.id.as_str()));
    Ok((chosen, rest))
}

fn fit_into_dir(
    cfg: &PipelineConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    model: &mut Model<f32>,
    fit_rng: &SeededRng,
    out_dir: &Path,
) -> Result<FitLog> {
    let log = fit(
        model,
        train_set,
        val_set,
        &cfg.train,
        &cfg.patch,
        &cfg.augment,
        fit_rng,
        |m, epoch, final_call| {
            let name = if final_call {
                "checkpoint_final".to_string()
            } else {
                format!("checkpoint_epoch_{epoch:04}")
            };
            checkpoint::save(m, &out_dir.join(name))
        },
    )?;
    let lpath = out_dir.join("fitlog.csv");
    fs::write(&lpath, log.to_csv()).map_err(|e| Error::io(&lpath, e))?;
    Ok(log)
}

/// Train one model on the cached samples. `train_ids` restricts the
/// training set (default: every sample); `val_ids` picks validation
/// samples out of the remainder.
pub fn cmd_train(
    cfg: &PipelineConfig,
    cache_dir: &Path,
    out_dir: &Path,
    train_ids: Option<&[String]>,
    val_ids: Option<&[String]>,
) -> Result<FitLog> {
    ensure_dir(out_dir)?;
    let samples = load_samples(cache_dir)?;
    let master = SeededRng::from_seed(cfg.seed);

    let val_set: Vec<Sample> = match val_ids {
        Some(ids) => partition_by_ids(&samples, ids)?.0.into_iter().cloned().collect(),
        None => Vec::new(),
    };
    let train_set: Vec<Sample> = match train_ids {
        Some(ids) => partition_by_ids(&samples, ids)?.0.into_iter().cloned().collect(),
        None => {
            let held: BTreeSet<&str> = val_set.iter().map(|s| s.id.as_str()).collect();
            samples
                .iter()
                .filter(|s| !held.contains(s.id.as_str()))
                .cloned()
                .collect()
        }
    };
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }

    let mut model = build::<f32>(&cfg.model, &mut master.derive(&[STREAM_MODEL]))?;
    let log = fit_into_dir(cfg, &train_set, &val_set, &mut model, &master.derive(&[STREAM_FIT]), out_dir)?;
    cfg.write_resolved(out_dir)?;
    Ok(log)
}

/// Segment one sample: pad to the patch extent, slice the overlap grid,
/// run inference per patch, average overlaps, argmax, crop back.
pub fn predict_labels(
    model: &Model<f32>,
    patch_cfg: &PatchGridConfig,
    sample: &Sample,
) -> Result<LabelVolume> {
    let (padded, record) = pad_to_min(sample, patch_cfg.patch_shape);
    let shape = padded.image.shape;
    let origins = grid_positions(shape, patch_cfg.patch_shape, patch_cfg.overlap)?;
    let (px, py, pz) = patch_cfg.patch_shape;
    let classes = model.config.num_classes;

    let mut patches = Vec::with_capacity(origins.len());
    for origin in origins {
        let window = image_window(&padded.image, origin, patch_cfg.patch_shape);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[1, px, py, pz, 1], window)?, false);
        let pass = forward(model, &mut tape, x, Mode::Infer)?;
        patches.push((origin, tape.value(pass.probs).data.clone()));
    }
    let probs = reassemble(&patches, shape, patch_cfg.patch_shape, classes)?;
    let labels = argmax_labels(&probs, shape, classes);
    Ok(crop_back_labels(&labels, &record))
}

fn write_prediction(sample: &Sample, labels: LabelVolume, out_dir: &Path) -> Result<()> {
    let predicted = Sample {
        id: sample.id.clone(),
        image: sample.image.clone(),
        labels: Some(labels),
    };
    write_mvf(&predicted, out_dir.join(&predicted.id))?;
    let labels = predicted.labels.as_ref().expect("just attached");
    let as_image = ImageVolume::new(
        labels.shape,
        predicted.image.spacing,
        labels.voxels.iter().map(|&v| v as f32).collect(),
        IntensityKind::Grayscale0to255,
    )?;
    write_nifti(&as_image, out_dir.join(format!("{}_labels.nii", predicted.id)))
}

/// Predict every requested sample with a saved checkpoint.
pub fn cmd_predict(
    cfg: &PipelineConfig,
    checkpoint_stem: &Path,
    cache_dir: &Path,
    ids: Option<&[String]>,
    out_dir: &Path,
) -> Result<()> {
    ensure_dir(out_dir)?;
    let model: Model<f32> = checkpoint::load(checkpoint_stem)?;
    let samples = load_samples(cache_dir)?;
    let chosen: Vec<&Sample> = match ids {
        Some(ids) => partition_by_ids(&samples, ids)?.0,
        None => samples.iter().collect(),
    };
    for sample in chosen {
        let labels = predict_labels(&model, &cfg.patch, sample)?;
        write_prediction(sample, labels, out_dir)?;
    }
    cfg.write_resolved(out_dir)
}

fn overlay_indices(extent: usize, count: usize) -> Vec<usize> {
    (1..=count).map(|j| extent * j / (count + 1)).collect()
}

fn render_sample_overlays(
    cfg: &PipelineConfig,
    image: &ImageVolume,
    labels: &LabelVolume,
    id: &str,
    dir: &Path,
) -> Result<()> {
    let axis = SliceAxis::parse(&cfg.eval.overlay_axis)?;
    let extent = match axis {
        SliceAxis::X => image.shape.0,
        SliceAxis::Y => image.shape.1,
        SliceAxis::Z => image.shape.2,
    };
    for index in overlay_indices(extent, cfg.eval.overlay_slices) {
        let path = dir.join(format!("{id}_{}{index}.png", axis.letter()));
        render_overlay(image, labels, axis, index, &path)?;
    }
    Ok(())
}

fn metrics_for_pair(pred: &Sample, gt: &Sample) -> Result<SampleMetrics> {
    let pl = pred
        .labels
        .as_ref()
        .ok_or_else(|| Error::Config(format!("prediction {} has no labels", pred.id)))?;
    let gl = gt
        .labels
        .as_ref()
        .ok_or_else(|| Error::Config(format!("ground truth {} has no labels", gt.id)))?;
    evaluate_sample(pl, gl)
}

/// Score predictions against ground truth and render overlays. All
/// samples form one fold of the report.
pub fn cmd_evaluate(
    cfg: &PipelineConfig,
    pred_dir: &Path,
    gt_dir: &Path,
    out_dir: &Path,
) -> Result<CvReport> {
    ensure_dir(out_dir)?;
    let preds = discover_samples(pred_dir)?;
    let gts: Vec<(String, PathBuf)> = discover_samples(gt_dir)?;
    let gt_ids: BTreeSet<&str> = gts.iter().map(|(id, _)| id.as_str()).collect();
    let shared: Vec<&(String, PathBuf)> = preds
        .iter()
        .filter(|(id, _)| gt_ids.contains(id.as_str()))
        .collect();
    if shared.is_empty() {
        return Err(Error::Config(
            "prediction and ground-truth directories share no sample ids".into(),
        ));
    }

    let overlays = out_dir.join("overlays");
    ensure_dir(&overlays)?;
    let mut scored = Vec::with_capacity(shared.len());
    for (id, stem) in shared {
        let pred = read_mvf(stem)?;
        let gt_stem = &gts.iter().find(|(g, _)| g == id).expect("filtered above").1;
        let gt = read_mvf(gt_stem)?;
        scored.push((id.clone(), metrics_for_pair(&pred, &gt)?));
        render_sample_overlays(
            cfg,
            &gt.image,
            pred.labels.as_ref().expect("checked in metrics_for_pair"),
            id,
            &overlays,
        )?;
    }
    let report = aggregate(vec![scored]);
    write_report(&report, out_dir)?;
    cfg.write_resolved(out_dir)?;
    Ok(report)
}

fn write_report(report: &CvReport, dir: &Path) -> Result<()> {
    let cpath = dir.join("report.csv");
    fs::write(&cpath, report.to_csv()).map_err(|e| Error::io(&cpath, e))?;
    let jpath = dir.join("report.json");
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Config(format!("report serialization: {e}")))?;
    fs::write(&jpath, text + "\n").map_err(|e| Error::io(&jpath, e))
}

/// Full k-fold cross-validation: per fold, train on the rest, predict and
/// score the held-out samples, then aggregate.
pub fn cmd_cv(cfg: &PipelineConfig, cache_dir: &Path, k: usize, out_dir: &Path) -> Result<CvReport> {
    ensure_dir(out_dir)?;
    let samples = load_samples(cache_dir)?;
    let n = samples.len();
    if k < 2 || k > n {
        return Err(Error::InvalidFoldCount { k, n });
    }
    let folds = cv_split(n, k, cfg.seed)?;

    let fold_ids: Vec<Vec<String>> = folds
        .iter()
        .map(|fold| fold.iter().map(|&i| samples[i].id.clone()).collect())
        .collect();
    let fpath = out_dir.join("folds.json");
    let text = serde_json::to_string_pretty(&fold_ids)
        .map_err(|e| Error::Config(format!("folds serialization: {e}")))?;
    fs::write(&fpath, text + "\n").map_err(|e| Error::io(&fpath, e))?;

    let master = SeededRng::from_seed(cfg.seed);
    let mut per_fold = Vec::with_capacity(k);
    for (f, fold) in folds.iter().enumerate() {
        let fold_dir = out_dir.join(format!("fold_{}", f + 1));
        ensure_dir(&fold_dir)?;
        let held: BTreeSet<usize> = fold.iter().copied().collect();
        let train_set: Vec<Sample> = samples
            .iter()
            .enumerate()
            .filter(|(i, _)| !held.contains(i))
            .map(|(_, s)| s.clone())
            .collect();
        let val_set: Vec<Sample> = fold.iter().map(|&i| samples[i].clone()).collect();

        let mut model =
            build::<f32>(&cfg.model, &mut master.derive(&[STREAM_MODEL, f as u64]))?;
        fit_into_dir(
            cfg,
            &train_set,
            &val_set,
            &mut model,
            &master.derive(&[STREAM_FIT, f as u64]),
            &fold_dir,
        )?;

        let pred_dir = fold_dir.join("pred");
        ensure_dir(&pred_dir)?;
        let mut scored = Vec::with_capacity(val_set.len());
        for sample in &val_set {
            let labels = predict_labels(&model, &cfg.patch, sample)?;
            let metrics = evaluate_sample(
                &labels,
                sample.labels.as_ref().ok_or_else(|| {
                    Error::Config(format!("sample {} has no labels", sample.id))
                })?,
            )?;
            write_prediction(sample, labels, &pred_dir)?;
            scored.push((sample.id.clone(), metrics));
        }
        per_fold.push(scored);
    }

    let report = aggregate(per_fold);
    write_report(&report, out_dir)?;
    cfg.write_resolved(out_dir)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::PhantomSpec;
    use crate::train::TrainConfig;
    use crate::unet::UNetConfig;

    fn tiny_config(seed: u64) -> PipelineConfig {
        PipelineConfig {
            seed,
            model: UNetConfig {
                base_filters: 2,
                num_levels: 2,
                ..UNetConfig::default()
            },
            patch: PatchGridConfig {
                patch_shape: (16, 16, 8),
                overlap: (8, 8, 4),
                batch_size: 2,
            },
            train: TrainConfig {
                max_epochs: 2,
                batches_per_epoch: 3,
                checkpoint_every: 50,
                ..TrainConfig::default()
            },
            phantom: PhantomSpec {
                shape: (32, 32, 16),
                blob_radius: (1.5, 2.0),
                ..PhantomSpec::default()
            },
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn synth_is_byte_deterministic() {
        let cfg = tiny_config(5);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        cmd_synth(&cfg, 2, a.path()).unwrap();
        cmd_synth(&cfg, 2, b.path()).unwrap();
        for name in ["phantom00.img.raw", "phantom00.lbl.raw", "phantom01.img.raw"] {
            let xa = fs::read(a.path().join(name)).unwrap();
            let xb = fs::read(b.path().join(name)).unwrap();
            assert_eq!(xa, xb, "{name}");
        }
        assert!(a.path().join("config.resolved").exists());
    }

    #[test]
    fn preprocess_writes_manifest_and_is_idempotent() {
        let cfg = tiny_config(6);
        let raw = tempfile::tempdir().unwrap();
        let cache = tempfile::tempdir().unwrap();
        cmd_synth(&cfg, 2, raw.path()).unwrap();
        cmd_preprocess(&cfg, raw.path(), cache.path()).unwrap();
        let first = fs::read(cache.path().join("phantom00.img.raw")).unwrap();
        let manifest = fs::read_to_string(cache.path().join("manifest.json")).unwrap();
        assert!(manifest.contains("\"original_shape\""));
        assert!(manifest.contains("clip"));

        cmd_preprocess(&cfg, raw.path(), cache.path()).unwrap();
        let second = fs::read(cache.path().join("phantom00.img.raw")).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn train_predict_evaluate_round_trip() {
        let cfg = tiny_config(7);
        let raw = tempfile::tempdir().unwrap();
        let cache = tempfile::tempdir().unwrap();
        let run = tempfile::tempdir().unwrap();
        let pred = tempfile::tempdir().unwrap();
        let evald = tempfile::tempdir().unwrap();

        cmd_synth(&cfg, 2, raw.path()).unwrap();
        cmd_preprocess(&cfg, raw.path(), cache.path()).unwrap();
        let log = cmd_train(&cfg, cache.path(), run.path(), None, None).unwrap();
        assert_eq!(log.rows.len(), 2);
        assert!(run.path().join("checkpoint_final.json").exists());
        assert!(run.path().join("fitlog.csv").exists());

        cmd_predict(
            &cfg,
            &run.path().join("checkpoint_final"),
            cache.path(),
            None,
            pred.path(),
        )
        .unwrap();
        let predicted = read_mvf(pred.path().join("phantom00")).unwrap();
        let original = read_mvf(cache.path().join("phantom00")).unwrap();
        let labels = predicted.labels.expect("prediction carries labels");
        assert_eq!(labels.shape, original.image.shape);
        assert!(labels.voxels.iter().all(|&v| v < 4));
        assert!(pred.path().join("phantom00_labels.nii").exists());

        let report = cmd_evaluate(&cfg, pred.path(), cache.path(), evald.path()).unwrap();
        assert_eq!(report.folds.len(), 1);
        assert_eq!(report.folds[0].samples.len(), 2);
        let csv = fs::read_to_string(evald.path().join("report.csv")).unwrap();
        assert!(csv.starts_with("fold,lungs_dsc"));
        let z_mid = original.image.shape.2 / 2;
        assert!(evald
            .path()
            .join("overlays")
            .join(format!("phantom00_z{z_mid}.png"))
            .exists());
    }

    #[test]
    fn cv_rejects_single_fold() {
        let cfg = tiny_config(8);
        let raw = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        cmd_synth(&cfg, 2, raw.path()).unwrap();
        assert!(matches!(
            cmd_cv(&cfg, raw.path(), 1, out.path()),
            Err(Error::InvalidFoldCount { k: 1, n: 2 })
        ));
    }

    #[test]
    fn perfect_predictions_score_one() {
        let cfg = tiny_config(9);
        let raw = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        cmd_synth(&cfg, 2, raw.path()).unwrap();
        let report = cmd_evaluate(&cfg, raw.path(), raw.path(), out.path()).unwrap();
        assert_eq!(report.avg.lungs.dsc, 1.0);
        assert_eq!(report.avg.infection.dsc, 1.0);
    }
}

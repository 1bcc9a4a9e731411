//! Whole-pipeline configuration: one TOML file with a section per stage.
//! Missing sections and keys fall back to defaults, so a file only states
//! what it changes. Every command writes the fully resolved configuration
//! into its output directory as `config.resolved`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::patch::PatchGridConfig;
use crate::phantom::PhantomSpec;
use crate::preprocess::PreprocessConfig;
use crate::train::TrainConfig;
use crate::unet::UNetConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Axis overlays are sliced along.
    pub overlay_axis: String,
    /// Evenly spaced overlay slices rendered per sample.
    pub overlay_slices: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            overlay_axis: "z".into(),
            overlay_slices: 1,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        crate::overlay::SliceAxis::parse(&self.overlay_axis)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub raw_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            raw_dir: "data/raw".into(),
            cache_dir: "data/cache".into(),
            out_dir: "runs".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub preprocess: PreprocessConfig,
    pub augment: AugmentConfig,
    pub patch: PatchGridConfig,
    pub model: UNetConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
    pub phantom: PhantomSpec,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.augment.validate()?;
        self.patch.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.patch.batch_size != self.train.batch_size {
            return Err(Error::Config(format!(
                "patch.batch_size {} and train.batch_size {} must agree",
                self.patch.batch_size, self.train.batch_size
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("config serialization: {e}")))
    }

    /// Write the resolved configuration into `dir` so the run is
    /// self-describing.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        let path = dir.join("config.resolved");
        fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates_and_round_trips() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_file_keeps_defaults_elsewhere() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("partial.toml");
        fs::write(
            &path,
            "seed = 7\n\n[model]\nbase_filters = 4\nnum_levels = 3\n",
        )
        .unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.model.base_filters, 4);
        assert_eq!(cfg.model.num_levels, 3);
        assert_eq!(cfg.model.num_classes, 4);
        assert_eq!(cfg.train.initial_lr, 1e-3);
        assert_eq!(cfg.patch.patch_shape, (160, 160, 80));
    }

    #[test]
    fn disagreeing_batch_sizes_fail_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        fs::write(&path, "[train]\nbatch_size = 3\n").unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_axis_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        fs::write(&path, "[eval]\noverlay_axis = \"w\"\n").unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(Error::Config(_))));
    }

    #[test]
    fn resolved_copy_lands_in_the_target_directory() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::default();
        cfg.write_resolved(dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("config.resolved")).unwrap();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}

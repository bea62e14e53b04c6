//! Run configuration: a TOML tree with a validated default for every key.
//!
//! Precedence is command-line flags, then the config file, then defaults.
//! Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::ModelConfig;
use crate::data::AugmentPolicy;
use crate::error::{Error, Result};
use crate::train::OptimConfig;

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";
pub const OUTPUT_DIR_ENV: &str = "QFUSE_OUTPUT_DIR";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Directory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub patch_size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_per_class: 500,
            patch_size: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    /// Share of patients in train+validation; the rest is the test split.
    pub train_fraction: f64,
    /// Share of the training patients held out for validation.
    pub val_fraction: f64,
    pub group_by_patient: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            val_fraction: 0.1,
            group_by_patient: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Dataset root for `source = "directory"`.
    pub path: Option<PathBuf>,
    pub synthetic: SynthConfig,
    pub split: SplitConfig,
    pub augment: AugmentPolicy,
    /// Augmented copies per positive for the offline expansion in `synth`.
    pub positive_copies: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            path: None,
            synthetic: SynthConfig::default(),
            split: SplitConfig::default(),
            augment: AugmentPolicy::default(),
            positive_copies: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    pub output_dir: PathBuf,
    pub threshold: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            epochs: 14,
            batch_size: 16,
            seed: 0,
            threads: 0,
            output_dir: PathBuf::from("runs/qfuse"),
            threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub data: DataConfig,
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optim.validate(false)?;
        self.data.augment.validate()?;
        let s = &self.data.split;
        for (name, v) in [("train_fraction", s.train_fraction), ("val_fraction", s.val_fraction)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("data.split.{name} must lie strictly between 0 and 1, got {v}")));
            }
        }
        if self.run.batch_size == 0 {
            return Err(Error::Config("run.batch_size must be at least 1".into()));
        }
        if !(self.run.threshold > 0.0 && self.run.threshold < 1.0) {
            return Err(Error::Config(format!("run.threshold must lie in (0, 1), got {}", self.run.threshold)));
        }
        match self.data.source {
            DataSource::Synthetic => {
                if self.data.synthetic.n_per_class == 0 {
                    return Err(Error::Config("data.synthetic.n_per_class must be at least 1".into()));
                }
                if self.data.synthetic.patch_size < 16 {
                    return Err(Error::Config("data.synthetic.patch_size must be at least 16".into()));
                }
                if self.model.backbone.in_channels != 1 {
                    return Err(Error::Config(
                        "synthetic data is single-channel; set model.backbone.in_channels = 1".into(),
                    ));
                }
            }
            DataSource::Directory => {
                if self.data.path.is_none() {
                    return Err(Error::Config("data.source = \"directory\" needs data.path".into()));
                }
            }
        }
        if self.run.output_dir.as_os_str().is_empty() {
            return Err(Error::Config("run.output_dir is empty".into()));
        }
        Ok(())
    }

    /// Writes the fully-resolved config into `run.output_dir`.
    pub fn write_resolved(&self) -> Result<PathBuf> {
        let dir = &self.run.output_dir;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RESOLVED_CONFIG_FILE);
        fs::write(&path, self.to_toml_string()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::Ablation;
    use crate::pqc::Entangler;

    #[test]
    fn empty_file_is_the_default() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
        assert_eq!(cfg.run.epochs, 14);
        assert_eq!(cfg.run.batch_size, 16);
        assert_eq!(cfg.model.pqc.n_qubits, 4);
        assert_eq!(cfg.model.pqc.depth, 2);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.model.ablation = Ablation::ClassicalOnly;
        cfg.model.pqc.entangler = Entangler::CzRing;
        cfg.data.path = Some(PathBuf::from("/data/x"));
        cfg.optim.plateau.patience = 5;
        let text = cfg.to_toml_string();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let text = r#"
            [model]
            ablation = "classical-only"
            [model.pqc]
            depth = 3
            [optim]
            lr_backbone = 1e-4
            [run]
            epochs = 2
        "#;
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.model.pqc.depth, 3);
        assert_eq!(cfg.model.pqc.n_qubits, 4);
        assert_eq!(cfg.model.ablation, Ablation::ClassicalOnly);
        assert_eq!(cfg.optim.lr_backbone, 1e-4);
        assert_eq!(cfg.run.epochs, 2);
        assert_eq!(cfg.run.batch_size, 16);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["[run]\nepoch = 3", "[model.pqc]\nqubits = 2", "colour = 1", "[data.augment]\nflip = true"] {
            assert!(matches!(RunConfig::from_toml_str(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let bad = [
            "[data.synthetic]\nn_per_class = 0",
            "[data.split]\ntrain_fraction = 1.0",
            "[run]\nbatch_size = 0",
            "[model.pqc]\nn_qubits = 0",
            "[data]\nsource = \"directory\"",
            "[model.backbone]\nfeature_dim = 7",
        ];
        for text in bad {
            let cfg = RunConfig::from_toml_str(text).unwrap();
            assert!(matches!(cfg.validate(), Err(Error::Config(_)) | Err(Error::Structural(_))), "{text}");
        }
    }

    #[test]
    fn resolved_copy_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.run.output_dir = dir.path().join("out");
        let path = cfg.write_resolved().unwrap();
        assert_eq!(RunConfig::from_file(&path).unwrap(), cfg);
    }
}

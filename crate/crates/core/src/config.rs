//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::rng::SplitMix64;
use crate::train::{AdamConfig, LossConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub checkpoint_every: usize,
    pub jobs: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            checkpoint_every: t.checkpoint_every,
            jobs: t.jobs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub beam_width: usize,
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_width: 5,
            max_len: 80,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub folds: usize,
    /// Folds actually trained by the ablation drivers (the first ones).
    pub eval_folds: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: "data/train.jsonl".into(),
            checkpoint: "model.ckpt".into(),
            log: "train_log.jsonl".into(),
            folds: 10,
            eval_folds: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub optim: AdamConfig,
    pub loss: LossConfig,
    pub train: TrainSection,
    pub decode: DecodeConfig,
    pub data: DataConfig,
}

/// Independent seed streams derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    Init = 1,
    Shuffle = 2,
    Folds = 3,
}

impl RunConfig {
    /// Small dimensions that train in minutes on one CPU core.
    pub fn desk() -> Self {
        Self {
            model: ModelConfig {
                encoder: EncoderConfig {
                    image_side: 16,
                    patch_size: 4,
                    d_model: 16,
                    heads: 4,
                    gpsa_blocks: 1,
                    ffn_dim: 32,
                    feature_dim: 32,
                },
                embedding_dim: 32,
                hidden: 64,
                label_hidden: 32,
                ..ModelConfig::default()
            },
            train: TrainSection {
                batch_size: 4,
                ..TrainSection::default()
            },
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse and validate; relative data paths resolve against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.dataset, &mut cfg.data.checkpoint, &mut cfg.data.log] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Every problem, one per line, in a single error.
    pub fn validate(&self) -> Result<()> {
        let mut errs = self.model.validate();
        errs.extend(self.train_config().validate());
        if let Err(e) = self.loss.validate() {
            errs.push(e.message());
        }
        if self.decode.beam_width == 0 {
            errs.push("beam_width must be positive".into());
        }
        if self.decode.max_len == 0 {
            errs.push("max_len must be positive".into());
        }
        if self.data.folds == 0 {
            errs.push("folds must be positive".into());
        }
        if self.data.eval_folds == 0 || self.data.eval_folds > self.data.folds {
            errs.push(format!("eval_folds must lie in 1..={}", self.data.folds));
        }
        errs.dedup();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::config(errs.join("\n")))
        }
    }

    pub fn seed_for(&self, stream: SeedStream) -> u64 {
        SplitMix64::derive(self.seed, stream as u64).next_u64()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            checkpoint_every: self.train.checkpoint_every,
            loss: self.loss,
            adam: self.optim,
            jobs: self.train.jobs,
            seed: self.seed_for(SeedStream::Shuffle),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_reference_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!(c.loss.lambda, 0.5);
        assert_eq!(c.loss.alpha, 5.0);
        assert_eq!(c.optim.lr, 0.0004);
        assert_eq!(c.decode.beam_width, 5);
        assert_eq!(c.data.folds, 10);
        assert_eq!(c.model.hidden, 512);
        assert_eq!(c.model.encoder.feature_dim, 512);
        c.validate().unwrap();
        RunConfig::desk().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = RunConfig::desk();
        assert_eq!(RunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
        let partial = RunConfig::from_toml("seed = 9\n[loss]\nalpha = 3.0\n").unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.loss.alpha, 3.0);
        assert_eq!(partial.loss.lambda, 0.5);
    }

    #[test]
    fn all_problems_listed_together() {
        let text = "[loss]\nalpha = 12.0\n[decode]\nbeam_width = 0\n[model.encoder]\nheads = 3\n[model.modality]\nimage = false\ncorpus = false\nfactor = false\n";
        match RunConfig::from_toml(text) {
            Err(Error::Config(m)) => {
                for needle in ["alpha", "beam_width", "head count", "no input modality"] {
                    assert!(m.contains(needle), "{needle} missing from {m}");
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn typos_are_rejected() {
        assert!(matches!(RunConfig::from_toml("[optim]\nlearning_rate = 0.1\n"), Err(Error::Config(_))));
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[data]\ndataset = \"d.jsonl\"\n").unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.data.dataset, dir.path().join("d.jsonl"));
    }

    #[test]
    fn seed_streams_differ() {
        let c = RunConfig::default();
        assert_ne!(c.seed_for(SeedStream::Init), c.seed_for(SeedStream::Shuffle));
        assert_ne!(c.seed_for(SeedStream::Folds), c.seed_for(SeedStream::Shuffle));
    }
}

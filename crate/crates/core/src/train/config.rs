use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AblationMode, ModelConfig};
use crate::nn::Activation;
use crate::train::metrics::MetricMode;

/// Everything a training run depends on. Read from a TOML file; omitted keys
/// take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: usize,
    pub embedding: usize,
    pub heads: usize,
    pub speaker_layers: usize,
    pub interaction_layers: usize,
    pub activation: Activation,
    pub per_type_projection: bool,
    pub ablation: AblationMode,

    pub l2: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub epochs: usize,
    pub seed: u64,
    pub min_freq: usize,

    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    /// Share of training dialogs kept for training when no dev file is given;
    /// the rest becomes the dev set.
    pub train_fraction: f64,
    pub output_dir: Option<PathBuf>,

    /// Aggregation for dialog-act scores. Sentiment is always macro.
    pub metric: MetricMode,
    pub sentiment_excluded_labels: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            hidden: m.hidden,
            embedding: m.embedding,
            heads: m.heads,
            speaker_layers: m.speaker_layers,
            interaction_layers: m.interaction_layers,
            activation: m.activation,
            per_type_projection: m.per_type_projection,
            ablation: m.ablation,
            l2: 1e-8,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            epochs: 100,
            seed: 0,
            min_freq: 1,
            train_path: None,
            dev_path: None,
            test_path: None,
            train_fraction: 0.8,
            output_dir: None,
            metric: MetricMode::Macro,
            sentiment_excluded_labels: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            embedding: self.embedding,
            heads: self.heads,
            speaker_layers: self.speaker_layers,
            interaction_layers: self.interaction_layers,
            activation: self.activation,
            per_type_projection: self.per_type_projection,
            ablation: self.ablation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if !(self.l2 >= 0.0) {
            return fail("l2 must be non-negative");
        }
        if !(self.learning_rate >= 0.0) {
            return fail("learning rate must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.adam_eps > 0.0)
        {
            return fail("invalid Adam hyperparameters");
        }
        if !(self.clip_norm >= 0.0) {
            return fail("clip_norm must be non-negative");
        }
        if self.dev_path.is_none() && !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return fail("train_fraction must be in (0, 1) when no dev file is given");
        }
        if self.min_freq == 0 {
            return fail("min_freq must be at least 1");
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads a config file. Relative data and output paths are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml_str(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.train_path,
            &mut cfg.dev_path,
            &mut cfg.test_path,
            &mut cfg.output_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reported_settings() {
        let c = TrainConfig::default();
        assert_eq!(c.hidden, 256);
        assert_eq!(c.l2, 1e-8);
        assert_eq!((c.beta1, c.beta2, c.adam_eps), (0.9, 0.999, 1e-8));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let c = TrainConfig::from_toml_str(
            "hidden = 32\nheads = 2\nablation = \"no_cross_task\"\nmetric = \"weighted\"\n",
        )
        .unwrap();
        assert_eq!(c.hidden, 32);
        assert_eq!(c.ablation, AblationMode::NoCrossTask);
        assert_eq!(c.metric, MetricMode::Weighted);
        assert_eq!(c.learning_rate, 1e-3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            TrainConfig::from_toml_str("hiden = 3"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn invalid_values_fail_validation() {
        let mut c = TrainConfig {
            heads: 3,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        c.heads = 4;
        c.epochs = 0;
        assert!(c.validate().is_err());
        c.epochs = 1;
        c.l2 = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = TrainConfig {
            dev_path: Some("dev.jsonl".into()),
            sentiment_excluded_labels: vec!["neutral".into()],
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "train_path = \"data/train.jsonl\"\n").unwrap();
        let c = TrainConfig::load(&path).unwrap();
        assert_eq!(c.train_path.unwrap(), dir.path().join("data/train.jsonl"));
    }
}

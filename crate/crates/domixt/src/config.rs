//! Flat sectioned configuration file (TOML) with presets and per-field
//! overrides. Unknown keys are rejected so typos fail loudly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schedules::{StopRule, SCHEDULE_NAMES};
use crate::seq2seq::HyperParams;
use crate::subword::BpeMode;
use crate::synthgen::SynthSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Model preset plus optional per-field overrides.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// "desk" or "paper".
    pub preset: String,
    pub src_vocab: Option<usize>,
    pub tgt_vocab: Option<usize>,
    pub embed_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub attn_dim: Option<usize>,
    pub maxout_units: Option<usize>,
    pub lstm_layers: Option<usize>,
    pub dropout_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_len: Option<usize>,
    pub beam_size: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            preset: "desk".to_string(),
            src_vocab: None,
            tgt_vocab: None,
            embed_dim: None,
            hidden_dim: None,
            attn_dim: None,
            maxout_units: None,
            lstm_layers: None,
            dropout_rate: None,
            weight_decay: None,
            batch_size: None,
            max_len: None,
            beam_size: None,
        }
    }
}

impl ModelConfig {
    pub fn hyperparams(&self) -> Result<HyperParams, ConfigError> {
        let mut hp = match self.preset.as_str() {
            "desk" => HyperParams::desk(),
            "paper" => HyperParams::paper(),
            other => {
                return Err(ConfigError::Invalid(format!(
                    "unknown model preset: {other} (expected \"desk\" or \"paper\")"
                )))
            }
        };
        macro_rules! apply {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { hp.$f = v; } )* };
        }
        apply!(
            src_vocab, tgt_vocab, embed_dim, hidden_dim, attn_dim, maxout_units,
            lstm_layers, dropout_rate, weight_decay, batch_size, max_len, beam_size
        );
        Ok(hp)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub patience: usize,
    pub max_epochs: usize,
    /// Seed for one-off data assembly (oversampling, mixture shuffle).
    pub data_seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let stop = StopRule::default();
        TrainingConfig {
            patience: stop.patience,
            max_epochs: stop.max_epochs,
            data_seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn stop_rule(&self) -> StopRule {
        StopRule {
            patience: self.patience,
            max_epochs: self.max_epochs,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BpeConfig {
    pub enabled: bool,
    pub merges: usize,
    pub mode: BpeMode,
}

impl Default for BpeConfig {
    fn default() -> Self {
        BpeConfig {
            enabled: false,
            merges: 200,
            mode: BpeMode::Joint,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schedules: Vec<String>,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schedules: SCHEDULE_NAMES.iter().map(|s| s.to_string()).collect(),
            seeds: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub synth: SynthSpec,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub bpe: BpeConfig,
    pub experiment: ExperimentConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: Config = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.hyperparams()?;
        if self.training.patience == 0 {
            return Err(ConfigError::Invalid("training.patience must be >= 1".into()));
        }
        if self.training.max_epochs == 0 {
            return Err(ConfigError::Invalid("training.max_epochs must be >= 1".into()));
        }
        if self.experiment.seeds.is_empty() {
            return Err(ConfigError::Invalid("experiment.seeds must be nonempty".into()));
        }
        for s in &self.experiment.schedules {
            if !SCHEDULE_NAMES.contains(&s.as_str()) {
                return Err(ConfigError::Invalid(format!("unknown schedule: {s}")));
            }
        }
        self.synth
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.bpe.enabled && self.bpe.merges == 0 {
            return Err(ConfigError::Invalid("bpe.merges must be >= 1".into()));
        }
        Ok(())
    }

    /// Directory layout under an output root.
    pub fn data_dir(out_dir: &Path) -> PathBuf {
        out_dir.join("data")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = Config::default();
        cfg.validate().unwrap();
        let hp = cfg.model.hyperparams().unwrap();
        assert_eq!(hp, HyperParams::desk());
    }

    #[test]
    fn overrides_apply_on_top_of_preset() {
        let cfg: Config = toml::from_str(
            r#"
            [model]
            preset = "desk"
            hidden_dim = 32
            beam_size = 4
            "#,
        )
        .unwrap();
        let hp = cfg.model.hyperparams().unwrap();
        assert_eq!(hp.hidden_dim, 32);
        assert_eq!(hp.beam_size, 4);
        assert_eq!(hp.embed_dim, HyperParams::desk().embed_dim);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = toml::from_str::<Config>(
            r#"
            [model]
            hiden_dim = 32
            "#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("hiden_dim"));
        assert!(toml::from_str::<Config>("[modle]\n").is_err());
    }

    #[test]
    fn bad_values_rejected() {
        let cfg: Config = toml::from_str("[model]\npreset = \"huge\"\n").unwrap();
        assert!(cfg.validate().is_err());
        let cfg: Config = toml::from_str("[training]\npatience = 0\n").unwrap();
        assert!(cfg.validate().is_err());
        let cfg: Config = toml::from_str("[experiment]\nschedules = [\"nope\"]\n").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("desk.toml");
        let cfg = Config::default();
        std::fs::write(&path, toml::to_string_pretty(&cfg).unwrap()).unwrap();
        let loaded = Config::load(&path).unwrap();
        assert_eq!(loaded.experiment.seeds, cfg.experiment.seeds);
    }
}

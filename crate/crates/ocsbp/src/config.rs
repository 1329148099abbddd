//! Run configuration: one flat JSON document.
//!
//! Unknown keys are rejected; missing keys fall back to the named preset
//! (`desk32` by default) and then to hard defaults. The fully-resolved
//! config — every key concrete — is what gets echoed into a run directory.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geco::{GecoState, DEFAULT_GOAL_PER_PIXEL_CHANNEL};
use crate::icsbp::StopPolicy;
use crate::kernels::KernelKind;
use crate::likelihood::DEFAULT_SIGMA_X;
use crate::model::{ModelConfig, ModelError, PriorKind};
use crate::training::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unknown preset {0:?} (expected \"desk32\" or \"paper64\")")]
    UnknownPreset(String),
    #[error("bad stop policy {0:?} (expected \"fixed:K\" or \"mass:TAU,KMAX\")")]
    BadStop(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("config i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad config value: {0}")]
    BadValue(String),
}

/// Parse `fixed:K` or `mass:TAU,KMAX`.
pub fn parse_stop(s: &str) -> Result<StopPolicy, ConfigError> {
    let bad = || ConfigError::BadStop(s.to_string());
    match s.split_once(':') {
        Some(("fixed", k)) => {
            let k = k.parse().map_err(|_| bad())?;
            Ok(StopPolicy::FixedK { k })
        }
        Some(("mass", rest)) => {
            let (tau, kmax) = rest.split_once(',').ok_or_else(bad)?;
            Ok(StopPolicy::MassThreshold {
                tau_pixels: tau.parse().map_err(|_| bad())?,
                k_max: kmax.parse().map_err(|_| bad())?,
            })
        }
        _ => Err(bad()),
    }
}

pub fn render_stop(policy: &StopPolicy) -> String {
    match policy {
        StopPolicy::FixedK { k } => format!("fixed:{k}"),
        StopPolicy::MassThreshold { tau_pixels, k_max } => format!("mass:{tau_pixels},{k_max}"),
    }
}

/// Fully-resolved run configuration. The serialized form is the on-disk
/// contract: a single flat JSON object with exactly these keys.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub image_height: usize,
    pub image_width: usize,
    pub channels: usize,
    pub k_train: usize,
    pub latent_dim: usize,
    pub backbone_filters: Vec<usize>,
    pub d_e: usize,
    pub d_f: usize,
    pub head_filters: usize,
    pub head_hidden: usize,
    pub decoder_filters: usize,
    pub prior_hidden: usize,
    pub kernel: KernelKind,
    pub prior: PriorKind,
    pub goal_per_pixel_channel: f64,
    pub sigma_x: f64,
    pub use_mask_loss: bool,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub log_every: u64,
    pub save_every: u64,
    pub stop: String,
    /// Element type of the training arithmetic: `f32` (fast) or `f64`
    /// (bit-reproducible logs, gradient verification).
    pub precision: String,
    pub seed: u64,
    pub data: Option<String>,
    pub out: Option<String>,
}

/// The user-facing document: every key optional, unknown keys rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PartialRunConfig {
    preset: Option<String>,
    image_height: Option<usize>,
    image_width: Option<usize>,
    channels: Option<usize>,
    k_train: Option<usize>,
    latent_dim: Option<usize>,
    backbone_filters: Option<Vec<usize>>,
    d_e: Option<usize>,
    d_f: Option<usize>,
    head_filters: Option<usize>,
    head_hidden: Option<usize>,
    decoder_filters: Option<usize>,
    prior_hidden: Option<usize>,
    kernel: Option<KernelKind>,
    prior: Option<PriorKind>,
    goal_per_pixel_channel: Option<f64>,
    sigma_x: Option<f64>,
    use_mask_loss: Option<bool>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    steps: Option<u64>,
    log_every: Option<u64>,
    save_every: Option<u64>,
    stop: Option<String>,
    precision: Option<String>,
    seed: Option<u64>,
    data: Option<String>,
    out: Option<String>,
}

impl RunConfig {
    /// Hard defaults for a preset name.
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let model = match name {
            "desk32" => ModelConfig::desk32(),
            "paper64" => ModelConfig::paper64(),
            other => return Err(ConfigError::UnknownPreset(other.to_string())),
        };
        let train = TrainConfig::default();
        Ok(Self {
            preset: name.to_string(),
            image_height: model.image_size.0,
            image_width: model.image_size.1,
            channels: model.channels,
            k_train: model.k_train,
            latent_dim: model.latent_dim,
            backbone_filters: model.backbone_filters.clone(),
            d_e: model.d_e,
            d_f: model.d_f,
            head_filters: model.head_filters,
            head_hidden: model.head_hidden,
            decoder_filters: model.decoder_filters,
            prior_hidden: model.prior_hidden,
            kernel: model.kernel,
            prior: model.prior,
            goal_per_pixel_channel: DEFAULT_GOAL_PER_PIXEL_CHANNEL,
            sigma_x: DEFAULT_SIGMA_X,
            use_mask_loss: false,
            lr: train.lr,
            batch_size: train.batch_size,
            steps: if name == "paper64" { 500_000 } else { train.steps },
            log_every: train.log_every,
            save_every: train.save_every,
            stop: format!("fixed:{}", model.k_train),
            precision: "f32".to_string(),
            seed: train.seed,
            data: None,
            out: None,
        })
    }

    /// Parse a user document, resolve against its preset, validate.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let p: PartialRunConfig = serde_json::from_str(text)?;
        let preset = p.preset.clone().unwrap_or_else(|| "desk32".to_string());
        let mut cfg = Self::preset(&preset)?;
        macro_rules! take {
            ($($field:ident),+) => {
                $(if let Some(v) = p.$field { cfg.$field = v; })+
            };
        }
        take!(
            image_height,
            image_width,
            channels,
            k_train,
            latent_dim,
            backbone_filters,
            d_e,
            d_f,
            head_filters,
            head_hidden,
            decoder_filters,
            prior_hidden,
            kernel,
            prior,
            goal_per_pixel_channel,
            sigma_x,
            use_mask_loss,
            lr,
            batch_size,
            steps,
            log_every,
            save_every,
            precision,
            seed
        );
        match p.stop {
            Some(v) => cfg.stop = v,
            // the default stop policy follows an overridden k_train
            None => cfg.stop = format!("fixed:{}", cfg.k_train),
        }
        if p.data.is_some() {
            cfg.data = p.data;
        }
        if p.out.is_some() {
            cfg.out = p.out;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Echo the resolved document (pretty JSON, trailing newline).
    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model_config().validate()?;
        parse_stop(&self.stop)?;
        if self.precision != "f32" && self.precision != "f64" {
            return Err(ConfigError::BadValue(format!(
                "precision {:?} (expected \"f32\" or \"f64\")",
                self.precision
            )));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::BadValue("batch_size must be at least 1".into()));
        }
        if self.steps == 0 || self.log_every == 0 || self.save_every == 0 {
            return Err(ConfigError::BadValue(
                "steps, log_every and save_every must be at least 1".into(),
            ));
        }
        if !(self.sigma_x > 0.0) || !(self.goal_per_pixel_channel > 0.0) || !(self.lr > 0.0) {
            return Err(ConfigError::BadValue(
                "sigma_x, goal_per_pixel_channel and lr must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            image_size: (self.image_height, self.image_width),
            channels: self.channels,
            k_train: self.k_train,
            latent_dim: self.latent_dim,
            backbone_filters: self.backbone_filters.clone(),
            d_e: self.d_e,
            d_f: self.d_f,
            head_filters: self.head_filters,
            head_hidden: self.head_hidden,
            decoder_filters: self.decoder_filters,
            prior_hidden: self.prior_hidden,
            kernel: self.kernel,
            prior: self.prior,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            lr: self.lr,
            log_every: self.log_every,
            save_every: self.save_every,
            sigma_x: self.sigma_x,
            use_mask_loss: self.use_mask_loss,
            seed: self.seed,
        }
    }

    pub fn stop_policy(&self) -> Result<StopPolicy, ConfigError> {
        parse_stop(&self.stop)
    }

    pub fn geco_state(&self) -> GecoState {
        GecoState::new(
            self.goal_per_pixel_channel,
            (self.image_height, self.image_width),
            self.channels,
            self.use_mask_loss,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_resolves_to_the_desk_preset() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg.preset, "desk32");
        assert_eq!((cfg.image_height, cfg.image_width), (32, 32));
        assert_eq!(cfg.k_train, 5);
        assert_eq!(cfg.stop, "fixed:5");
        assert_eq!(cfg, RunConfig::preset("desk32").unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json(r#"{"learning_rate": 0.1}"#).unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)), "{err}");
        assert!(err.to_string().contains("learning_rate"));
    }

    #[test]
    fn explicit_keys_override_the_preset() {
        let cfg =
            RunConfig::from_json(r#"{"preset": "paper64", "k_train": 9, "lr": 0.001}"#).unwrap();
        assert_eq!((cfg.image_height, cfg.image_width), (64, 64));
        assert_eq!(cfg.k_train, 9);
        assert_eq!(cfg.lr, 0.001);
        assert_eq!(cfg.steps, 500_000);
    }

    #[test]
    fn resolved_config_round_trips() {
        let dir = std::env::temp_dir().join("ocsbp_config_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("config.json");
        let cfg = RunConfig::from_json(r#"{"seed": 9, "stop": "mass:20,11"}"#).unwrap();
        cfg.save(&path).unwrap();
        let back = RunConfig::load(&path).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(
            back.stop_policy().unwrap(),
            StopPolicy::MassThreshold {
                tau_pixels: 20.0,
                k_max: 11
            }
        );
    }

    #[test]
    fn stop_strings_parse_and_render() {
        for s in ["fixed:5", "mass:20,11", "mass:3.5,4"] {
            let p = parse_stop(s).unwrap();
            assert_eq!(render_stop(&p), s);
        }
        for s in ["fixed", "fixed:x", "mass:20", "mass:a,b", "steps:3"] {
            assert!(matches!(parse_stop(s), Err(ConfigError::BadStop(_))), "{s}");
        }
    }

    #[test]
    fn bad_values_are_rejected_with_context() {
        for doc in [
            r#"{"preset": "huge"}"#,
            r#"{"batch_size": 0}"#,
            r#"{"steps": 0}"#,
            r#"{"sigma_x": -1.0}"#,
            r#"{"stop": "fixed"}"#,
            r#"{"image_height": 17}"#,
            r#"{"precision": "f16"}"#,
        ] {
            assert!(RunConfig::from_json(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn parse_errors_carry_line_and_column() {
        let err = RunConfig::from_json("{\n  \"seed\": oops\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
    }
}

//! Run configuration: one flat JSON object whose keys mirror the
//! hyperparameter table row for row (snake_case), plus the architecture
//! selector, norm placement, paths, and seed. Unknown keys are rejected;
//! the defaults reproduce the standard recipe exactly. CLI `--key value`
//! overrides are applied onto the JSON before deserialization, so they are
//! validated the same way file keys are.

use crate::dsp::MfccConfig;
use crate::error::{Error, Result};
use crate::model::mixer::MixerConfig;
use crate::model::{ModelConfig, NormPlacement};
use crate::train::{Schedule, SpecAugment, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    KwMlp,
    Mixer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    AdamW,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulingKind {
    Cosine,
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub arch: Arch,
    pub norm_placement: NormPlacement,
    pub seed: u64,

    // Training
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub warmup_epochs: usize,
    pub scheduling: SchedulingKind,
    /// Per-epoch factor when `scheduling = exponential`.
    pub exp_decay_factor: f64,

    // Regularization
    pub label_smoothing: f64,
    pub weight_decay: f64,
    pub block_survival_prob: f64,

    // Audio processing
    pub sampling_rate: u32,
    pub window_length_ms: u32,
    pub hop_length_ms: u32,
    pub n_mfcc: usize,

    // Augmentation
    pub num_time_masks: usize,
    pub time_mask_width: usize,
    pub num_freq_masks: usize,
    pub freq_mask_width: usize,

    // Model
    pub num_blocks: usize,
    pub input_mfcc_shape: [usize; 2],
    pub patch_size: [usize; 2],
    pub dim: usize,
    pub dim_proj: usize,
    pub num_classes: usize,

    // Mixer variant
    pub mixer_depth: usize,
    pub mixer_dim: usize,
    pub mixer_token_hidden: usize,
    pub mixer_channel_hidden: usize,

    // Paths and run controls
    pub data_root: Option<String>,
    pub cache_dir: Option<String>,
    pub out_dir: Option<String>,
    /// Deterministic train-split subset size (entire split when absent).
    pub train_subset: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            arch: Arch::KwMlp,
            norm_placement: NormPlacement::Post,
            seed: 0,
            epochs: 140,
            batch_size: 256,
            optimizer: OptimizerKind::AdamW,
            learning_rate: 0.001,
            warmup_epochs: 10,
            scheduling: SchedulingKind::Cosine,
            exp_decay_factor: 0.985,
            label_smoothing: 0.1,
            weight_decay: 0.1,
            block_survival_prob: 0.9,
            sampling_rate: 16_000,
            window_length_ms: 30,
            hop_length_ms: 10,
            n_mfcc: 40,
            num_time_masks: 2,
            time_mask_width: 25,
            num_freq_masks: 2,
            freq_mask_width: 7,
            num_blocks: 12,
            input_mfcc_shape: [40, 98],
            patch_size: [40, 1],
            dim: 64,
            dim_proj: 256,
            num_classes: 35,
            mixer_depth: 8,
            mixer_dim: 256,
            mixer_token_hidden: 128,
            mixer_channel_hidden: 1024,
            data_root: None,
            cache_dir: None,
            out_dir: None,
            train_subset: None,
        }
    }
}

impl RunConfig {
    /// Parse a config file (all keys optional, unknown keys rejected) and
    /// apply `--key value` overrides on top.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
        let mut value: serde_json::Value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::config(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::config(format!("bad json in {}: {e}", p.display())))?
            }
            None => serde_json::Value::Object(Default::default()),
        };
        let obj = value
            .as_object_mut()
            .ok_or_else(|| Error::config("config file must hold a JSON object"))?;
        for (key, raw) in overrides {
            let key = key.replace('-', "_");
            let parsed = serde_json::from_str::<serde_json::Value>(raw)
                .unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
            obj.insert(key, parsed);
        }
        let cfg: RunConfig = serde_json::from_value(value)
            .map_err(|e| Error::config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.mfcc_config().validate()?;
        if self.patch_size != [self.input_mfcc_shape[0], 1] {
            return Err(Error::config(format!(
                "patch_size {:?} unsupported: one full-height column per patch means [{}, 1]",
                self.patch_size, self.input_mfcc_shape[0]
            )));
        }
        if self.n_mfcc != self.input_mfcc_shape[0] {
            return Err(Error::config(format!(
                "n_mfcc {} does not match input_mfcc_shape {:?}",
                self.n_mfcc, self.input_mfcc_shape
            )));
        }
        let mfcc = self.mfcc_config();
        let frames = mfcc.frames_for(self.sampling_rate as usize);
        if frames != self.input_mfcc_shape[1] {
            return Err(Error::config(format!(
                "input_mfcc_shape {:?} inconsistent with audio settings: a 1 s clip yields {frames} frames",
                self.input_mfcc_shape
            )));
        }
        self.train_config().validate()?;
        match self.arch {
            Arch::KwMlp => self.model_config().validate()?,
            Arch::Mixer => self.mixer_config().validate()?,
        }
        Ok(())
    }

    pub fn mfcc_config(&self) -> MfccConfig {
        let window_length = (self.sampling_rate as usize * self.window_length_ms as usize) / 1000;
        let hop_length = (self.sampling_rate as usize * self.hop_length_ms as usize) / 1000;
        MfccConfig {
            window_length,
            hop_length,
            fft_size: window_length.next_power_of_two(),
            n_mels: self.n_mfcc,
            n_mfcc: self.n_mfcc,
            ..MfccConfig::default()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            f_bins: self.input_mfcc_shape[0],
            n_tokens: self.input_mfcc_shape[1],
            dim: self.dim,
            dim_proj: self.dim_proj,
            n_blocks: self.num_blocks,
            n_classes: self.num_classes,
            norm: self.norm_placement,
        }
    }

    pub fn mixer_config(&self) -> MixerConfig {
        MixerConfig {
            f_bins: self.input_mfcc_shape[0],
            n_tokens: self.input_mfcc_shape[1],
            dim: self.mixer_dim,
            token_hidden: self.mixer_token_hidden,
            channel_hidden: self.mixer_channel_hidden,
            n_blocks: self.mixer_depth,
            n_classes: self.num_classes,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            base_lr: self.learning_rate,
            warmup_epochs: self.warmup_epochs,
            schedule: match self.scheduling {
                SchedulingKind::Cosine => Schedule::WarmupCosine,
                SchedulingKind::Exponential => Schedule::Exponential {
                    decay_per_epoch: self.exp_decay_factor,
                },
            },
            // Adam is AdamW with the decay decoupled away entirely.
            weight_decay: match self.optimizer {
                OptimizerKind::AdamW => self.weight_decay as f32,
                OptimizerKind::Adam => 0.0,
            },
            label_smoothing: self.label_smoothing,
            block_survival: self.block_survival_prob,
            augment: SpecAugment {
                time_masks: self.num_time_masks,
                time_mask_max: self.time_mask_width,
                freq_masks: self.num_freq_masks,
                freq_mask_max: self.freq_mask_width,
            },
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_reproduce_the_recipe_table() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.epochs, 140);
        assert_eq!(cfg.batch_size, 256);
        assert_eq!(cfg.optimizer, OptimizerKind::AdamW);
        assert_eq!(cfg.learning_rate, 0.001);
        assert_eq!(cfg.warmup_epochs, 10);
        assert_eq!(cfg.scheduling, SchedulingKind::Cosine);
        assert_eq!(cfg.label_smoothing, 0.1);
        assert_eq!(cfg.weight_decay, 0.1);
        assert_eq!(cfg.block_survival_prob, 0.9);
        assert_eq!(cfg.sampling_rate, 16_000);
        assert_eq!(cfg.window_length_ms, 30);
        assert_eq!(cfg.hop_length_ms, 10);
        assert_eq!(cfg.n_mfcc, 40);
        assert_eq!(cfg.num_time_masks, 2);
        assert_eq!(cfg.time_mask_width, 25);
        assert_eq!(cfg.num_freq_masks, 2);
        assert_eq!(cfg.freq_mask_width, 7);
        assert_eq!(cfg.num_blocks, 12);
        assert_eq!(cfg.input_mfcc_shape, [40, 98]);
        assert_eq!(cfg.patch_size, [40, 1]);
        assert_eq!(cfg.dim, 64);
        assert_eq!(cfg.dim_proj, 256);
        assert_eq!(cfg.num_classes, 35);
        assert_eq!(cfg.mixer_dim, 256);
        assert_eq!(cfg.mixer_token_hidden, 128);
        assert_eq!(cfg.mixer_channel_hidden, 1024);
        cfg.validate().unwrap();
        // Derived audio settings.
        let mfcc = cfg.mfcc_config();
        assert_eq!(mfcc.window_length, 480);
        assert_eq!(mfcc.hop_length, 160);
        assert_eq!(mfcc.fft_size, 512);
    }

    #[test]
    fn round_trip_is_a_fixed_point() {
        let cfg = RunConfig {
            seed: 42,
            data_root: Some("/tmp/data".into()),
            ..RunConfig::default()
        };
        let json = cfg.to_json();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(back.to_json(), json);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"epochs": 5, "optimiser": "adamw"}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("unknown field"), "{err}");
    }

    #[test]
    fn overrides_take_precedence_and_are_typed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"epochs": 30, "seed": 1}"#).unwrap();
        let cfg = RunConfig::load(
            Some(&path),
            &[
                ("epochs".to_string(), "2".to_string()),
                ("arch".to_string(), "\"mixer\"".to_string()),
                ("data-root".to_string(), "/data/sc".to_string()),
            ],
        )
        .unwrap();
        assert_eq!(cfg.epochs, 2);
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.arch, Arch::Mixer);
        assert_eq!(cfg.data_root.as_deref(), Some("/data/sc"));

        let err = RunConfig::load(Some(&path), &[("bogus".to_string(), "1".to_string())]);
        assert!(err.is_err());
    }

    #[test]
    fn bare_string_overrides_parse_for_enums_too() {
        // "--arch mixer" without JSON quotes must also work.
        let cfg = RunConfig::load(None, &[("arch".to_string(), "mixer".to_string())]).unwrap();
        assert_eq!(cfg.arch, Arch::Mixer);
    }

    #[test]
    fn inconsistent_shape_settings_are_rejected() {
        let bad = RunConfig {
            input_mfcc_shape: [40, 100],
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad_patch = RunConfig {
            patch_size: [20, 2],
            ..RunConfig::default()
        };
        assert!(bad_patch.validate().is_err());
    }
}

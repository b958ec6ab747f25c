use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, VmpError};
use crate::losses::LossWeights;
use crate::prior::PriorConfig;
use crate::video::VideoConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Prior,
    Capture,
}

/// Learning-rate schedule over the optimizer steps of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from `lr` at the first step down to 0 after the last.
    Cosine,
}

impl LrSchedule {
    pub fn lr_at(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let frac = step as f64 / total.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub fine_tune: bool,
    pub fine_tune_lr: f64,
    pub fine_tune_epochs: usize,
    pub weights: LossWeights,
    pub prior: PriorConfig,
    pub video: VideoConfig,
    pub seed: u64,
    /// Gaussian input noise for Stage I, in normalized units.
    pub noise_std: f64,
    /// Weight of the auxiliary camera term in Stage II (0 disables it).
    pub camera_weight: f64,
    /// Validate (and consider keep-best) every this many epochs; 0 never.
    pub eval_every: usize,
    /// Write `last.ckpt` every this many epochs; 0 only at the end.
    pub checkpoint_every: usize,
    /// Drop wall-clock time from reports so reruns compare byte-for-byte.
    pub deterministic: bool,
    pub dataset: Option<PathBuf>,
    pub prior_checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: Stage::Prior,
            epochs: 200,
            batch_size: 8,
            lr: 1e-4,
            lr_schedule: LrSchedule::Constant,
            fine_tune: false,
            fine_tune_lr: 1e-5,
            fine_tune_epochs: 5,
            weights: LossWeights::default(),
            prior: PriorConfig::default(),
            video: VideoConfig::default(),
            seed: 0,
            noise_std: 2.0,
            camera_weight: 1.0,
            eval_every: 1,
            checkpoint_every: 1,
            deterministic: false,
            dataset: None,
            prior_checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(VmpError::Invalid("epochs and batch_size must be > 0".into()));
        }
        if !(self.lr > 0.0) || !(self.fine_tune_lr > 0.0) {
            return Err(VmpError::Invalid("learning rates must be > 0".into()));
        }
        if !(self.noise_std >= 0.0) || !(self.camera_weight >= 0.0) {
            return Err(VmpError::Invalid("noise_std and camera_weight must be >= 0".into()));
        }
        if self.stage == Stage::Capture && self.prior_checkpoint.is_none() {
            return Err(VmpError::Invalid("stage capture requires prior_checkpoint".into()));
        }
        self.weights.validate()?;
        self.prior.validate()?;
        if self.stage == Stage::Capture {
            self.video.validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    /// First epoch (0-based) of the fine-tune window, if enabled.
    pub fn fine_tune_start(&self) -> Option<usize> {
        self.fine_tune.then(|| self.epochs.saturating_sub(self.fine_tune_epochs))
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| VmpError::Parse {
            path: origin.to_string(),
            msg: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capture_needs_prior() {
        let cfg = TrainConfig {
            stage: Stage::Capture,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn digest_tracks_config() {
        let a = TrainConfig::default();
        let b = TrainConfig { seed: 1, ..a.clone() };
        assert_eq!(a.digest().unwrap(), a.clone().digest().unwrap());
        assert_ne!(a.digest().unwrap(), b.digest().unwrap());
    }

    #[test]
    fn partial_json_uses_defaults() {
        let cfg = TrainConfig::from_json(r#"{"epochs": 3, "stage": "prior"}"#, "mem").unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.lr, 1e-4);
        assert_eq!(cfg.fine_tune_epochs, 5);
    }

    #[test]
    fn fine_tune_window() {
        let cfg = TrainConfig {
            epochs: 12,
            fine_tune: true,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.fine_tune_start(), Some(7));
    }
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::losses::FbcSettings;
use crate::error::{Error, IoContext, Result};
use crate::model::ModelConfig;
use crate::synth::DatasetConfig;

/// Loss used for cross-camera steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossLoss {
    /// Low-pass L1 on the warped target plus focal frequency on the pristine one.
    Fbc,
    /// Plain masked L1 against the warped target (ablation).
    WarpedL1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// On-disk dataset; when absent, `synthetic` is rendered in memory.
    pub dataset: Option<PathBuf>,
    pub synthetic: DatasetConfig,
    /// Cameras to train on; empty means all.
    pub cameras: Vec<String>,
    pub patch_size: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    /// NRR weight λ.
    pub lambda_nrr: f64,
    pub fbc_kernel: usize,
    pub fbc_sigma: f64,
    pub focal_alpha: f64,
    pub max_occluded: f64,
    /// Fractions of self- and cross-camera steps; must sum to one.
    pub mix_self: f64,
    pub mix_cross: f64,
    pub cross_loss: CrossLoss,
    pub flips: bool,
    pub seed: u64,
    pub val_interval: usize,
    /// Validation scenes used per evaluation (0 = whole split).
    pub val_scenes: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset: None,
            synthetic: DatasetConfig::default(),
            cameras: Vec::new(),
            patch_size: 64,
            batch_size: 8,
            steps: 20_000,
            lr_max: 2e-4,
            lr_min: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 1.0,
            lambda_nrr: 0.1,
            fbc_kernel: 5,
            fbc_sigma: 1.0,
            focal_alpha: 1.0,
            max_occluded: 0.2,
            mix_self: 2.0 / 3.0,
            mix_cross: 1.0 / 3.0,
            cross_loss: CrossLoss::Fbc,
            flips: true,
            seed: 0,
            val_interval: 500,
            val_scenes: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if !(self.lambda_nrr >= 0.0) {
            return err(format!("lambda_nrr must be non-negative, got {}", self.lambda_nrr));
        }
        if !(self.mix_self >= 0.0 && self.mix_cross >= 0.0) || (self.mix_self + self.mix_cross - 1.0).abs() > 1e-6 {
            return err(format!("mix ratios must be non-negative and sum to 1, got {} + {}", self.mix_self, self.mix_cross));
        }
        if self.batch_size == 0 || self.steps == 0 || self.val_interval == 0 {
            return err("batch_size, steps and val_interval must be positive".into());
        }
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(self.model.multiple()) {
            return err(format!("patch_size must be a positive multiple of {}", self.model.multiple()));
        }
        if self.fbc_kernel.is_multiple_of(2) || !(self.fbc_sigma > 0.0) {
            return err("fbc_kernel must be odd and fbc_sigma positive".into());
        }
        if !(self.lr_max > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            return err("learning rates must satisfy 0 <= lr_min <= lr_max, lr_max > 0".into());
        }
        if !(0.0..=1.0).contains(&self.max_occluded) {
            return err("max_occluded must be in [0, 1]".into());
        }
        self.model.validate()?;
        if self.dataset.is_none() {
            self.synthetic.validate()?;
        }
        Ok(())
    }

    pub fn fbc(&self) -> FbcSettings {
        FbcSettings { kernel: self.fbc_kernel, sigma: self.fbc_sigma, focal_alpha: self.focal_alpha, max_occluded: self.max_occluded }
    }

    /// Whether `step` (0-based) is a cross-camera step: cross steps are spread
    /// evenly at rate `mix_cross`.
    pub fn is_cross_step(&self, step: usize) -> bool {
        let f = |s: usize| (s as f64 * self.mix_cross + 1e-9).floor() as usize;
        f(step + 1) > f(step)
    }
}

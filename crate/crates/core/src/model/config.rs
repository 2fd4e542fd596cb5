use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters shared by the inverse and forward modules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Encoder/decoder scales; inputs must be divisible by `2^scales`.
    pub scales: usize,
    /// Width at the first scale, doubled at each deeper scale.
    pub base_channels: usize,
    pub blocks_per_scale: usize,
    /// Device embedding length.
    pub embed_dim: usize,
    /// Number of context tokens the embedding is split into.
    pub context_tokens: usize,
    /// Query/key/value width of the bottleneck cross-attention.
    pub attn_dim: usize,
    pub gfmb_hidden: usize,
    pub leaky_slope: f64,
    /// Sharpness of the non-negative inverse head.
    pub softplus_beta: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            scales: 3,
            base_channels: 16,
            blocks_per_scale: 4,
            embed_dim: 256,
            context_tokens: 8,
            attn_dim: 32,
            gfmb_hidden: 32,
            leaky_slope: 0.2,
            softplus_beta: 100.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.to_string()));
        if self.scales == 0 || self.blocks_per_scale == 0 {
            return err("scales and blocks_per_scale must be positive");
        }
        if self.base_channels < 2 || !self.base_channels.is_multiple_of(2) {
            return err("base_channels must be even and at least 2");
        }
        if self.context_tokens == 0 || self.embed_dim == 0 || !self.embed_dim.is_multiple_of(self.context_tokens) {
            return err("embed_dim must be a positive multiple of context_tokens");
        }
        if self.attn_dim == 0 || self.gfmb_hidden == 0 {
            return err("attn_dim and gfmb_hidden must be positive");
        }
        if !(self.softplus_beta > 0.0) || !(self.leaky_slope >= 0.0) {
            return err("softplus_beta must be positive and leaky_slope non-negative");
        }
        Ok(())
    }

    pub fn width(&self, scale: usize) -> usize {
        self.base_channels << scale
    }

    pub fn token_dim(&self) -> usize {
        self.embed_dim / self.context_tokens
    }

    /// Spatial divisor required of every input.
    pub fn multiple(&self) -> usize {
        1 << self.scales
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Task head placed on the final encoder state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    /// Mean-pool over time, then a linear map to class logits.
    Classification { n_classes: usize },
    /// Per-frame logits over `vocab_size` symbols plus the blank at index 0.
    Ctc { vocab_size: usize },
    /// Per-frame logits over `n_tags` tags.
    Tagging { n_tags: usize },
}

impl HeadKind {
    /// Width of the head's output layer.
    pub fn out_dim(&self) -> usize {
        match *self {
            HeadKind::Classification { n_classes } => n_classes,
            HeadKind::Ctc { vocab_size } => vocab_size + 1,
            HeadKind::Tagging { n_tags } => n_tags,
        }
    }
}

fn default_kernel() -> usize {
    3
}

fn default_eps() -> f64 {
    1e-5
}

/// Backbone geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub frontend_blocks: usize,
    #[serde(default = "default_kernel")]
    pub frontend_kernel: usize,
    pub input_dim: usize,
    pub head: HeadKind,
    #[serde(default = "default_eps")]
    pub ln_eps: f64,
}

impl EncoderConfig {
    /// Default desk-scale profile.
    pub fn toy(input_dim: usize, head: HeadKind) -> Self {
        Self {
            d_model: 32,
            n_heads: 2,
            n_layers: 4,
            d_ff: 64,
            frontend_blocks: 2,
            frontend_kernel: default_kernel(),
            input_dim,
            head,
            ln_eps: default_eps(),
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
            ("input_dim", self.input_dim),
            ("head width", self.head.out_dim()),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return config_err(format!("{name} must be at least 1"));
        }
        if self.d_model % self.n_heads != 0 {
            return config_err(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.frontend_blocks == 0 && self.input_dim != self.d_model {
            return config_err(format!(
                "without a frontend input_dim ({}) must equal d_model ({})",
                self.input_dim, self.d_model
            ));
        }
        if self.frontend_kernel % 2 == 0 {
            return config_err("frontend kernel must be odd");
        }
        if !(self.ln_eps > 0.0) {
            return config_err("ln_eps must be positive");
        }
        Ok(())
    }
}

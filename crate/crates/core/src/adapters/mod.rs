//! Adaptation mechanisms that attach to a frozen encoder.

pub mod attach;
pub mod bottleneck;
pub mod conv_adapter;
pub mod lora;
pub mod prefix;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::model::EncoderConfig;
use crate::scalar::Scalar;
use crate::tensor::tape::Activation;
use crate::tensor::{ParamStore, Tape, Var};

pub use attach::{attach, save_adapter, Attachment};
pub use bottleneck::{bottleneck_forward, BottleneckIds};
pub use conv_adapter::{conv_adapter_forward, squeeze_excite, ConvAdapterIds, SqueezeExciteIds};
pub use lora::{lora_linear, LoraIds, LoraLayer};
pub use prefix::{prefix_attention, PrefixIds};

/// Name segments owned by a mechanism rather than the backbone.
pub const MECHANISM_SEGMENTS: [&str; 4] = [".adapter.", ".prefix.", ".lora.", ".conv_adapter."];

/// One of the four attention projections.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Projection {
    #[serde(rename = "W_Q")]
    Q,
    #[serde(rename = "W_K")]
    K,
    #[serde(rename = "W_V")]
    V,
    #[serde(rename = "W_O")]
    O,
}

impl Projection {
    pub const ALL: [Projection; 4] = [Projection::Q, Projection::K, Projection::V, Projection::O];

    pub fn label(self) -> &'static str {
        match self {
            Projection::Q => "W_Q",
            Projection::K => "W_K",
            Projection::V => "W_V",
            Projection::O => "W_O",
        }
    }
}

fn default_compression() -> usize {
    2
}
fn default_rank() -> usize {
    8
}
fn default_scale() -> f64 {
    1.0
}
fn default_placements() -> Vec<Projection> {
    Projection::ALL.to_vec()
}
fn default_k_point() -> usize {
    3
}
fn default_k_depth() -> usize {
    5
}
fn default_se_ratio() -> usize {
    2
}
fn default_gelu() -> Activation {
    Activation::Gelu
}

/// Which mechanism to attach, with its hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdapterSpec {
    /// Frozen backbone, trainable head only.
    None,
    Bottleneck {
        #[serde(default = "default_compression")]
        compression: usize,
        #[serde(default)]
        nonlinearity: Activation,
    },
    Prefix {
        length: usize,
    },
    Lora {
        #[serde(default = "default_rank")]
        rank: usize,
        #[serde(default = "default_scale")]
        scale: f64,
        #[serde(default = "default_placements")]
        placements: Vec<Projection>,
    },
    ConvAdapter {
        #[serde(default = "default_compression")]
        compression: usize,
        #[serde(default = "default_k_point")]
        k_point: usize,
        #[serde(default = "default_k_depth")]
        k_depth: usize,
        #[serde(default = "default_se_ratio")]
        se_ratio: usize,
        #[serde(default = "default_gelu")]
        nonlinearity: Activation,
    },
}

impl AdapterSpec {
    pub fn bottleneck(compression: usize) -> Self {
        AdapterSpec::Bottleneck {
            compression,
            nonlinearity: Activation::default(),
        }
    }

    pub fn prefix(length: usize) -> Self {
        AdapterSpec::Prefix { length }
    }

    pub fn lora(rank: usize) -> Self {
        AdapterSpec::Lora {
            rank,
            scale: default_scale(),
            placements: default_placements(),
        }
    }

    pub fn conv_adapter(compression: usize) -> Self {
        AdapterSpec::ConvAdapter {
            compression,
            k_point: default_k_point(),
            k_depth: default_k_depth(),
            se_ratio: default_se_ratio(),
            nonlinearity: default_gelu(),
        }
    }

    /// Short label used in reports.
    pub fn method(&self) -> &'static str {
        match self {
            AdapterSpec::None => "probe",
            AdapterSpec::Bottleneck { .. } => "bottleneck",
            AdapterSpec::Prefix { .. } => "prefix",
            AdapterSpec::Lora { .. } => "lora",
            AdapterSpec::ConvAdapter { .. } => "conv_adapter",
        }
    }

    /// Same mechanism with its compression ratio replaced, where it has one.
    pub fn with_compression(&self, c: usize) -> Option<Self> {
        let mut out = self.clone();
        match &mut out {
            AdapterSpec::Bottleneck { compression, .. } | AdapterSpec::ConvAdapter { compression, .. } => {
                *compression = c;
                Some(out)
            }
            _ => None,
        }
    }

    pub fn validate(&self, config: &EncoderConfig) -> Result<()> {
        let d = config.d_model;
        match self {
            AdapterSpec::None | AdapterSpec::Prefix { .. } => Ok(()),
            AdapterSpec::Bottleneck { compression, .. } => check_compression(d, *compression),
            AdapterSpec::Lora { rank, scale, placements } => {
                if *rank == 0 || *rank >= d {
                    return config_err(format!("lora rank {rank} must satisfy 1 <= r < d_model ({d})"));
                }
                if !scale.is_finite() {
                    return config_err("lora scale must be finite");
                }
                if placements.is_empty() {
                    return config_err("lora needs at least one placement");
                }
                let mut sorted = placements.clone();
                sorted.sort();
                sorted.dedup();
                if sorted.len() != placements.len() {
                    return config_err("lora placements contain duplicates");
                }
                Ok(())
            }
            AdapterSpec::ConvAdapter {
                compression,
                k_point,
                k_depth,
                se_ratio,
                ..
            } => {
                check_compression(d, *compression)?;
                if k_point % 2 == 0 || k_depth % 2 == 0 {
                    return config_err(format!("conv adapter kernels ({k_point}, {k_depth}) must be odd"));
                }
                let dc = d / compression;
                if *se_ratio == 0 || dc % se_ratio != 0 {
                    return config_err(format!("se_ratio {se_ratio} does not divide adapter width {dc}"));
                }
                Ok(())
            }
        }
    }
}

fn check_compression(d: usize, c: usize) -> Result<()> {
    if c == 0 || d % c != 0 {
        return config_err(format!("compression {c} does not divide d_model {d}"));
    }
    Ok(())
}

/// Per-layer state of the attached mechanism.
#[derive(Clone, Debug)]
pub enum LayerAdapter {
    /// Nothing inserted (frozen probe or zero-length prefix).
    Empty,
    Bottleneck(BottleneckIds),
    Prefix(PrefixIds),
    Lora(LoraLayer),
    Conv(ConvAdapterIds),
}

impl LayerAdapter {
    pub fn prefix(&self) -> Option<&PrefixIds> {
        match self {
            LayerAdapter::Prefix(p) => Some(p),
            _ => None,
        }
    }

    pub fn lora(&self) -> Option<&LoraLayer> {
        match self {
            LayerAdapter::Lora(l) => Some(l),
            _ => None,
        }
    }

    /// Residual module applied to the feed-forward output, if any.
    pub fn after_feed_forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, h: Var) -> Result<Var> {
        match self {
            LayerAdapter::Bottleneck(ids) => bottleneck_forward(tape, store, h, ids),
            LayerAdapter::Conv(ids) => conv_adapter_forward(tape, store, h, ids),
            _ => Ok(h),
        }
    }
}

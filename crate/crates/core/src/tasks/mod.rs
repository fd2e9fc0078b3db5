//! Seeded synthetic tasks for each head type.

pub mod container;
pub mod generate;
pub mod runner;
pub mod spans;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::model::HeadKind;
use crate::tensor::Tensor;

pub use generate::{gen_classification, gen_classification_with, gen_tagging, gen_transduction, ClassShape, CLASS_SHAPE};
pub use runner::{TaskRunner, TestScores};
pub use spans::{frames_from_spans, spans_from_frames};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Transduction,
    Tagging,
}

/// Supervision for one example.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Class(usize),
    /// Symbol sequence over `1..=vocab`; 0 is reserved for the CTC blank.
    Sequence(Vec<usize>),
    /// One tag per frame; 0 is background.
    Tags(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    /// `[T, input_dim]`.
    pub features: Tensor<f64>,
    pub target: Target,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub examples: Vec<Example>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Train, validation and test splits drawn from one generative setup.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub seed: u64,
    pub seq_len: usize,
    pub input_dim: usize,
    /// Classes, vocabulary size (without blank), or tags (with background).
    pub n_out: usize,
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

impl SyntheticTask {
    pub fn head(&self) -> HeadKind {
        match self.kind {
            TaskKind::Classification => HeadKind::Classification { n_classes: self.n_out },
            TaskKind::Transduction => HeadKind::Ctc { vocab_size: self.n_out },
            TaskKind::Tagging => HeadKind::Tagging { n_tags: self.n_out },
        }
    }
}

fn default_seq_len() -> usize {
    20
}
fn default_input_dim() -> usize {
    8
}

/// Serializable description of a task, as it appears in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    Classification {
        n_classes: usize,
        samples_per_class: usize,
        #[serde(default = "default_seq_len")]
        seq_len: usize,
        #[serde(default = "default_input_dim")]
        input_dim: usize,
        difficulty: f64,
        /// Generation seed; the run seed is used when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Transduction {
        vocab: usize,
        max_label_len: usize,
        n_samples: usize,
        #[serde(default = "default_seq_len")]
        seq_len: usize,
        #[serde(default = "default_input_dim")]
        input_dim: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Tagging {
        n_tags: usize,
        n_samples: usize,
        span_density: f64,
        #[serde(default = "default_seq_len")]
        seq_len: usize,
        #[serde(default = "default_input_dim")]
        input_dim: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

impl TaskSpec {
    pub fn label(&self) -> &'static str {
        match self {
            TaskSpec::Classification { .. } => "classification",
            TaskSpec::Transduction { .. } => "transduction",
            TaskSpec::Tagging { .. } => "tagging",
        }
    }

    pub fn input_dim(&self) -> usize {
        match *self {
            TaskSpec::Classification { input_dim, .. }
            | TaskSpec::Transduction { input_dim, .. }
            | TaskSpec::Tagging { input_dim, .. } => input_dim,
        }
    }

    pub fn head(&self) -> HeadKind {
        match *self {
            TaskSpec::Classification { n_classes, .. } => HeadKind::Classification { n_classes },
            TaskSpec::Transduction { vocab, .. } => HeadKind::Ctc { vocab_size: vocab },
            TaskSpec::Tagging { n_tags, .. } => HeadKind::Tagging { n_tags },
        }
    }

    pub fn generate(&self, run_seed: u64) -> Result<SyntheticTask> {
        match *self {
            TaskSpec::Classification {
                n_classes,
                samples_per_class,
                seq_len,
                input_dim,
                difficulty,
                seed,
            } => gen_classification(seed.unwrap_or(run_seed), n_classes, samples_per_class, seq_len, input_dim, difficulty),
            TaskSpec::Transduction {
                vocab,
                max_label_len,
                n_samples,
                seq_len,
                input_dim,
                seed,
            } => gen_transduction(seed.unwrap_or(run_seed), vocab, max_label_len, n_samples, seq_len, input_dim),
            TaskSpec::Tagging {
                n_tags,
                n_samples,
                span_density,
                seq_len,
                input_dim,
                seed,
            } => gen_tagging(seed.unwrap_or(run_seed), n_tags, n_samples, seq_len, input_dim, span_density),
        }
    }
}

pub(crate) fn check_positive(fields: &[(&str, usize)]) -> Result<()> {
    let bad: Vec<&str> = fields.iter().filter(|(_, v)| *v == 0).map(|(n, _)| *n).collect();
    if bad.is_empty() {
        Ok(())
    } else {
        config_err(format!("must be at least 1: {}", bad.join(", ")))
    }
}

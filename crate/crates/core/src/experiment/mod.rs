//! Experiment orchestration: configs, single runs, sweeps and reports.

pub mod report;
pub mod run;
pub mod sweep;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapters::AdapterSpec;
use crate::error::{Error, Result};
use crate::model::EncoderConfig;
use crate::tasks::TaskSpec;
use crate::training::TrainConfig;

pub use report::{emit_report, Report};
pub use run::{run_experiment, run_single, RunResult, RESULT_SCHEMA};
pub use sweep::{run_sweep, SweepAxis, SweepRow, SweepSummary, SWEEP_CSV_HEADER};

pub const CONFIG_SCHEMA: &str = "peft-experiment/1";

/// Method order used wherever methods are listed.
pub const METHODS: [&str; 6] = ["full", "probe", "bottleneck", "prefix", "lora", "conv_adapter"];

fn default_schema() -> String {
    CONFIG_SCHEMA.to_string()
}
fn default_d_model() -> usize {
    32
}
fn default_n_heads() -> usize {
    2
}
fn default_n_layers() -> usize {
    4
}
fn default_d_ff() -> usize {
    64
}
fn default_frontend_blocks() -> usize {
    2
}
fn default_kernel() -> usize {
    3
}
fn default_ln_eps() -> f64 {
    1e-5
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// Encoder geometry; input width and head come from the task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_n_heads")]
    pub n_heads: usize,
    #[serde(default = "default_n_layers")]
    pub n_layers: usize,
    #[serde(default = "default_d_ff")]
    pub d_ff: usize,
    #[serde(default = "default_frontend_blocks")]
    pub frontend_blocks: usize,
    #[serde(default = "default_kernel")]
    pub frontend_kernel: usize,
    #[serde(default = "default_ln_eps")]
    pub ln_eps: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            d_model: default_d_model(),
            n_heads: default_n_heads(),
            n_layers: default_n_layers(),
            d_ff: default_d_ff(),
            frontend_blocks: default_frontend_blocks(),
            frontend_kernel: default_kernel(),
            ln_eps: default_ln_eps(),
        }
    }
}

impl BackboneConfig {
    pub fn to_encoder(&self, task: &TaskSpec) -> EncoderConfig {
        EncoderConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            d_ff: self.d_ff,
            frontend_blocks: self.frontend_blocks,
            frontend_kernel: self.frontend_kernel,
            input_dim: task.input_dim(),
            head: task.head(),
            ln_eps: self.ln_eps,
        }
    }
}

/// One experiment document.
///
/// `adapter` absent means full fine-tuning; `{"kind": "none"}` is the frozen probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema: String,
    pub task: TaskSpec,
    #[serde(default)]
    pub model: BackboneConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter: Option<AdapterSpec>,
    pub train: TrainConfig,
    /// Learning-rate overrides keyed by method name, used by method sweeps.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub method_lr: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

/// Inputs that determine a run's result payload.
#[derive(Serialize)]
struct RunKey<'a> {
    schema: &'a str,
    task: &'a TaskSpec,
    model: &'a BackboneConfig,
    adapter: &'a Option<AdapterSpec>,
    train: &'a TrainConfig,
}

impl ExperimentConfig {
    pub fn new(task: TaskSpec, adapter: Option<AdapterSpec>, train: TrainConfig) -> Self {
        Self {
            schema: default_schema(),
            task,
            model: BackboneConfig::default(),
            adapter,
            train,
            method_lr: BTreeMap::new(),
            output: None,
            seeds: default_seeds(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("cannot parse config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn method(&self) -> &'static str {
        self.adapter.as_ref().map_or("full", AdapterSpec::method)
    }

    pub fn encoder(&self) -> EncoderConfig {
        self.model.to_encoder(&self.task)
    }

    /// Checks every section and reports all offending fields together.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.schema != CONFIG_SCHEMA {
            problems.push(format!("schema: expected {CONFIG_SCHEMA}, found {}", self.schema));
        }
        if let Err(e) = validate_task(&self.task) {
            problems.push(format!("task: {}", strip(e)));
        }
        let encoder = self.encoder();
        let encoder_ok = match encoder.validate() {
            Ok(()) => true,
            Err(e) => {
                problems.push(format!("model: {}", strip(e)));
                false
            }
        };
        if let (true, Some(spec)) = (encoder_ok, &self.adapter) {
            if let Err(e) = spec.validate(&encoder) {
                problems.push(format!("adapter: {}", strip(e)));
            }
        }
        if let Err(e) = self.train.validate() {
            problems.push(format!("train: {}", strip(e)));
        }
        for (m, lr) in &self.method_lr {
            if !METHODS.contains(&m.as_str()) {
                problems.push(format!("method_lr: unknown method {m}"));
            }
            if !(*lr > 0.0 && lr.is_finite()) {
                problems.push(format!("method_lr.{m}: must be positive"));
            }
        }
        if self.seeds.is_empty() {
            problems.push("seeds: at least one seed is required".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// The config of one replicate: a single seed, which also seeds training.
    pub fn for_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seeds = vec![seed];
        c.train.seed = seed;
        if let Some(&lr) = self.method_lr.get(self.method()) {
            c.train.lr = lr;
        }
        c.method_lr.clear();
        c
    }

    /// Hex SHA-256 of the canonical JSON of the inputs of the run with `seed`.
    pub fn hash(&self, seed: u64) -> String {
        let single = self.for_seed(seed);
        let key = RunKey {
            schema: &single.schema,
            task: &single.task,
            model: &single.model,
            adapter: &single.adapter,
            train: &single.train,
        };
        let bytes = serde_json::to_vec(&key).expect("config serializes");
        format!("{:x}", Sha256::digest(bytes))
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) | Error::Contract(m) => m,
        e => e.to_string(),
    }
}

fn validate_task(task: &TaskSpec) -> Result<()> {
    let mut bad = Vec::new();
    match *task {
        TaskSpec::Classification {
            n_classes,
            samples_per_class,
            seq_len,
            input_dim,
            difficulty,
            ..
        } => {
            if n_classes < 2 {
                bad.push("n_classes");
            }
            if samples_per_class < 5 {
                bad.push("samples_per_class");
            }
            if seq_len == 0 {
                bad.push("seq_len");
            }
            if input_dim == 0 {
                bad.push("input_dim");
            }
            if !(difficulty > 0.0 && difficulty <= 1.0) {
                bad.push("difficulty");
            }
        }
        TaskSpec::Transduction {
            vocab,
            max_label_len,
            n_samples,
            seq_len,
            input_dim,
            ..
        } => {
            if vocab == 0 {
                bad.push("vocab");
            }
            if max_label_len == 0 {
                bad.push("max_label_len");
            }
            if n_samples < 5 {
                bad.push("n_samples");
            }
            if seq_len < 2 * max_label_len + 1 {
                bad.push("seq_len");
            }
            if input_dim == 0 {
                bad.push("input_dim");
            }
        }
        TaskSpec::Tagging {
            n_tags,
            n_samples,
            span_density,
            seq_len,
            input_dim,
            ..
        } => {
            if n_tags < 2 {
                bad.push("n_tags");
            }
            if n_samples < 5 {
                bad.push("n_samples");
            }
            if !(span_density > 0.0 && span_density < 1.0) {
                bad.push("span_density");
            }
            if seq_len == 0 {
                bad.push("seq_len");
            }
            if input_dim == 0 {
                bad.push("input_dim");
            }
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!("invalid fields {}", bad.join(", "))))
    }
}

/// Adapter for a method name, with default hyperparameters unless `base`
/// already describes that method.
pub fn method_spec(method: &str, base: Option<&AdapterSpec>) -> Result<Option<AdapterSpec>> {
    if let Some(b) = base {
        if b.method() == method {
            return Ok(Some(b.clone()));
        }
    }
    Ok(match method {
        "full" => None,
        "probe" => Some(AdapterSpec::None),
        "bottleneck" => Some(AdapterSpec::bottleneck(2)),
        "prefix" => Some(AdapterSpec::prefix(8)),
        "lora" => Some(AdapterSpec::lora(8)),
        "conv_adapter" => Some(AdapterSpec::conv_adapter(2)),
        other => {
            return Err(Error::Config(format!(
                "unknown method {other}; expected one of {}",
                METHODS.join(", ")
            )))
        }
    })
}

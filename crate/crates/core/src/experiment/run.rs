use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::accounting::ParamReport;
use crate::adapters::attach;
use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::metrics::EvalReport;
use crate::model::Model;
use crate::tasks::TaskRunner;
use crate::training::{train_with_early_stopping, EpochRecord};

pub const RESULT_SCHEMA: &str = "peft-result/1";

/// Everything one replicate produces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub schema: String,
    pub config_hash: String,
    pub method: String,
    pub task: String,
    pub seed: u64,
    pub params: ParamReport,
    pub eval: Vec<EvalReport>,
    pub val_metric: String,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_metric: f64,
    pub stopped_early: bool,
    pub steps: usize,
    pub config: ExperimentConfig,
    pub wall_clock_secs: f64,
}

impl RunResult {
    /// Test-split value of `metric`.
    pub fn metric(&self, metric: &str) -> Option<f64> {
        self.eval.iter().find(|r| r.metric == metric).map(|r| r.value)
    }

    /// The metric a task is ranked by: the first one reported.
    pub fn primary(&self) -> Option<&EvalReport> {
        self.eval.first()
    }

    /// Pretty JSON of the result without its timing field.
    pub fn payload(&self) -> String {
        let mut v = serde_json::to_value(self).expect("result serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("wall_clock_secs");
        }
        serde_json::to_string_pretty(&v).expect("value serializes")
    }

    pub fn file_name(&self) -> String {
        format!("{}-{}-seed{}-{}.json", self.method, self.task, self.seed, &self.config_hash[..12])
    }
}

/// Trains and evaluates the replicate of `config` with `seed`.
pub fn run_single(config: &ExperimentConfig, seed: u64) -> Result<RunResult> {
    config.validate()?;
    let started = Instant::now();
    let single = config.for_seed(seed);
    let task = single.task.generate(seed)?;
    let base = Model::<f64>::new(single.encoder(), seed)?;
    let mut model = match &single.adapter {
        Some(spec) => attach(base, spec, seed)?,
        None => base,
    };
    let params = ParamReport::of(&model)?;
    let runner = TaskRunner::new(&task);
    let outcome = train_with_early_stopping(&mut model, &runner, &single.train)?;
    let scores = runner.test_scores(&model)?;
    let method = single.method().to_string();
    let task_label = single.task.label().to_string();
    let eval = scores
        .metrics
        .iter()
        .map(|(metric, value)| EvalReport {
            task: task_label.clone(),
            method: method.clone(),
            metric: metric.clone(),
            value: *value,
            seed,
            support: if metric == "weighted_f1" { scores.support.clone() } else { None },
        })
        .collect();
    Ok(RunResult {
        schema: RESULT_SCHEMA.to_string(),
        config_hash: config.hash(seed),
        method,
        task: task_label,
        seed,
        params,
        eval,
        val_metric: runner.val_metric_name().to_string(),
        curve: outcome.curve,
        best_epoch: outcome.best.epoch,
        best_val_metric: outcome.best.val_metric,
        stopped_early: outcome.stopped_early,
        steps: outcome.steps,
        config: single,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

static TEMP_COUNTER: AtomicUsize = AtomicUsize::new(0);

/// Writes `contents` to `path` through a sibling temporary file and a rename.
pub(crate) fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} has no file name", path.display())))?
        .to_string_lossy();
    let tmp = dir.join(format!(
        ".{name}.{}.{}.tmp",
        std::process::id(),
        TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub(crate) fn write_result(result: &RunResult, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(result.file_name());
    let mut text = serde_json::to_string_pretty(result)?;
    text.push('\n');
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

/// Runs every replicate seed of `config` and writes one result file per seed
/// into `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<Vec<(RunResult, PathBuf)>> {
    config.validate()?;
    config
        .seeds
        .iter()
        .map(|&seed| {
            let r = run_single(config, seed)?;
            let path = write_result(&r, out_dir)?;
            Ok((r, path))
        })
        .collect()
}

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::accounting::SkippedPoint;
use crate::error::{Error, Result};
use crate::experiment::run::{run_single, write_atomic, write_result};
use crate::experiment::{method_spec, ExperimentConfig};

pub const SWEEP_CSV_HEADER: &str = "method,n,seed,params,fraction,metric,value,status,config_hash";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Method,
    /// Values are exponents `n`; the compression factor is `2^n`.
    Compression,
    Seed,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "method" => Ok(SweepAxis::Method),
            "compression" => Ok(SweepAxis::Compression),
            "seed" => Ok(SweepAxis::Seed),
            other => Err(Error::Config(format!("unknown sweep axis {other}; expected method, compression or seed"))),
        }
    }
}

/// One line of the aggregated sweep CSV.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub method: String,
    pub n: Option<u32>,
    pub seed: u64,
    pub params: Option<usize>,
    pub fraction: Option<f64>,
    pub metric: Option<String>,
    pub value: Option<f64>,
    /// `ok`, or the error that ended the run.
    pub status: String,
    pub config_hash: String,
}

#[derive(Clone, Debug)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
    pub skipped: Vec<SkippedPoint>,
    pub csv: PathBuf,
}

impl SweepSummary {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.status != "ok").count()
    }
}

struct Job {
    method: String,
    n: Option<u32>,
    seed: u64,
    config: ExperimentConfig,
}

fn parse_values<T: FromStr>(axis: &str, values: &[String]) -> Result<Vec<T>> {
    values
        .iter()
        .map(|v| v.parse().map_err(|_| Error::Config(format!("invalid {axis} value {v:?}"))))
        .collect()
}

fn plan(config: &ExperimentConfig, axis: SweepAxis, values: &[String]) -> Result<(Vec<Job>, Vec<SkippedPoint>)> {
    if values.is_empty() {
        return Err(Error::Config("sweep value list is empty".into()));
    }
    config.validate()?;
    let mut jobs = Vec::new();
    let mut skipped = Vec::new();
    match axis {
        SweepAxis::Method => {
            let specs = values
                .iter()
                .map(|m| method_spec(m, config.adapter.as_ref()).map(|s| (m, s)))
                .collect::<Result<Vec<_>>>()?;
            for (m, spec) in specs {
                let mut c = config.clone();
                c.adapter = spec;
                for &seed in &config.seeds {
                    jobs.push(Job {
                        method: m.clone(),
                        n: None,
                        seed,
                        config: c.clone(),
                    });
                }
            }
        }
        SweepAxis::Compression => {
            let base = match &config.adapter {
                Some(s) if s.with_compression(1).is_some() => s.clone(),
                _ => return Err(Error::Config("compression sweeps need a bottleneck or conv_adapter adapter".into())),
            };
            let d = config.model.d_model;
            for n in parse_values::<u32>("compression", values)? {
                let spec = 1usize
                    .checked_shl(n)
                    .filter(|&c| c <= d)
                    .and_then(|c| base.with_compression(c));
                let Some(spec) = spec else {
                    skipped.push(SkippedPoint {
                        n,
                        reason: format!("2^{n} exceeds d_model {d}"),
                    });
                    continue;
                };
                if let Err(e) = spec.validate(&config.encoder()) {
                    skipped.push(SkippedPoint { n, reason: e.to_string() });
                    continue;
                }
                let mut c = config.clone();
                c.adapter = Some(spec);
                for &seed in &config.seeds {
                    jobs.push(Job {
                        method: base.method().to_string(),
                        n: Some(n),
                        seed,
                        config: c.clone(),
                    });
                }
            }
        }
        SweepAxis::Seed => {
            for seed in parse_values::<u64>("seed", values)? {
                jobs.push(Job {
                    method: config.method().to_string(),
                    n: None,
                    seed,
                    config: config.clone(),
                });
            }
        }
    }
    Ok((jobs, skipped))
}

fn execute(job: &Job, out_dir: &Path) -> SweepRow {
    let hash = job.config.hash(job.seed);
    let outcome = run_single(&job.config, job.seed).and_then(|r| write_result(&r, out_dir).map(|_| r));
    match outcome {
        Ok(r) => {
            let primary = r.primary().cloned();
            SweepRow {
                method: job.method.clone(),
                n: job.n,
                seed: job.seed,
                params: Some(r.params.trainable),
                fraction: Some(r.params.fraction),
                metric: primary.as_ref().map(|p| p.metric.clone()),
                value: primary.map(|p| p.value),
                status: "ok".into(),
                config_hash: hash,
            }
        }
        Err(e) => SweepRow {
            method: job.method.clone(),
            n: job.n,
            seed: job.seed,
            params: None,
            fraction: None,
            metric: None,
            value: None,
            status: format!("error: {e}"),
            config_hash: hash,
        },
    }
}

/// Worker count from `PEFT_WORKERS`, defaulting to one.
pub fn workers_from_env() -> Result<usize> {
    match std::env::var("PEFT_WORKERS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!("PEFT_WORKERS must be a positive integer, found {v:?}"))),
        },
    }
}

/// Runs the cross product of `values` along `axis` with the config's seeds
/// (or the listed seeds on the seed axis), writing each result file and an
/// aggregated `sweep.csv` into `out_dir`.
///
/// A failing run becomes a row whose status carries the error. Compression
/// values that cannot be realised are reported as skipped and get no row.
pub fn run_sweep(
    config: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
    out_dir: &Path,
    workers: usize,
) -> Result<SweepSummary> {
    let (jobs, skipped) = plan(config, axis, values)?;
    let slots: Vec<Mutex<Option<SweepRow>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let row = execute(job, out_dir);
                *slots[i].lock().expect("slot lock") = Some(row);
            });
        }
    });
    let rows: Vec<SweepRow> = slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every job ran"))
        .collect();

    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    let csv = out_dir.join(SWEEP_FILE);
    write_atomic(&csv, &bytes)?;
    Ok(SweepSummary { rows, skipped, csv })
}

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::experiment::run::{RunResult, RESULT_SCHEMA};
use crate::experiment::METHODS;
use crate::metrics::EvalReport;

const TIE_TOLERANCE: f64 = 1e-12;

/// One method's aggregated line.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub runs: usize,
    pub params: (usize, usize),
    pub percent: (f64, f64),
    /// Mean test value per column; `None` when the method has no such run.
    pub values: Vec<Option<f64>>,
    pub best: Vec<bool>,
}

/// Rendered comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    /// `(task, metric)` per value column.
    pub columns: Vec<(String, String)>,
    pub rows: Vec<ReportRow>,
    pub skipped: Vec<(PathBuf, String)>,
    pub markdown: String,
    pub csv: String,
}

fn method_rank(m: &str) -> (usize, String) {
    (METHODS.iter().position(|&x| x == m).unwrap_or(METHODS.len()), m.to_string())
}

fn load(path: &Path) -> Result<RunResult> {
    let text = fs::read_to_string(path)?;
    let r: RunResult = serde_json::from_str(&text)?;
    if r.schema != RESULT_SCHEMA {
        return Err(Error::Format(format!("unsupported schema {}", r.schema)));
    }
    Ok(r)
}

fn range<T: PartialOrd + Copy>(xs: impl Iterator<Item = T>) -> (T, T) {
    let mut it = xs;
    let first = it.next().expect("nonempty group");
    it.fold((first, first), |(lo, hi), x| {
        (if x < lo { x } else { lo }, if x > hi { x } else { hi })
    })
}

fn show_range<T: PartialEq + Copy>(r: (T, T), f: impl Fn(T) -> String) -> String {
    if r.0 == r.1 {
        f(r.0)
    } else {
        format!("{}..{}", f(r.0), f(r.1))
    }
}

fn thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Aggregates every `*.json` result in `dir` into a method-by-metric table.
///
/// Unreadable or malformed files are skipped and listed in the footer.
pub fn emit_report(dir: &Path) -> Result<Report> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut results = Vec::new();
    let mut skipped = Vec::new();
    for p in paths {
        match load(&p) {
            Ok(r) => results.push(r),
            Err(e) => skipped.push((p, e.to_string())),
        }
    }
    if results.is_empty() {
        return Err(Error::Config(format!("no readable result files in {}", dir.display())));
    }

    let mut columns: Vec<(String, String)> = Vec::new();
    let mut tasks: Vec<&str> = results.iter().map(|r| r.task.as_str()).collect();
    tasks.sort_unstable();
    tasks.dedup();
    for task in tasks {
        for r in results.iter().filter(|r| r.task == task) {
            for e in &r.eval {
                let key = (e.task.clone(), e.metric.clone());
                if !columns.contains(&key) {
                    columns.push(key);
                }
            }
        }
    }

    let mut groups: BTreeMap<(usize, String), Vec<&RunResult>> = BTreeMap::new();
    for r in &results {
        groups.entry(method_rank(&r.method)).or_default().push(r);
    }
    let mut rows: Vec<ReportRow> = groups
        .into_iter()
        .map(|((_, method), rs)| {
            let values = columns
                .iter()
                .map(|(task, metric)| {
                    let xs: Vec<f64> = rs
                        .iter()
                        .flat_map(|r| r.eval.iter())
                        .filter(|e| &e.task == task && &e.metric == metric)
                        .map(|e| e.value)
                        .collect();
                    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
                })
                .collect();
            ReportRow {
                method,
                runs: rs.len(),
                params: range(rs.iter().map(|r| r.params.trainable)),
                percent: range(rs.iter().map(|r| r.params.percent)),
                values,
                best: vec![false; columns.len()],
            }
        })
        .collect();

    for (j, (_, metric)) in columns.iter().enumerate() {
        let higher = EvalReport::higher_is_better(metric);
        let best = rows
            .iter()
            .filter_map(|r| r.values[j])
            .reduce(|a, b| if (b > a) == higher { b } else { a });
        if let Some(best) = best {
            for r in &mut rows {
                r.best[j] = r.values[j].is_some_and(|v| (v - best).abs() <= TIE_TOLERANCE);
            }
        }
    }

    let markdown = render_markdown(&columns, &rows, &skipped);
    let csv = render_csv(&columns, &rows)?;
    Ok(Report {
        columns,
        rows,
        skipped,
        markdown,
        csv,
    })
}

fn render_markdown(columns: &[(String, String)], rows: &[ReportRow], skipped: &[(PathBuf, String)]) -> String {
    let mut s = String::from("| Method | Runs | #Params | Fraction (%) |");
    for (task, metric) in columns {
        let _ = write!(s, " {task} {metric} |");
    }
    s.push_str("\n|---|---:|---:|---:|");
    for _ in columns {
        s.push_str("---:|");
    }
    s.push('\n');
    for r in rows {
        let _ = write!(
            s,
            "| {} | {} | {} | {} |",
            r.method,
            r.runs,
            show_range(r.params, thousands),
            show_range(r.percent, |p| format!("{p:.2}"))
        );
        for (v, &b) in r.values.iter().zip(&r.best) {
            match (v, b) {
                (Some(v), true) => {
                    let _ = write!(s, " **{v:.4}** |");
                }
                (Some(v), false) => {
                    let _ = write!(s, " {v:.4} |");
                }
                (None, _) => s.push_str(" - |"),
            }
        }
        s.push('\n');
    }
    s.push_str("\nBold marks the best value in each column; ties are all marked.\n");
    if !skipped.is_empty() {
        s.push_str("\nSkipped files:\n");
        for (p, why) in skipped {
            let name = p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
            let _ = writeln!(s, "- {name}: {why}");
        }
    }
    s
}

fn render_csv(columns: &[(String, String)], rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["method".to_string(), "runs".into(), "params".into(), "fraction_percent".into()];
    header.extend(columns.iter().map(|(t, m)| format!("{t}:{m}")));
    header.push("best".into());
    w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        let mut rec = vec![
            r.method.clone(),
            r.runs.to_string(),
            show_range(r.params, |p| p.to_string()),
            show_range(r.percent, |p| format!("{p:.2}")),
        ];
        rec.extend(r.values.iter().map(|v| v.map_or_else(String::new, |v| format!("{v:.6}"))));
        let best: Vec<String> = columns
            .iter()
            .zip(&r.best)
            .filter(|(_, &b)| b)
            .map(|((t, m), _)| format!("{t}:{m}"))
            .collect();
        rec.push(best.join(";"));
        w.write_record(&rec).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

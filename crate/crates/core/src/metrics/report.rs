use serde::{Deserialize, Serialize};

/// One scored metric for a (task, method, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub method: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<usize>>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "task,method,metric,value,seed";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.task, self.method, self.metric, self.value, self.seed)
    }

    pub fn to_csv(rows: &[EvalReport]) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in rows {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    /// Whether larger values are better for this metric.
    pub fn higher_is_better(metric: &str) -> bool {
        !matches!(metric, "per" | "wer" | "cer" | "mcd" | "loss")
    }
}

use std::fmt::Write;

use serde::{Deserialize, Serialize};

/// Metrics for one checkpoint. Metrics that do not apply are `None` and
/// never render as zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub step: Option<u64>,
    pub ppl: f64,
    pub cvr: Option<f64>,
    pub gold_mse: Option<f64>,
}

/// Aligned text table, one row per report in the given order.
pub fn report(rows: &[EvalReport]) -> String {
    let cell = |v: Option<f64>, digits: usize| v.map_or_else(|| "-".to_string(), |v| format!("{v:.digits$}"));
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max("model".len());
    let mut out = String::new();
    writeln!(out, "{:<width$}  {:>8}  {:>8}  {:>6}  {:>8}", "model", "step", "PPL", "CVR", "Gold").unwrap();
    for r in rows {
        let step = r.step.map_or_else(|| "-".to_string(), |s| s.to_string());
        writeln!(
            out,
            "{:<width$}  {:>8}  {:>8}  {:>6}  {:>8}",
            r.name,
            step,
            format!("{:.2}", r.ppl),
            cell(r.cvr, 3),
            cell(r.gold_mse, 2)
        )
        .unwrap();
    }
    out
}

/// One JSON object per line.
pub fn report_jsonl(rows: &[EvalReport]) -> String {
    rows.iter().map(|r| serde_json::to_string(r).expect("report serializes") + "\n").collect()
}

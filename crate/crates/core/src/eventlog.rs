//! One JSON object per line, one line per iteration.
//!
//! The leading fields are fixed in this order: `t`, `arm`, `batch_size`,
//! `budget_left`, `beta_star`, `predicted_delta`, `raw_reward`, `norm_reward`,
//! `weights`, `probabilities`, `wall_time_ms`. Diagnostic fields follow. Numbers
//! are written in shortest round-trip form; fields that do not apply to a
//! no-op iteration are `null`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub t: usize,
    pub arm: usize,
    pub batch_size: usize,
    pub budget_left: u64,
    pub beta_star: Option<f64>,
    pub predicted_delta: Option<f64>,
    pub raw_reward: Option<f64>,
    pub norm_reward: Option<f64>,
    /// Weights after this iteration's update.
    pub weights: Vec<f64>,
    /// Probabilities the arm was drawn from.
    pub probabilities: Vec<f64>,
    pub wall_time_ms: f64,

    pub b: f64,
    pub eta: Option<f64>,
    pub g_k: Option<f64>,
    pub g_prev: Option<f64>,
    pub cos_phi: Option<f64>,
    /// Iteration at which the chosen arm was last trained, if ever.
    pub last_selected_iter: Option<usize>,
    pub idu_before_mean: Option<f64>,
    pub idu_after_mean: Option<f64>,
    /// Σ over the batch of `(1 - b) δ`.
    pub batch_shift: Option<f64>,
    /// Σ over the batch of `IDU_after - IDU_before`.
    pub delta_idu: Option<f64>,
    pub update_energy: Option<f64>,
    pub update_dot_prev: Option<f64>,
    pub update_dot_cluster: Option<f64>,
    pub batch_ids: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idu_snapshot: Option<Vec<(u64, f64)>>,
}

impl EventRecord {
    /// A record for an iteration that trained nothing.
    pub fn noop(t: usize, arm: usize, budget_left: u64, b: f64, probabilities: &[f64]) -> Self {
        Self {
            t,
            arm,
            batch_size: 0,
            budget_left,
            beta_star: None,
            predicted_delta: None,
            raw_reward: None,
            norm_reward: None,
            weights: Vec::new(),
            probabilities: probabilities.to_vec(),
            wall_time_ms: 0.0,
            b,
            eta: None,
            g_k: None,
            g_prev: None,
            cos_phi: None,
            last_selected_iter: None,
            idu_before_mean: None,
            idu_after_mean: None,
            batch_shift: None,
            delta_idu: None,
            update_energy: None,
            update_dot_prev: None,
            update_dot_cluster: None,
            batch_ids: Vec::new(),
            idu_snapshot: None,
        }
    }

    pub fn is_noop(&self) -> bool {
        self.batch_size == 0
    }

    pub fn write_line(&self, w: &mut dyn Write) -> Result<()> {
        serde_json::to_writer(&mut *w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }
}

/// Parse a whole log. Blank lines are malformed too; the error carries the
/// 1-based number of the first bad line.
pub fn read_log<R: BufRead>(reader: R) -> Result<Vec<EventRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let rec: EventRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let expected = out.len() + 1;
        if rec.t != expected {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("iteration {} out of sequence, expected {expected}", rec.t),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub const REPORT_COLUMNS: [&str; 16] = [
    "t",
    "arm",
    "batch_size",
    "budget_left",
    "spent",
    "beta_star",
    "predicted_delta",
    "raw_reward",
    "norm_reward",
    "eta",
    "g_k",
    "g_prev",
    "cos_phi",
    "idu_before_mean",
    "idu_after_mean",
    "max_probability",
];

/// Tab-separated metric table with a header row and one row per record.
/// Missing values are written as `NA`.
pub fn report_table(records: &[EventRecord], budget: Option<u64>) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
    let mut out = REPORT_COLUMNS.join("\t");
    out.push('\n');
    let mut spent = 0u64;
    for r in records {
        spent += r.batch_size as u64;
        let max_p = r.probabilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let row = [
            r.t.to_string(),
            r.arm.to_string(),
            r.batch_size.to_string(),
            r.budget_left.to_string(),
            budget.map_or_else(|| spent.to_string(), |b| (b - r.budget_left).to_string()),
            opt(r.beta_star),
            opt(r.predicted_delta),
            opt(r.raw_reward),
            opt(r.norm_reward),
            opt(r.eta),
            opt(r.g_k),
            opt(r.g_prev),
            opt(r.cos_phi),
            opt(r.idu_before_mean),
            opt(r.idu_after_mean),
            opt((!r.probabilities.is_empty()).then_some(max_p)),
        ];
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

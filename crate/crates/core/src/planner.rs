//! Closed-form budget planning: expected batch size, the smoothing
//! coefficient that makes expected spend meet the budget exactly, and the
//! minimum iteration count.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::clustering::cluster_stats;
use crate::error::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 0.05;
pub const DEFAULT_ALPHA: f64 = 0.015;

/// `α (1 - b) |C̄| (1 + CV²)`; the `(1 + O(γ))` correction is taken as 1.
pub fn expected_batch_size(alpha: f64, b: f64, mean_cluster_size: f64, cv_squared: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::domain("alpha", format!("must lie in (0, 1], got {alpha}")));
    }
    if !(0.0..=1.0).contains(&b) {
        return Err(Error::domain("b", format!("must lie in [0, 1], got {b}")));
    }
    if !(mean_cluster_size > 0.0 && mean_cluster_size.is_finite()) {
        return Err(Error::domain("mean_cluster_size", format!("must be positive, got {mean_cluster_size}")));
    }
    if !(cv_squared >= 0.0 && cv_squared.is_finite()) {
        return Err(Error::domain("cv_squared", format!("must be nonnegative, got {cv_squared}")));
    }
    Ok(alpha * (1.0 - b) * mean_cluster_size * (1.0 + cv_squared))
}

/// Unchecked `1 - B / (n0 T (1 + CV²))`.
pub fn raw_b(budget: f64, n0: f64, steps: usize, cv_squared: f64) -> f64 {
    1.0 - budget / (n0 * steps as f64 * (1.0 + cv_squared))
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(name, format!("must be positive, got {v}")))
    }
}

/// Smoothing coefficient that makes `Σ_t E[n_t] = B` over `steps` rounds.
///
/// A negative raw value means the budget cannot be spent in `steps` rounds
/// even without smoothing; that is reported as [`Error::Infeasible`].
pub fn optimal_b(budget: f64, n0: f64, steps: usize, cv_squared: f64) -> Result<f64> {
    check_positive("budget", budget)?;
    check_positive("n0", n0)?;
    if steps == 0 {
        return Err(Error::domain("steps", "must be at least 1"));
    }
    if !(cv_squared >= 0.0 && cv_squared.is_finite()) {
        return Err(Error::domain("cv_squared", format!("must be nonnegative, got {cv_squared}")));
    }
    let b = raw_b(budget, n0, steps, cv_squared);
    if b < 0.0 {
        return Err(Error::Infeasible {
            raw_b: b,
            steps,
            min_steps: min_steps(budget, n0, cv_squared)?,
        });
    }
    Ok(b)
}

/// `⌈B / (n0 (1 + CV²))⌉ + 1`.
pub fn min_steps(budget: f64, n0: f64, cv_squared: f64) -> Result<usize> {
    check_positive("budget", budget)?;
    check_positive("n0", n0)?;
    if !(cv_squared >= 0.0 && cv_squared.is_finite()) {
        return Err(Error::domain("cv_squared", format!("must be nonnegative, got {cv_squared}")));
    }
    let ratio = budget / (n0 * (1.0 + cv_squared));
    Ok(ratio.ceil() as usize + 1)
}

/// Where a plan's step count came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSource {
    MinSteps,
    Override,
    Exact,
}

impl StepSource {
    fn as_str(self) -> &'static str {
        match self {
            StepSource::MinSteps => "min_steps",
            StepSource::Override => "override",
            StepSource::Exact => "exact",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub budget: u64,
    pub alpha: f64,
    pub mean_cluster_size: f64,
    pub n0: f64,
    pub cv_squared: f64,
    pub steps: usize,
    pub min_steps: usize,
    pub b_star: f64,
    /// Formula value before clamping into `[0, 1)`.
    pub b_raw: f64,
    pub gamma: f64,
    pub step_source: StepSource,
}

/// Build a plan from cluster sizes. With an override, `T = max(override, T_min)`.
pub fn make_plan(
    budget: u64,
    alpha: f64,
    cluster_sizes: &[usize],
    steps_override: Option<usize>,
    gamma: f64,
) -> Result<BudgetPlan> {
    let (stats, n0, t_min) = plan_inputs(budget, alpha, cluster_sizes, gamma)?;
    let (steps, source) = match steps_override {
        Some(t) if t > t_min => (t, StepSource::Override),
        Some(_) => (t_min, StepSource::Override),
        None => (t_min, StepSource::MinSteps),
    };
    finish(budget, alpha, stats, n0, t_min, steps, gamma, source)
}

/// Build a plan for exactly `steps` rounds; errors when the budget cannot be
/// spent in that many rounds.
pub fn make_plan_exact(
    budget: u64,
    alpha: f64,
    cluster_sizes: &[usize],
    steps: usize,
    gamma: f64,
) -> Result<BudgetPlan> {
    let (stats, n0, t_min) = plan_inputs(budget, alpha, cluster_sizes, gamma)?;
    finish(budget, alpha, stats, n0, t_min, steps, gamma, StepSource::Exact)
}

fn plan_inputs(
    budget: u64,
    alpha: f64,
    cluster_sizes: &[usize],
    gamma: f64,
) -> Result<(crate::clustering::ClusterStats, f64, usize)> {
    if budget == 0 {
        return Err(Error::domain("budget", "must be at least 1"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::domain("alpha", format!("must lie in (0, 1], got {alpha}")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::domain("gamma", format!("must lie in (0, 1), got {gamma}")));
    }
    let sizes: Vec<f64> = cluster_sizes.iter().map(|&s| s as f64).collect();
    let stats = cluster_stats(&sizes)?;
    let n0 = alpha * stats.mean_size;
    let t_min = min_steps(budget as f64, n0, stats.cv_squared)?;
    Ok((stats, n0, t_min))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    budget: u64,
    alpha: f64,
    stats: crate::clustering::ClusterStats,
    n0: f64,
    t_min: usize,
    steps: usize,
    gamma: f64,
    step_source: StepSource,
) -> Result<BudgetPlan> {
    let b = optimal_b(budget as f64, n0, steps, stats.cv_squared)?;
    if b >= 1.0 {
        return Err(Error::Numeric(format!("b* rounded to {b}; budget too small for {steps} steps")));
    }
    Ok(BudgetPlan {
        budget,
        alpha,
        mean_cluster_size: stats.mean_size,
        n0,
        cv_squared: stats.cv_squared,
        steps,
        min_steps: t_min,
        b_star: b,
        b_raw: b,
        gamma,
        step_source,
    })
}

impl BudgetPlan {
    /// `T n0 (1 - b*) (1 + CV²)`; equals the budget for a tight plan.
    pub fn expected_spend(&self) -> f64 {
        self.steps as f64 * self.n0 * (1.0 - self.b_star) * (1.0 + self.cv_squared)
    }

    /// Flat `key = value` document with provenance comments.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# budget plan");
        let _ = writeln!(s, "# n0 = alpha * mean_cluster_size");
        let _ = writeln!(s, "# min_steps = ceil(budget / (n0 * (1 + cv_squared))) + 1");
        let _ = writeln!(s, "# b_star = 1 - budget / (n0 * steps * (1 + cv_squared))");
        let _ = writeln!(s, "budget = {}", self.budget);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "mean_cluster_size = {}", self.mean_cluster_size);
        let _ = writeln!(s, "n0 = {}", self.n0);
        let _ = writeln!(s, "cv_squared = {}", self.cv_squared);
        let _ = writeln!(s, "# steps from: {}", self.step_source.as_str());
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "min_steps = {}", self.min_steps);
        let _ = writeln!(s, "b_star = {}", self.b_star);
        let _ = writeln!(s, "b_raw = {}", self.b_raw);
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "step_source = {}", self.step_source.as_str());
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = std::collections::BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            let k = k.trim();
            const KNOWN: [&str; 11] = [
                "budget", "alpha", "mean_cluster_size", "n0", "cv_squared", "steps",
                "min_steps", "b_star", "b_raw", "gamma", "step_source",
            ];
            if !KNOWN.contains(&k) {
                return Err(Error::Parse { line: i + 1, msg: format!("unknown key `{k}`") });
            }
            kv.insert(k.to_string(), (i + 1, v.trim().to_string()));
        }
        fn get<T: std::str::FromStr>(
            kv: &std::collections::BTreeMap<String, (usize, String)>,
            key: &str,
        ) -> Result<T> {
            let (line, v) = kv.get(key).ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("missing key `{key}`"),
            })?;
            v.parse().map_err(|_| Error::Parse {
                line: *line,
                msg: format!("bad value for `{key}`: `{v}`"),
            })
        }
        let step_source = match get::<String>(&kv, "step_source")?.as_str() {
            "min_steps" => StepSource::MinSteps,
            "override" => StepSource::Override,
            "exact" => StepSource::Exact,
            other => {
                return Err(Error::Parse { line: 0, msg: format!("unknown step_source `{other}`") })
            }
        };
        let plan = BudgetPlan {
            budget: get(&kv, "budget")?,
            alpha: get(&kv, "alpha")?,
            mean_cluster_size: get(&kv, "mean_cluster_size")?,
            n0: get(&kv, "n0")?,
            cv_squared: get(&kv, "cv_squared")?,
            steps: get(&kv, "steps")?,
            min_steps: get(&kv, "min_steps")?,
            b_star: get(&kv, "b_star")?,
            b_raw: get(&kv, "b_raw")?,
            gamma: get(&kv, "gamma")?,
            step_source,
        };
        if !(0.0..1.0).contains(&plan.b_star) {
            return Err(Error::domain("b_star", format!("must lie in [0, 1), got {}", plan.b_star)));
        }
        Ok(plan)
    }
}

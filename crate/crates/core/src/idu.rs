//! Smoothed per-sample utility (IDU) and the gradient-based loss-change
//! prediction it folds in.
//!
//! All gradient quantities are nonnegative energies `g = ‖∇L‖²`. The
//! prediction mixes the gradient last seen for the chosen cluster with the
//! previous step's gradient:
//!
//! ```text
//! Ψ  = β² g_k + (1-β)² g_prev + 2β(1-β) √(g_k g_prev) cos φ
//! δ  = -η Ψ
//! β* = (g_prev - √(g_k g_prev) cos φ) / (g_k + g_prev - 2 √(g_k g_prev) cos φ)
//! ```
//!
//! and the utility recursion is `IDU ← (1-b)(L + δ) + b IDU_prev`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this denominator the two directions coincide and β* is a tie.
pub const BETA_DEGENERATE_EPS: f64 = 1e-12;

/// Scalars needed to predict the loss change of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientStats {
    /// Iteration at which the chosen cluster was last trained.
    pub last_selected_iter: Option<usize>,
    /// Gradient energy recorded at that selection.
    pub g_k: f64,
    /// Gradient energy of the previous step.
    pub g_prev: f64,
    /// Alignment between the cluster's stored direction and the previous step's.
    pub cos_phi: f64,
    /// Learning rate of the step being predicted.
    pub eta: f64,
}

impl GradientStats {
    pub fn validate(&self) -> Result<()> {
        if !(self.g_k >= 0.0 && self.g_k.is_finite()) {
            return Err(Error::domain("g_k", format!("must be nonnegative, got {}", self.g_k)));
        }
        if !(self.g_prev >= 0.0 && self.g_prev.is_finite()) {
            return Err(Error::domain("g_prev", format!("must be nonnegative, got {}", self.g_prev)));
        }
        if !(self.cos_phi.abs() <= 1.0) {
            return Err(Error::domain("cos_phi", format!("must lie in [-1, 1], got {}", self.cos_phi)));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::domain("eta", format!("must be nonnegative, got {}", self.eta)));
        }
        Ok(())
    }
}

/// Closed-form mixing weight, clamped into `[0, 1]`; 0.5 on a flat objective.
pub fn optimal_beta(g_k: f64, g_prev: f64, cos_phi: f64) -> f64 {
    let cross = (g_k * g_prev).sqrt() * cos_phi;
    let denom = g_k + g_prev - 2.0 * cross;
    if denom.abs() < BETA_DEGENERATE_EPS {
        return 0.5;
    }
    ((g_prev - cross) / denom).clamp(0.0, 1.0)
}

/// `Ψ`, the squared norm of the mixed gradient.
pub fn alignment_term(g_k: f64, g_prev: f64, cos_phi: f64, beta: f64) -> f64 {
    let cross = (g_k * g_prev).sqrt() * cos_phi;
    let psi = beta * beta * g_k + (1.0 - beta) * (1.0 - beta) * g_prev + 2.0 * beta * (1.0 - beta) * cross;
    // a squared norm; round-off near cancellation may dip below zero
    psi.max(0.0)
}

/// `δ = -η Ψ`, never positive.
pub fn predict_loss_change(stats: &GradientStats, beta: f64) -> Result<f64> {
    stats.validate()?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::domain("beta", format!("must lie in [0, 1], got {beta}")));
    }
    Ok(-stats.eta * alignment_term(stats.g_k, stats.g_prev, stats.cos_phi, beta))
}

/// β* and the resulting prediction in one call.
pub fn predict_with_optimal_beta(stats: &GradientStats) -> Result<(f64, f64)> {
    stats.validate()?;
    let beta = optimal_beta(stats.g_k, stats.g_prev, stats.cos_phi);
    Ok((beta, predict_loss_change(stats, beta)?))
}

/// One step of the utility recursion. No clamping.
pub fn update_idu(prev_idu: f64, current_loss: f64, predicted_change: f64, b: f64) -> f64 {
    (1.0 - b) * (current_loss + predicted_change) + b * prev_idu
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBound {
    pub eps_taylor: f64,
    pub eps_approx: f64,
}

impl ErrorBound {
    pub fn total(&self) -> f64 {
        self.eps_taylor + self.eps_approx
    }
}

/// Taylor remainder `½η² max‖∇²L‖ ‖∇L‖²` and reconstruction error
/// `η ‖∇L - (β* ∇L_k + (1-β*) ∇L_prev)‖²`.
pub fn error_bound(
    eta: f64,
    hessian_norm_max: f64,
    grad_energy: f64,
    grad_residual_energy: f64,
) -> Result<ErrorBound> {
    for (name, v) in [
        ("eta", eta),
        ("hessian_norm_max", hessian_norm_max),
        ("grad_energy", grad_energy),
        ("grad_residual_energy", grad_residual_energy),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::domain(name, format!("must be nonnegative, got {v}")));
        }
    }
    Ok(ErrorBound {
        eps_taylor: 0.5 * eta * eta * hessian_norm_max * grad_energy,
        eps_approx: eta * grad_residual_energy,
    })
}

/// Smoothing state shared across the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IduState {
    pub b: f64,
    pub iteration: usize,
}

impl IduState {
    pub fn new(b: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&b) {
            return Err(Error::domain("b", format!("must lie in [0, 1), got {b}")));
        }
        Ok(Self { b, iteration: 0 })
    }

    pub fn step(&self, prev_idu: f64, current_loss: f64, predicted_change: f64) -> f64 {
        update_idu(prev_idu, current_loss, predicted_change, self.b)
    }
}

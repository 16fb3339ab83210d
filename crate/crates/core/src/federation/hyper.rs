//! Step sizes and round count for noisy federated SGDA on a smooth,
//! strongly-concave-in-`w` problem.

use serde::Serialize;

use super::{IterateSelection, RoundConfig};
use crate::error::{Error, Result};
use crate::privacy::PrivacyBudget;
use crate::scalar::Scalar;

/// Lipschitz and smoothness constants of `f(θ, w; z)`, plus
/// `Δ_Φ = Φ(θ₀) − inf Φ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmoothnessRecord {
    pub l_theta: f64,
    pub l_w: f64,
    pub beta_theta: f64,
    pub beta_w: f64,
    pub beta_theta_w: f64,
    pub mu: f64,
    pub delta_phi: f64,
}

impl SmoothnessRecord {
    pub fn kappa_w(&self) -> f64 {
        self.beta_w / self.mu
    }

    pub fn kappa_theta_w(&self) -> f64 {
        self.beta_theta_w / self.mu
    }
}

/// Every quantity the calculator derived, for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceChoice {
    pub eta_theta: f64,
    pub eta_w: f64,
    /// `T` before rounding: the common factor times the smaller branch.
    pub rounds_exact: f64,
    pub branch_theta: f64,
    pub branch_w: f64,
    /// Batch size above which the sampling term stops dominating.
    pub min_batch: f64,
    pub kappa_w: f64,
    pub kappa_theta_w: f64,
}

/// `η_θ = 1/(16·κ_w·(β_θ + β_θw·κ_θw))`, `η_w = 1/β_w` and
///
/// ```text
/// T ≈ √(κ_w·[Δ_Φ·(β_θ + β_θw·κ_θw) + β_θw²·D²])·ε·ñ·√N
///     · min(1/(L_θ·√d_θ), β_w/(β_θw·L_w·√(κ_w·d_w)))
/// ```
///
/// The second branch is `+∞` when `β_θw = 0`. `T` is rounded up and raised
/// to the privacy floor `(ñ·√ε/(2m))²` for the suggested batch `m`.
#[allow(clippy::too_many_arguments)]
pub fn convergence_hyperparams<T: Scalar>(
    smooth: &SmoothnessRecord,
    budget: &PrivacyBudget<T>,
    diameter: f64,
    d_theta: usize,
    d_w: usize,
    n_tilde: usize,
    silos: usize,
) -> Result<(RoundConfig<T>, ConvergenceChoice)> {
    if !(smooth.mu > 0.0) {
        return Err(Error::InvalidArgument(format!("strong concavity μ must be > 0, got {}", smooth.mu)));
    }
    if !(smooth.beta_w > 0.0) {
        return Err(Error::InvalidArgument("β_w must be > 0".into()));
    }
    if n_tilde == 0 || silos == 0 || d_theta == 0 || d_w == 0 {
        return Err(Error::InvalidArgument("sizes must be positive".into()));
    }
    let eps = budget.epsilon.as_f64();
    let kw = smooth.kappa_w();
    let ktw = smooth.kappa_theta_w();
    let coupling = smooth.beta_theta + smooth.beta_theta_w * ktw;
    let eta_theta = 1.0 / (16.0 * kw * coupling);
    let eta_w = 1.0 / smooth.beta_w;

    let common = (kw * (smooth.delta_phi * coupling + smooth.beta_theta_w.powi(2) * diameter * diameter)).sqrt();
    let scale = common * eps * n_tilde as f64 * (silos as f64).sqrt();
    let branch_theta = 1.0 / (smooth.l_theta * (d_theta as f64).sqrt());
    let branch_w = if smooth.beta_theta_w == 0.0 {
        f64::INFINITY
    } else {
        smooth.beta_w / (smooth.beta_theta_w * smooth.l_w * (kw * d_w as f64).sqrt())
    };
    let rounds_exact = scale * branch_theta.min(branch_w);
    if !rounds_exact.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "round count is not finite (ε = {eps}); supply T directly for non-private runs"
        )));
    }

    let root_n = (silos as f64).sqrt();
    let mb_theta = eps * n_tilde as f64 * smooth.l_theta / (root_n * (d_theta as f64 * common * common).sqrt());
    let mb_w = if smooth.beta_theta_w == 0.0 {
        f64::INFINITY
    } else {
        eps * n_tilde as f64 * smooth.l_w * kw.sqrt()
            / (root_n * smooth.beta_theta_w * smooth.beta_w * (d_w as f64 * common * common).sqrt())
    };
    let min_batch = mb_theta.min(mb_w);
    let batch = (min_batch.ceil() as usize).clamp(1, n_tilde);
    let floor = crate::privacy::min_rounds(eps, n_tilde, batch);
    let rounds = (rounds_exact.ceil().max(floor.ceil()) as usize).max(1);

    let mut cfg = RoundConfig::new(T::lit(eta_theta), T::lit(eta_w), rounds, batch);
    cfg.selection = IterateSelection::Random;
    Ok((
        cfg,
        ConvergenceChoice {
            eta_theta,
            eta_w,
            rounds_exact,
            branch_theta,
            branch_w,
            min_batch,
            kappa_w: kw,
            kappa_theta_w: ktw,
        },
    ))
}

//! Simulated cross-silo training: the private fair method, generic noisy
//! federated SGDA, topology routing and the step-size calculator.

mod hyper;
mod sgda;
mod steffle;
mod topology;

use std::io::Write;
use std::path::Path;

use ndarray::{Array, Dimension};
use rand::seq::index;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fairness::DualMatrix;
use crate::scalar::Scalar;

pub use hyper::{convergence_hyperparams, SmoothnessRecord, ConvergenceChoice};
pub use sgda::{run_fed_sgda, MinMaxProblem, QuadraticSaddle, SgdaOutput};
pub use steffle::{run_steffle, SteffleConfig, SteffleOutput};
pub use topology::{route_round, Topology, TopologyMode};

/// Projection onto the Frobenius ball of radius `w.diameter`.
pub fn project_ball<T: Scalar>(w: DualMatrix<T>) -> DualMatrix<T> {
    w.projected()
}

/// Projection of a flat vector onto the ℓ2 ball of the given radius.
pub fn project_vector<T: Scalar, D: Dimension>(v: &mut Array<T, D>, radius: T) {
    let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if norm > radius {
        let scale = radius / norm;
        v.mapv_inplace(|x| x * scale);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SamplingScheme {
    WithoutReplacement,
    WithReplacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IterateSelection {
    /// `θ_t̂` with `t̂` uniform over `{1, …, T}`.
    Random,
    Final,
}

/// `η_θ ← factor·η_θ` every `every` rounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrDecay<T> {
    pub factor: T,
    pub every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundConfig<T> {
    pub eta_theta: T,
    pub eta_w: T,
    pub rounds: usize,
    /// Per-silo minibatch size `m`.
    pub batch: usize,
    pub lr_decay: Option<LrDecay<T>>,
    /// `None` selects the algorithm's own scheme.
    pub sampling: Option<SamplingScheme>,
    pub selection: IterateSelection,
}

impl<T: Scalar> RoundConfig<T> {
    pub fn new(eta_theta: T, eta_w: T, rounds: usize, batch: usize) -> Self {
        Self {
            eta_theta,
            eta_w,
            rounds,
            batch,
            lr_decay: None,
            sampling: None,
            selection: IterateSelection::Random,
        }
    }

    /// `T = epochs·⌈ñ/m⌉` rounds, with `η_θ` decaying by `factor` every
    /// `decay_epochs` epochs.
    pub fn from_epochs(
        eta_theta: T,
        eta_w: T,
        epochs: usize,
        n_tilde: usize,
        batch: usize,
        decay: Option<(T, usize)>,
    ) -> Result<Self> {
        if batch == 0 || n_tilde == 0 {
            return Err(Error::InvalidArgument("batch and silo size must be positive".into()));
        }
        let per_epoch = n_tilde.div_ceil(batch);
        let mut cfg = Self::new(eta_theta, eta_w, epochs * per_epoch, batch);
        cfg.lr_decay = decay.map(|(factor, every)| LrDecay { factor, every: every * per_epoch });
        Ok(cfg)
    }

    pub fn validate(&self, n_tilde: usize) -> Result<()> {
        if !(self.eta_theta > T::zero()) || !(self.eta_w >= T::zero()) {
            return Err(Error::InvalidArgument("step sizes must be positive".into()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch size must be ≥ 1".into()));
        }
        if self.batch > n_tilde {
            return Err(Error::InvalidArgument(format!("batch {} exceeds silo size {n_tilde}", self.batch)));
        }
        if let Some(decay) = self.lr_decay {
            if decay.every == 0 || !(decay.factor > T::zero()) {
                return Err(Error::InvalidArgument("learning-rate decay needs factor > 0 and period ≥ 1".into()));
            }
        }
        Ok(())
    }

    pub fn eta_theta_at(&self, round: usize) -> T {
        match self.lr_decay {
            Some(LrDecay { factor, every }) => {
                let mut eta = self.eta_theta;
                for _ in 0..round / every {
                    eta *= factor;
                }
                eta
            }
            None => self.eta_theta,
        }
    }
}

/// Sorted minibatch of positions into a silo of `len` rows. A batch that
/// covers the silo is the whole silo in order.
pub fn draw_batch(len: usize, m: usize, scheme: SamplingScheme, rng: &mut impl Rng) -> Vec<usize> {
    if m >= len {
        return (0..len).collect();
    }
    let mut picks: Vec<usize> = match scheme {
        SamplingScheme::WithoutReplacement => index::sample(rng, len, m).into_vec(),
        SamplingScheme::WithReplacement => (0..m).map(|_| rng.random_range(0..len)).collect(),
    };
    picks.sort_unstable();
    picks
}

/// `t̂` uniform over `{1, …, T}`; `0` when `T = 0`.
pub fn draw_round(rounds: usize, rng: &mut impl Rng) -> usize {
    if rounds == 0 {
        0
    } else {
        rng.random_range(1..=rounds)
    }
}

/// `x₀ + Σ_j w_j·(x_j − x₀)`; returns `x₀` bit-exactly when all inputs
/// coincide.
pub fn weighted_mean<T: Scalar, D: Dimension>(items: &[(T, &Array<T, D>)]) -> Array<T, D> {
    let base = items[0].1;
    let mut out = base.clone();
    for (weight, value) in items {
        ndarray::Zip::from(&mut out).and(*value).and(base).for_each(|o, &v, &b| {
            if v != b {
                *o += *weight * (v - b);
            }
        });
    }
    out
}

/// Per-round diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub eta_theta: f64,
    /// ℓ2 norm of the aggregated loss gradient (or `H_θ` for SGDA).
    pub loss_grad_norm: f64,
    pub psi_theta_grad_norm: f64,
    pub psi_w_grad_norm: f64,
    /// Frobenius norm of the dual variable after the update.
    pub w_norm: f64,
    pub participating: Vec<usize>,
    pub objective: Option<f64>,
    pub sigma_theta_sq: f64,
    pub sigma_w_sq: f64,
}

/// Writes one JSON object per line.
pub fn write_trace(records: &[RoundRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

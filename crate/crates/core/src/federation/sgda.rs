//! Noisy federated stochastic gradient descent-ascent for a generic
//! min-max problem `min_θ max_{w ∈ 𝒲} (1/N)·Σ_j F_j(θ, w)`.

use ndarray::Array1;
use rayon::prelude::*;

use super::hyper::SmoothnessRecord;
use super::{draw_batch, draw_round, project_vector, weighted_mean, IterateSelection, RoundConfig, RoundRecord, SamplingScheme};
use crate::error::{Error, Result};
use crate::privacy::{perturb_in_place, sgda_noise, stream, NoiseScales, PrivacyBudget, StreamPurpose};
use crate::scalar::Scalar;

/// Per-sample oracle for `f(θ, w; z)`, strongly concave in `w` over the
/// ℓ2 ball of radius [`MinMaxProblem::diameter`].
pub trait MinMaxProblem<T: Scalar>: Sync {
    type Sample: Sync;

    fn dim_theta(&self) -> usize;
    fn dim_w(&self) -> usize;
    fn diameter(&self) -> T;
    fn value(&self, theta: &Array1<T>, w: &Array1<T>, z: &Self::Sample) -> T;
    /// `(∇_θ f, ∇_w f)`.
    fn grads(&self, theta: &Array1<T>, w: &Array1<T>, z: &Self::Sample) -> (Array1<T>, Array1<T>);
    fn smoothness(&self) -> SmoothnessRecord;

    /// `∇Φ(θ)` over `data` when it is known in closed form.
    fn phi_grad(&self, _theta: &Array1<T>, _data: &[&Self::Sample]) -> Option<Array1<T>> {
        None
    }
}

/// `f(θ, w; z) = ½‖θ‖² + ⟨z, θ⟩ − ‖w − θ‖²`.
///
/// `w*(θ) = θ`, so `Φ(θ) = ½‖θ‖² + ⟨z̄, θ⟩` and `∇Φ(θ) = θ + z̄` while
/// `‖θ‖` stays inside the dual ball. Constants: `β_θ = 1`, `β_w = μ = 2`,
/// `β_θw = 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSaddle {
    pub dim: usize,
    pub radius: f64,
    /// Nominal Lipschitz constants on the region of interest, used only for
    /// noise calibration.
    pub l_theta: f64,
    pub l_w: f64,
    pub delta_phi: f64,
}

impl QuadraticSaddle {
    pub fn new(dim: usize, radius: f64) -> Self {
        Self { dim, radius, l_theta: 1.0, l_w: 1.0, delta_phi: 1.0 }
    }
}

impl<T: Scalar> MinMaxProblem<T> for QuadraticSaddle {
    type Sample = Array1<T>;

    fn dim_theta(&self) -> usize {
        self.dim
    }

    fn dim_w(&self) -> usize {
        self.dim
    }

    fn diameter(&self) -> T {
        T::lit(self.radius)
    }

    fn value(&self, theta: &Array1<T>, w: &Array1<T>, z: &Array1<T>) -> T {
        let gap = w - theta;
        T::lit(0.5) * theta.dot(theta) + z.dot(theta) - gap.dot(&gap)
    }

    fn grads(&self, theta: &Array1<T>, w: &Array1<T>, z: &Array1<T>) -> (Array1<T>, Array1<T>) {
        let two = T::lit(2.0);
        let gap = w - theta;
        (theta + z + &gap.mapv(|v| two * v), gap.mapv(|v| -two * v))
    }

    fn smoothness(&self) -> SmoothnessRecord {
        SmoothnessRecord {
            l_theta: self.l_theta,
            l_w: self.l_w,
            beta_theta: 1.0,
            beta_w: 2.0,
            beta_theta_w: 2.0,
            mu: 2.0,
            delta_phi: self.delta_phi,
        }
    }

    fn phi_grad(&self, theta: &Array1<T>, data: &[&Array1<T>]) -> Option<Array1<T>> {
        let mut mean = Array1::zeros(self.dim);
        for z in data {
            mean += *z;
        }
        let n = T::from_usize_lossy(data.len());
        Some(theta + &mean.mapv(|v| v / n))
    }
}

#[derive(Debug, Clone)]
pub struct SgdaOutput<T> {
    pub theta_hat: Array1<T>,
    pub final_theta: Array1<T>,
    pub final_w: Array1<T>,
    pub selected_round: usize,
    /// `objective` holds `‖∇Φ(θ_t)‖²` when the problem provides `∇Φ`.
    pub trace: Vec<RoundRecord>,
    pub noise: Vec<NoiseScales<T>>,
}

/// Runs `cfg.rounds` rounds from `(θ₀, w₀ = 0)`. Silos sample with
/// replacement unless `cfg.sampling` says otherwise. The dual step ascends
/// along the aggregated `w`-gradients.
pub fn run_fed_sgda<T: Scalar, P: MinMaxProblem<T>>(
    problem: &P,
    silos: &[Vec<P::Sample>],
    budget: &PrivacyBudget<T>,
    cfg: &RoundConfig<T>,
    theta0: Array1<T>,
    seed: u64,
    parallel: bool,
) -> Result<SgdaOutput<T>>
where
    P::Sample: Send,
{
    if silos.is_empty() || silos.iter().any(Vec::is_empty) {
        return Err(Error::Topology("every silo needs at least one sample".into()));
    }
    if theta0.len() != problem.dim_theta() {
        return Err(Error::DimensionMismatch { expected: problem.dim_theta(), got: theta0.len() });
    }
    let min_silo = silos.iter().map(Vec::len).min().unwrap_or(0);
    cfg.validate(min_silo)?;
    let smooth = problem.smoothness();
    if !(smooth.mu > 0.0) {
        return Err(Error::InvalidArgument("strong concavity μ must be > 0".into()));
    }
    let scheme = cfg.sampling.unwrap_or(SamplingScheme::WithReplacement);
    let noise: Vec<NoiseScales<T>> = silos
        .iter()
        .map(|s| sgda_noise(budget, cfg.rounds, s.len(), cfg.batch, T::lit(smooth.l_theta), T::lit(smooth.l_w)))
        .collect::<Result<_>>()?;
    let max_sigma = noise.iter().fold((0.0f64, 0.0f64), |acc, s| {
        (acc.0.max(s.sigma_theta_sq.as_f64()), acc.1.max(s.sigma_w_sq.as_f64()))
    });
    let all: Vec<&P::Sample> = silos.iter().flatten().collect();

    let selected_round = match cfg.selection {
        IterateSelection::Random => draw_round(cfg.rounds, &mut stream(seed, 0, 0, StreamPurpose::IterateSelection)),
        IterateSelection::Final => cfg.rounds,
    };
    let radius = problem.diameter();
    let mut theta = theta0;
    let mut w: Array1<T> = Array1::zeros(problem.dim_w());
    let mut theta_hat = if selected_round == 0 { Some(theta.clone()) } else { None };
    let mut trace = Vec::with_capacity(cfg.rounds);

    for t in 0..cfg.rounds {
        let round = t as u64;
        let (theta_ref, w_ref) = (&theta, &w);
        let silo_step = |j: usize| {
            let data = &silos[j];
            let mut rng = stream(seed, j as u64, round, StreamPurpose::Sampling);
            let batch = draw_batch(data.len(), cfg.batch, scheme, &mut rng);
            let mut gt = Array1::zeros(problem.dim_theta());
            let mut gw = Array1::zeros(problem.dim_w());
            for &p in &batch {
                let (a, b) = problem.grads(theta_ref, w_ref, &data[p]);
                gt += &a;
                gw += &b;
            }
            let m = T::from_usize_lossy(batch.len());
            gt.mapv_inplace(|v| v / m);
            gw.mapv_inplace(|v| v / m);
            perturb_in_place(&mut gt, noise[j].sigma_theta_sq, &mut stream(seed, j as u64, round, StreamPurpose::NoiseTheta));
            perturb_in_place(&mut gw, noise[j].sigma_w_sq, &mut stream(seed, j as u64, round, StreamPurpose::NoiseW));
            (batch.len(), gt, gw)
        };
        let messages: Vec<(usize, Array1<T>, Array1<T>)> = if parallel {
            (0..silos.len()).into_par_iter().map(silo_step).collect()
        } else {
            (0..silos.len()).map(silo_step).collect()
        };
        let total: usize = messages.iter().map(|m| m.0).sum();
        let share = |m: usize| T::from_usize_lossy(m) / T::from_usize_lossy(total);
        let h_theta = weighted_mean(&messages.iter().map(|m| (share(m.0), &m.1)).collect::<Vec<_>>());
        let h_w = weighted_mean(&messages.iter().map(|m| (share(m.0), &m.2)).collect::<Vec<_>>());

        let eta = cfg.eta_theta_at(t);
        theta.scaled_add(-eta, &h_theta);
        w.scaled_add(cfg.eta_w, &h_w);
        project_vector(&mut w, radius);
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("iterates diverged at round {t}")));
        }
        if t + 1 == selected_round {
            theta_hat = Some(theta.clone());
        }
        let gap = problem.phi_grad(&theta, &all).map(|g| g.dot(&g).as_f64());
        trace.push(RoundRecord {
            round: t + 1,
            eta_theta: eta.as_f64(),
            loss_grad_norm: h_theta.dot(&h_theta).sqrt().as_f64(),
            psi_theta_grad_norm: 0.0,
            psi_w_grad_norm: h_w.dot(&h_w).sqrt().as_f64(),
            w_norm: w.dot(&w).sqrt().as_f64(),
            participating: (0..silos.len()).collect(),
            objective: gap,
            sigma_theta_sq: max_sigma.0,
            sigma_w_sq: max_sigma.1,
        });
    }

    Ok(SgdaOutput {
        theta_hat: theta_hat.unwrap_or_else(|| theta.clone()),
        final_theta: theta,
        final_w: w,
        selected_round,
        trace,
        noise,
    })
}

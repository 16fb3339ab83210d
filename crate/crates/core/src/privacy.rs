//! Gaussian-mechanism calibration, sensitivity bounds, clipping and noise.

use ndarray::{Array, Array1, Dimension};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `(ε, δ)` target plus the lower bound `ρ` on sensitive-class frequencies.
/// `epsilon = ∞` disables noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget<T> {
    pub epsilon: T,
    pub delta: T,
    pub rho: T,
}

impl<T: Scalar> PrivacyBudget<T> {
    pub fn new(epsilon: T, delta: T, rho: T) -> Result<Self> {
        if !(epsilon > T::zero()) {
            return Err(Error::Privacy(format!("epsilon must be > 0, got {epsilon}")));
        }
        if !(delta > T::zero() && delta < T::one()) {
            return Err(Error::Privacy(format!("delta must lie in (0, 1), got {delta}")));
        }
        if !(rho > T::zero() && rho < T::one()) {
            return Err(Error::Privacy(format!("rho must lie in (0, 1), got {rho}")));
        }
        if epsilon.is_finite() && epsilon > T::lit(2.0) * delta.recip().ln() {
            return Err(Error::Privacy(format!(
                "epsilon {epsilon} exceeds 2·ln(1/delta) = {}",
                T::lit(2.0) * delta.recip().ln()
            )));
        }
        Ok(Self { epsilon, delta, rho })
    }

    pub fn non_private(delta: T, rho: T) -> Result<Self> {
        Self::new(T::infinity(), delta, rho)
    }

    pub fn is_private(&self) -> bool {
        self.epsilon.is_finite()
    }

    /// The empirical `p̂_S` of any silo that uses this budget must not fall
    /// below `rho`.
    pub fn check_rho(&self, observed_min: T) -> Result<()> {
        if observed_min < self.rho {
            return Err(Error::Privacy(format!(
                "observed minimum sensitive frequency {observed_min} is below rho = {}",
                self.rho
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseScales<T> {
    pub sigma_theta_sq: T,
    pub sigma_w_sq: T,
}

impl<T: Scalar> NoiseScales<T> {
    pub fn zero() -> Self {
        Self { sigma_theta_sq: T::zero(), sigma_w_sq: T::zero() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityBound<T> {
    pub delta_theta: T,
    pub delta_w: T,
}

/// Smallest round count admitted by the calibration, `(ñ·√ε/(2m))²`.
pub fn min_rounds<T: Scalar>(epsilon: T, n_tilde: usize, batch: usize) -> T {
    let r = T::from_usize_lossy(n_tilde) * epsilon.sqrt() / (T::lit(2.0) * T::from_usize_lossy(batch));
    r * r
}

fn check_calibration<T: Scalar>(budget: &PrivacyBudget<T>, rounds: usize, n_tilde: usize, batch: usize) -> Result<()> {
    if n_tilde == 0 || batch == 0 {
        return Err(Error::Privacy("silo size and batch size must be positive".into()));
    }
    if budget.epsilon > T::lit(2.0) * budget.delta.recip().ln() {
        return Err(Error::Privacy("epsilon exceeds 2·ln(1/delta)".into()));
    }
    let needed = min_rounds(budget.epsilon, n_tilde, batch);
    if T::from_usize_lossy(rounds) < needed {
        return Err(Error::Privacy(format!(
            "T = {rounds} rounds is below the required (ñ√ε/(2m))² = {needed} for ñ = {n_tilde}, m = {batch}"
        )));
    }
    Ok(())
}

/// Noise variances for the fair federated method:
/// `σ_w² = 16·T·ln(1/δ)/(ε²ñ²ρ)` and `σ_θ² = L_θ²·D²·σ_w²`.
pub fn steffle_noise<T: Scalar>(
    budget: &PrivacyBudget<T>,
    rounds: usize,
    n_tilde: usize,
    batch: usize,
    l_theta: T,
    diameter: T,
) -> Result<NoiseScales<T>> {
    if !budget.is_private() {
        return Ok(NoiseScales::zero());
    }
    check_calibration(budget, rounds, n_tilde, batch)?;
    let n = T::from_usize_lossy(n_tilde);
    let base = T::lit(16.0) * T::from_usize_lossy(rounds) * budget.delta.recip().ln()
        / (budget.epsilon * budget.epsilon * n * n * budget.rho);
    Ok(NoiseScales { sigma_theta_sq: l_theta * l_theta * diameter * diameter * base, sigma_w_sq: base })
}

/// Noise variances for generic federated SGDA:
/// `σ² = 8·T·L²·ln(1/δ)/(ε²ñ²)` with `L = L_θ` or `L_w`.
pub fn sgda_noise<T: Scalar>(
    budget: &PrivacyBudget<T>,
    rounds: usize,
    n_tilde: usize,
    batch: usize,
    l_theta: T,
    l_w: T,
) -> Result<NoiseScales<T>> {
    if !budget.is_private() {
        return Ok(NoiseScales::zero());
    }
    check_calibration(budget, rounds, n_tilde, batch)?;
    let n = T::from_usize_lossy(n_tilde);
    let base = T::lit(8.0) * T::from_usize_lossy(rounds) * budget.delta.recip().ln()
        / (budget.epsilon * budget.epsilon * n * n);
    Ok(NoiseScales { sigma_theta_sq: l_theta * l_theta * base, sigma_w_sq: l_w * l_w * base })
}

/// Adjacency bounds on the batch-mean ψ-gradients:
/// `Δ_θ = 8·D²·L_θ²/(|B|²·ρ)`, `Δ_W = 8/(|B|²·ρ)`.
///
/// Both dominate the squared ℓ2 change of the batch mean when one
/// sensitive attribute in the batch is replaced.
pub fn sensitivity<T: Scalar>(diameter: T, l_theta: T, batch: usize, rho: T) -> Result<SensitivityBound<T>> {
    if batch == 0 {
        return Err(Error::InvalidArgument("batch must be ≥ 1".into()));
    }
    if !(rho > T::zero()) {
        return Err(Error::InvalidArgument(format!("rho must be > 0, got {rho}")));
    }
    let b = T::from_usize_lossy(batch);
    let delta_w = T::lit(8.0) / (b * b * rho);
    Ok(SensitivityBound { delta_theta: diameter * diameter * l_theta * l_theta * delta_w, delta_w })
}

/// `grad·min(1, threshold/‖grad‖₂)`; returns the input untouched when it is
/// already inside the ball.
pub fn clip<T: Scalar, D: Dimension>(grad: &Array<T, D>, threshold: T) -> Array<T, D> {
    let mut out = grad.clone();
    clip_in_place(&mut out, threshold);
    out
}

pub fn clip_in_place<T: Scalar, D: Dimension>(grad: &mut Array<T, D>, threshold: T) {
    let norm = grad.iter().map(|&v| v * v).sum::<T>().sqrt();
    if norm > threshold {
        let scale = threshold / norm;
        grad.mapv_inplace(|v| v * scale);
    }
}

/// Adds i.i.d. `N(0, sigma_sq)` entries. `sigma_sq = 0` returns the input
/// bit-exactly and draws nothing.
pub fn perturb<T: Scalar, D: Dimension>(value: &Array<T, D>, sigma_sq: T, rng: &mut ChaCha8Rng) -> Array<T, D> {
    let mut out = value.clone();
    perturb_in_place(&mut out, sigma_sq, rng);
    out
}

pub fn perturb_in_place<T: Scalar, D: Dimension>(value: &mut Array<T, D>, sigma_sq: T, rng: &mut ChaCha8Rng) {
    assert!(sigma_sq >= T::zero(), "negative noise variance");
    if sigma_sq == T::zero() {
        return;
    }
    let sigma = sigma_sq.as_f64().sqrt();
    for v in value.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v += T::lit(sigma * z);
    }
}

/// A vector of `N(0, sigma_sq)` entries.
pub fn gaussian<T: Scalar>(len: usize, sigma_sq: T, rng: &mut ChaCha8Rng) -> Array1<T> {
    let mut out = Array1::zeros(len);
    perturb_in_place(&mut out, sigma_sq, rng);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    Sampling = 1,
    NoiseTheta = 2,
    NoiseW = 3,
    IterateSelection = 4,
    Partition = 5,
    Init = 6,
}

/// Independent stream for `(master seed, silo, round, purpose)`.
pub fn stream(master: u64, silo: u64, round: u64, purpose: StreamPurpose) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&silo.to_le_bytes());
    seed[16..24].copy_from_slice(&round.to_le_bytes());
    seed[24..].copy_from_slice(&(purpose as u64).to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

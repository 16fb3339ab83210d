//! Noisy federated stochastic gradient descent-ascent on the fair min-max
//! objective, private with respect to the sensitive attribute only.
//!
//! Per round: every non-sensitive silo `j` draws a minibatch from `P_j`,
//! averages clipped per-sample loss gradients into `g_j` and hands the model
//! outputs `(F, ∇F)` of its rows to the sensitive holders. Each sensitive
//! silo `c` averages ψ-gradients over the sampled rows it owns and adds
//! Gaussian noise. The server then takes
//!
//! ```text
//! θ ← θ − η_θ·(Σ_j a_j·g_j + λ·Σ_c b_c·h_{c,θ})
//! W ← Π(W + λ·η_w·Σ_c b_c·h_{c,W})
//! ```
//!
//! with `a_j`, `b_c` the silos' shares of the sampled rows. For equal silos
//! these are `1/N`.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use super::topology::{route_round, Topology};
use super::{draw_batch, draw_round, weighted_mean, IterateSelection, RoundConfig, RoundRecord, SamplingScheme};
use crate::dataio::{conditional_sensitive, sensitive_distribution, SensitiveDistribution, TabularDataset};
use crate::error::{Error, Result};
use crate::fairness::{fermi_objective, psi_grads_from_output, psi_theta_grad_bound, DualMatrix, FairnessNotion, FairnessSpec};
use crate::model::ModelParams;
use crate::privacy::{clip_in_place, perturb_in_place, steffle_noise, stream, NoiseScales, PrivacyBudget, StreamPurpose};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct SteffleConfig<T> {
    pub round: RoundConfig<T>,
    /// Radius `D` of the Frobenius ball holding each dual block.
    pub diameter: T,
    /// Per-sample loss-gradient clipping threshold; `∞` disables clipping.
    pub clip: T,
    /// Lipschitz constant `L_θ` of the model outputs.
    pub l_theta: T,
    /// Evaluate the penalized objective on the full training set each round.
    pub probe_objective: bool,
    pub parallel: bool,
    pub init: Option<ModelParams<T>>,
}

impl<T: Scalar> SteffleConfig<T> {
    /// `L_θ` follows the clipping threshold, or 1 when clipping is off.
    pub fn new(round: RoundConfig<T>, diameter: T, clip: T) -> Self {
        let l_theta = if clip.is_finite() { clip } else { T::one() };
        Self { round, diameter, clip, l_theta, probe_objective: false, parallel: false, init: None }
    }
}

#[derive(Debug, Clone)]
pub struct SteffleOutput<T> {
    pub theta_hat: ModelParams<T>,
    pub final_theta: ModelParams<T>,
    /// Round whose iterate was returned.
    pub selected_round: usize,
    /// One block for demographic parity, one per label for equalized odds.
    pub duals: Vec<DualMatrix<T>>,
    pub trace: Vec<RoundRecord>,
    /// Noise variances of each sensitive silo.
    pub noise: Vec<NoiseScales<T>>,
}

impl<T: Scalar> SteffleOutput<T> {
    pub fn max_noise(&self) -> NoiseScales<T> {
        self.noise.iter().fold(NoiseScales::zero(), |acc, s| NoiseScales {
            sigma_theta_sq: acc.sigma_theta_sq.max(s.sigma_theta_sq),
            sigma_w_sq: acc.sigma_w_sq.max(s.sigma_w_sq),
        })
    }
}

/// `P̂_S`, or `P̂_{S|Y=y}` per label, computed once over all silos.
enum SensitiveStats<T> {
    Marginal(SensitiveDistribution<T>),
    PerLabel(Vec<SensitiveDistribution<T>>),
}

impl<T: Scalar> SensitiveStats<T> {
    fn for_row(&self, label: usize) -> (usize, &SensitiveDistribution<T>) {
        match self {
            Self::Marginal(d) => (0, d),
            Self::PerLabel(ds) => (label, &ds[label]),
        }
    }

    fn rho(&self) -> T {
        match self {
            Self::Marginal(d) => d.rho,
            Self::PerLabel(ds) => ds.iter().map(|d| d.rho).fold(T::infinity(), T::min),
        }
    }
}

struct NonSensitiveMessage<T> {
    rows: Vec<usize>,
    grad: Array1<T>,
    outputs: Vec<(Array1<T>, Array2<T>)>,
}

struct SensitiveMessage<T> {
    weight_rows: usize,
    theta: Array1<T>,
    w: Vec<Array2<T>>,
}

fn map_silos<R: Send, F>(count: usize, parallel: bool, f: F) -> Result<Vec<R>>
where
    F: Fn(usize) -> Result<R> + Sync + Send,
{
    if parallel {
        (0..count).into_par_iter().map(&f).collect()
    } else {
        (0..count).map(f).collect()
    }
}

fn l2<T: Scalar>(values: impl Iterator<Item = T>) -> f64 {
    values.map(|v| v * v).sum::<T>().sqrt().as_f64()
}

pub fn run_steffle<T: Scalar>(
    dataset: &TabularDataset<T>,
    topology: &Topology,
    spec: &FairnessSpec<T>,
    budget: &PrivacyBudget<T>,
    cfg: &SteffleConfig<T>,
    seed: u64,
) -> Result<SteffleOutput<T>> {
    let rc = &cfg.round;
    if topology.n() != dataset.n() {
        return Err(Error::Topology(format!("topology covers {} rows, dataset has {}", topology.n(), dataset.n())));
    }
    let min_silo = topology.nonsensitive.iter().map(Vec::len).min().unwrap_or(0);
    rc.validate(min_silo)?;
    if !(cfg.diameter > T::zero()) {
        return Err(Error::InvalidArgument("dual radius D must be > 0".into()));
    }
    if !(cfg.clip > T::zero()) || !(cfg.l_theta > T::zero()) {
        return Err(Error::InvalidArgument("clip threshold and L_θ must be > 0".into()));
    }
    let scheme = rc.sampling.unwrap_or(SamplingScheme::WithoutReplacement);
    let fair = spec.lambda > T::zero();
    let (l, k) = (dataset.l, dataset.k);

    let stats = match spec.notion {
        FairnessNotion::DemographicParity => SensitiveStats::Marginal(sensitive_distribution(dataset)?),
        FairnessNotion::EqualizedOdds => SensitiveStats::PerLabel(conditional_sensitive(dataset)?.per_label),
    };
    if budget.is_private() {
        budget.check_rho(stats.rho())?;
    }
    let noise: Vec<NoiseScales<T>> = (0..topology.sensitive.len())
        .map(|c| {
            let expected = topology.expected_sensitive_batch(c, rc.batch).floor().max(1.0) as usize;
            steffle_noise(budget, rc.rounds, topology.sensitive[c].len(), expected, cfg.l_theta, cfg.diameter)
        })
        .collect::<Result<_>>()?;
    let max_sigma = noise.iter().fold((0.0f64, 0.0f64), |acc, s| {
        (acc.0.max(s.sigma_theta_sq.as_f64()), acc.1.max(s.sigma_w_sq.as_f64()))
    });
    let psi_bound = psi_theta_grad_bound(cfg.diameter, cfg.l_theta, stats.rho());
    let probe_dist = if cfg.probe_objective { Some(sensitive_distribution(dataset)?) } else { None };

    let selected_round = match rc.selection {
        IterateSelection::Random => draw_round(rc.rounds, &mut stream(seed, 0, 0, StreamPurpose::IterateSelection)),
        IterateSelection::Final => rc.rounds,
    };
    let mut theta = match &cfg.init {
        Some(init) => {
            if init.classes() != l || init.features() != dataset.d() {
                return Err(Error::DimensionMismatch { expected: l * (dataset.d() + 1), got: init.d_theta() });
            }
            init.clone()
        }
        None => ModelParams::zeros(l, dataset.d()),
    };
    let blocks = match spec.notion {
        FairnessNotion::DemographicParity => 1,
        FairnessNotion::EqualizedOdds => l,
    };
    let mut duals: Vec<DualMatrix<T>> = (0..blocks).map(|_| DualMatrix::zeros(k, l, cfg.diameter)).collect();
    let mut theta_hat = if selected_round == 0 { Some(theta.clone()) } else { None };
    let mut trace = Vec::with_capacity(rc.rounds);
    let d_theta = theta.d_theta();

    for t in 0..rc.rounds {
        let round = t as u64;
        let theta_ref = &theta;
        let non_sensitive = map_silos(topology.nonsensitive.len(), cfg.parallel, |j| {
            let silo = &topology.nonsensitive[j];
            let mut rng = stream(seed, j as u64, round, StreamPurpose::Sampling);
            let rows: Vec<usize> = draw_batch(silo.len(), rc.batch, scheme, &mut rng).into_iter().map(|p| silo[p]).collect();
            let mut grad = Array1::zeros(d_theta);
            let mut outputs = Vec::new();
            for &i in &rows {
                let x = dataset.row(i);
                let (_, mut g) = theta_ref.loss_and_grad(x, dataset.labels[i])?;
                clip_in_place(&mut g, cfg.clip);
                grad += &g;
                if fair {
                    outputs.push((theta_ref.predict_probs(x)?.0, theta_ref.probs_jacobian(x)?));
                }
            }
            let count = T::from_usize_lossy(rows.len());
            grad.mapv_inplace(|v| v / count);
            Ok(NonSensitiveMessage { rows, grad, outputs })
        })?;

        let total_rows: usize = non_sensitive.iter().map(|m| m.rows.len()).sum();
        let items: Vec<(T, &Array1<T>)> = non_sensitive
            .iter()
            .map(|m| (T::from_usize_lossy(m.rows.len()) / T::from_usize_lossy(total_rows), &m.grad))
            .collect();
        let loss_grad = weighted_mean(&items);
        let mut participating = Vec::new();
        let mut h_theta = None;
        let mut h_w: Option<Vec<Array2<T>>> = None;

        if fair {
            let batches: Vec<Vec<usize>> = non_sensitive.iter().map(|m| m.rows.clone()).collect();
            let routed = route_round(topology, &batches)?;
            let duals_ref = &duals;
            let messages = map_silos(topology.sensitive.len(), cfg.parallel, |c| {
                let entries = &routed[c];
                if entries.is_empty() && !topology.dummy_noise {
                    return Ok(None);
                }
                let mut theta_sum = Array1::zeros(d_theta);
                let mut w_sum: Vec<Array2<T>> = (0..blocks).map(|_| Array2::zeros((k, l))).collect();
                for &(j, pos) in entries {
                    let i = non_sensitive[j].rows[pos];
                    let (probs, jac) = &non_sensitive[j].outputs[pos];
                    let (block, dist) = stats.for_row(dataset.labels[i]);
                    let (mut gt, gw) = psi_grads_from_output(probs, jac, &duals_ref[block], dataset.sensitive[i], dist);
                    clip_in_place(&mut gt, psi_bound);
                    theta_sum += &gt;
                    w_sum[block] += &gw;
                }
                if !entries.is_empty() {
                    let b = T::from_usize_lossy(entries.len());
                    theta_sum.mapv_inplace(|v| v / b);
                    w_sum.iter_mut().for_each(|w| w.mapv_inplace(|v| v / b));
                }
                let mut rng_theta = stream(seed, c as u64, round, StreamPurpose::NoiseTheta);
                perturb_in_place(&mut theta_sum, noise[c].sigma_theta_sq, &mut rng_theta);
                let mut rng_w = stream(seed, c as u64, round, StreamPurpose::NoiseW);
                for w in &mut w_sum {
                    perturb_in_place(w, noise[c].sigma_w_sq, &mut rng_w);
                }
                Ok(Some(SensitiveMessage { weight_rows: entries.len(), theta: theta_sum, w: w_sum }))
            })?;

            let answered: usize = messages.iter().flatten().map(|m| m.weight_rows).sum();
            let idle_weight = T::from_usize_lossy(topology.sensitive.len()).recip();
            let mut real_theta = Vec::new();
            let mut real_w: Vec<Vec<(T, &Array2<T>)>> = vec![Vec::new(); blocks];
            let mut dummy_theta = Array1::zeros(d_theta);
            let mut dummy_w: Vec<Array2<T>> = (0..blocks).map(|_| Array2::zeros((k, l))).collect();
            for (c, m) in messages.iter().enumerate() {
                let Some(m) = m else { continue };
                if m.weight_rows > 0 {
                    participating.push(c);
                    let share = T::from_usize_lossy(m.weight_rows) / T::from_usize_lossy(answered);
                    real_theta.push((share, &m.theta));
                    for (b, w) in m.w.iter().enumerate() {
                        real_w[b].push((share, w));
                    }
                } else {
                    dummy_theta.scaled_add(idle_weight, &m.theta);
                    for (acc, w) in dummy_w.iter_mut().zip(&m.w) {
                        acc.scaled_add(idle_weight, w);
                    }
                }
            }
            let mut ht = weighted_mean(&real_theta);
            let mut hw: Vec<Array2<T>> = real_w.iter().map(|items| weighted_mean(items)).collect();
            if topology.dummy_noise && participating.len() < topology.sensitive.len() {
                ht += &dummy_theta;
                for (acc, d) in hw.iter_mut().zip(&dummy_w) {
                    *acc += d;
                }
            }
            h_theta = Some(ht);
            h_w = Some(hw);
        }

        let eta = rc.eta_theta_at(t);
        match &h_theta {
            Some(ht) => {
                let direction = &loss_grad + &ht.mapv(|v| v * spec.lambda);
                theta.descend(eta, &direction);
            }
            None => theta.descend(eta, &loss_grad),
        }
        if let Some(hw) = &h_w {
            let step = spec.lambda * rc.eta_w;
            for (dual, g) in duals.iter_mut().zip(hw) {
                dual.w.scaled_add(step, g);
                dual.project();
            }
        }
        if !theta.is_finite() {
            return Err(Error::InvalidArgument(format!("parameters diverged at round {t}")));
        }
        if t + 1 == selected_round {
            theta_hat = Some(theta.clone());
        }

        let objective = match &probe_dist {
            Some(d) => Some(fermi_objective(&theta, spec, dataset, d)?.as_f64()),
            None => None,
        };
        trace.push(RoundRecord {
            round: t + 1,
            eta_theta: eta.as_f64(),
            loss_grad_norm: l2(loss_grad.iter().copied()),
            psi_theta_grad_norm: h_theta.as_ref().map_or(0.0, |h| l2(h.iter().copied())),
            psi_w_grad_norm: h_w.as_ref().map_or(0.0, |hw| l2(hw.iter().flat_map(|h| h.iter().copied()))),
            w_norm: l2(duals.iter().flat_map(|d| d.w.iter().copied())),
            participating,
            objective,
            sigma_theta_sq: max_sigma.0,
            sigma_w_sq: max_sigma.1,
        });
    }

    Ok(SteffleOutput {
        theta_hat: theta_hat.unwrap_or_else(|| theta.clone()),
        final_theta: theta,
        selected_round,
        duals,
        trace,
        noise,
    })
}

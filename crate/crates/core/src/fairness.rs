//! χ²-divergence fairness regularizers and their min-max form.
//!
//! Index convention. The dual matrix `W` is `k×l` (sensitive class `r` by
//! predicted class `u`). For one sample with class probabilities `F` and
//! sensitive class `s`,
//!
//! ```text
//! ψ(θ, W) = −Σ_{r,u} W[r][u]²·F_u + 2·Σ_u W[s][u]·F_u / √p̂_S(s) − 1
//! ```
//!
//! which is `−Tr(W·diag(F)·Wᵀ) + 2·Tr(W·E[ŷ sᵀ]·P̂_S^{−1/2}) − 1` with
//! `E[ŷ sᵀ]` taken as the `l×k` matrix `F·e_sᵀ`. Averaged over a dataset
//! the maximizer is `W*[r][u] = p̂(u, r) / (√p̂_S(r)·p̂_Ŷ(u))` and the
//! maximum equals the demographic-parity χ² of the soft-prediction joint.
//!
//! Equalized odds uses one dual matrix per true label: a sample with label
//! `y` is scored against `W^(y)` and `P̂_{S|Y=y}`. Averaging over all rows
//! weights each label slice by `p̂_Y(y)`, which reproduces the conditional
//! χ².

use ndarray::{Array1, Array2, ArrayView1};

use crate::dataio::{conditional_sensitive, ConditionalSensitive, SensitiveDistribution, TabularDataset};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FairnessNotion {
    DemographicParity,
    EqualizedOdds,
}

impl std::str::FromStr for FairnessNotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "demographic_parity" | "dp" => Ok(Self::DemographicParity),
            "equalized_odds" | "eo" => Ok(Self::EqualizedOdds),
            other => Err(Error::InvalidArgument(format!("unknown fairness notion `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FairnessSpec<T> {
    pub notion: FairnessNotion,
    pub lambda: T,
}

impl<T: Scalar> FairnessSpec<T> {
    pub fn new(notion: FairnessNotion, lambda: T) -> Result<Self> {
        if !(lambda >= T::zero()) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be finite and ≥ 0, got {lambda}")));
        }
        Ok(Self { notion, lambda })
    }
}

/// Dual variable `W` constrained to the Frobenius ball of radius `diameter`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualMatrix<T> {
    pub w: Array2<T>,
    pub diameter: T,
}

impl<T: Scalar> DualMatrix<T> {
    pub fn zeros(k: usize, l: usize, diameter: T) -> Self {
        Self { w: Array2::zeros((k, l)), diameter }
    }

    pub fn frobenius_norm(&self) -> T {
        self.w.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    /// Scales `w` back onto the ball when it lies outside.
    pub fn project(&mut self) {
        let norm = self.frobenius_norm();
        if norm > self.diameter {
            let scale = self.diameter / norm;
            self.w.mapv_inplace(|v| v * scale);
        }
    }

    pub fn projected(mut self) -> Self {
        self.project();
        self
    }
}

/// Empirical joint of (predicted class, sensitive class), `l×k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalJoint<T> {
    pub joint: Array2<T>,
    pub yhat_marginal: Array1<T>,
    pub s_marginal: Array1<T>,
}

impl<T: Scalar> EmpiricalJoint<T> {
    pub fn from_joint(joint: Array2<T>) -> Result<Self> {
        if joint.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if joint.iter().any(|&p| !(p >= T::zero()) || !p.is_finite()) {
            return Err(Error::InvalidArgument("joint has negative or non-finite cells".into()));
        }
        let total: T = joint.iter().copied().sum();
        if (total - T::one()).abs() > T::lit(1e-12) {
            return Err(Error::InvalidArgument(format!("joint sums to {total}, not 1")));
        }
        let yhat_marginal = joint.sum_axis(ndarray::Axis(1));
        let s_marginal = joint.sum_axis(ndarray::Axis(0));
        Ok(Self { joint, yhat_marginal, s_marginal })
    }

    /// Counts of hard predictions.
    pub fn from_hard(predictions: &[usize], sensitive: &[usize], l: usize, k: usize) -> Result<Self> {
        if predictions.len() != sensitive.len() {
            return Err(Error::DimensionMismatch { expected: predictions.len(), got: sensitive.len() });
        }
        if predictions.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = T::from_usize_lossy(predictions.len());
        let mut joint = Array2::zeros((l, k));
        for (&j, &r) in predictions.iter().zip(sensitive) {
            joint[[j, r]] += T::one();
        }
        Self::from_joint(joint.mapv(|c: T| c / n))
    }

    /// Soft joint `p̂(u, r) = (1/n)·Σ_i F_u(x_i)·1{s_i = r}`.
    pub fn from_soft(params: &ModelParams<T>, dataset: &TabularDataset<T>) -> Result<Self> {
        let rows: Vec<usize> = (0..dataset.n()).collect();
        Self::from_soft_rows(params, dataset, &rows, &dataset.sensitive)
    }

    fn from_soft_rows(
        params: &ModelParams<T>,
        dataset: &TabularDataset<T>,
        rows: &[usize],
        sensitive: &[usize],
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut joint = Array2::zeros((dataset.l, dataset.k));
        for &i in rows {
            let f = params.predict_probs(dataset.row(i))?.0;
            for u in 0..dataset.l {
                joint[[u, sensitive[i]]] += f[u];
            }
        }
        let n = T::from_usize_lossy(rows.len());
        joint.mapv_inplace(|v| v / n);
        // re-normalize away accumulated rounding so the sum check passes
        let total: T = joint.iter().copied().sum();
        Self::from_joint(joint.mapv(|v| v / total))
    }
}

/// Per-label joints `p̂(ŷ, s | y)` and label marginal `p̂_Y`.
/// Slices for labels that never occur are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalJoint<T> {
    pub slices: Vec<Option<EmpiricalJoint<T>>>,
    pub label_probs: Array1<T>,
}

impl<T: Scalar> ConditionalJoint<T> {
    pub fn new(slices: Vec<Option<EmpiricalJoint<T>>>, label_probs: Array1<T>) -> Result<Self> {
        if slices.len() != label_probs.len() {
            return Err(Error::DimensionMismatch { expected: label_probs.len(), got: slices.len() });
        }
        for (y, slice) in slices.iter().enumerate() {
            if slice.is_none() && label_probs[y] > T::zero() {
                return Err(Error::InvalidArgument(format!("label {y} has mass but no joint")));
            }
        }
        Ok(Self { slices, label_probs })
    }

    pub fn from_hard(
        predictions: &[usize],
        sensitive: &[usize],
        labels: &[usize],
        l: usize,
        k: usize,
    ) -> Result<Self> {
        if predictions.len() != labels.len() || sensitive.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: labels.len(), got: predictions.len() });
        }
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = T::from_usize_lossy(labels.len());
        let mut slices = Vec::with_capacity(l);
        let mut label_probs = Array1::zeros(l);
        for y in 0..l {
            let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == y).collect();
            label_probs[y] = T::from_usize_lossy(idx.len()) / n;
            if idx.is_empty() {
                slices.push(None);
                continue;
            }
            let p: Vec<usize> = idx.iter().map(|&i| predictions[i]).collect();
            let s: Vec<usize> = idx.iter().map(|&i| sensitive[i]).collect();
            slices.push(Some(EmpiricalJoint::from_hard(&p, &s, l, k)?));
        }
        Self::new(slices, label_probs)
    }

    pub fn from_soft(params: &ModelParams<T>, dataset: &TabularDataset<T>) -> Result<Self> {
        let n = T::from_usize_lossy(dataset.n());
        let mut slices = Vec::with_capacity(dataset.l);
        let mut label_probs = Array1::zeros(dataset.l);
        for y in 0..dataset.l {
            let rows: Vec<usize> = (0..dataset.n()).filter(|&i| dataset.labels[i] == y).collect();
            label_probs[y] = T::from_usize_lossy(rows.len()) / n;
            if rows.is_empty() {
                slices.push(None);
            } else {
                slices.push(Some(EmpiricalJoint::from_soft_rows(params, dataset, &rows, &dataset.sensitive)?));
            }
        }
        Self::new(slices, label_probs)
    }
}

/// `Σ_{j,r} p̂(j,r)² / (p̂_Ŷ(j)·p̂_S(r))`, with `0²/0 := 0`.
fn chi2_sum<T: Scalar>(joint: &EmpiricalJoint<T>) -> Result<T> {
    let mut total = T::zero();
    for ((j, r), &p) in joint.joint.indexed_iter() {
        let den = joint.yhat_marginal[j] * joint.s_marginal[r];
        if den == T::zero() {
            if p != T::zero() {
                return Err(Error::CorruptJoint { row: j, col: r });
            }
            continue;
        }
        total += p * p / den;
    }
    Ok(total)
}

/// Demographic-parity χ² divergence `χ²(p̂_{Ŷ,S} ‖ p̂_Ŷ·p̂_S)`.
pub fn chi2_dem_parity<T: Scalar>(joint: &EmpiricalJoint<T>) -> Result<T> {
    Ok((chi2_sum(joint)? - T::one()).max(T::zero()))
}

/// Equalized-odds χ² divergence, the `p̂_Y`-weighted sum over label slices.
pub fn chi2_eq_odds<T: Scalar>(joints: &ConditionalJoint<T>) -> Result<T> {
    let mut total = T::zero();
    for (y, slice) in joints.slices.iter().enumerate() {
        if let Some(slice) = slice {
            if joints.label_probs[y] > T::zero() {
                total += joints.label_probs[y] * chi2_sum(slice)?;
            }
        }
    }
    Ok((total - T::one()).max(T::zero()))
}

fn check_psi_dims<T: Scalar>(w: &DualMatrix<T>, l: usize, s: usize, dist: &SensitiveDistribution<T>) -> Result<()> {
    let k = dist.k();
    if w.w.dim() != (k, l) {
        return Err(Error::DimensionMismatch { expected: k * l, got: w.w.len() });
    }
    if s >= k {
        return Err(Error::InvalidArgument(format!("sensitive class {s} out of range for k={k}")));
    }
    if !(dist.rho > T::zero()) {
        return Err(Error::MissingSensitiveClass { class: 0 });
    }
    Ok(())
}

/// ψ for a sample whose class probabilities are already known.
pub fn psi_from_probs<T: Scalar>(probs: &Array1<T>, w: &DualMatrix<T>, s: usize, dist: &SensitiveDistribution<T>) -> T {
    let mut quad = T::zero();
    for ((_, u), &v) in w.w.indexed_iter() {
        quad += v * v * probs[u];
    }
    let mut lin = T::zero();
    for u in 0..probs.len() {
        lin += w.w[[s, u]] * probs[u];
    }
    -quad + T::lit(2.0) * lin * dist.inv_sqrt[s] - T::one()
}

pub fn psi<T: Scalar>(
    params: &ModelParams<T>,
    w: &DualMatrix<T>,
    x: ArrayView1<T>,
    s: usize,
    dist: &SensitiveDistribution<T>,
) -> Result<T> {
    check_psi_dims(w, params.classes(), s, dist)?;
    let probs = params.predict_probs(x)?.0;
    Ok(psi_from_probs(&probs, w, s, dist))
}

/// `∂ψ/∂F_u = −Σ_r W[r][u]² + 2·W[s][u]/√p̂_S(s)`.
pub fn psi_prob_coeffs<T: Scalar>(w: &DualMatrix<T>, s: usize, dist: &SensitiveDistribution<T>) -> Array1<T> {
    let l = w.w.ncols();
    let two = T::lit(2.0);
    (0..l)
        .map(|u| {
            let col_sq: T = w.w.column(u).iter().map(|&v| v * v).sum();
            -col_sq + two * w.w[[s, u]] * dist.inv_sqrt[s]
        })
        .collect()
}

/// `∇_W ψ[r][u] = −2·W[r][u]·F_u + 2·1{r = s}·F_u/√p̂_S(s)`.
pub fn psi_grad_w<T: Scalar>(probs: &Array1<T>, w: &DualMatrix<T>, s: usize, dist: &SensitiveDistribution<T>) -> Array2<T> {
    let two = T::lit(2.0);
    let mut g = Array2::zeros(w.w.dim());
    for ((r, u), &v) in w.w.indexed_iter() {
        g[[r, u]] = -two * v * probs[u];
    }
    for u in 0..probs.len() {
        g[[s, u]] += two * probs[u] * dist.inv_sqrt[s];
    }
    g
}

/// Gradients of ψ from a model output `(F, ∇F)`, as the sensitive side of a
/// silo receives it. `jacobian` is `l × d_θ`.
pub fn psi_grads_from_output<T: Scalar>(
    probs: &Array1<T>,
    jacobian: &Array2<T>,
    w: &DualMatrix<T>,
    s: usize,
    dist: &SensitiveDistribution<T>,
) -> (Array1<T>, Array2<T>) {
    let coeffs = psi_prob_coeffs(w, s, dist);
    (jacobian.t().dot(&coeffs), psi_grad_w(probs, w, s, dist))
}

pub fn psi_grads<T: Scalar>(
    params: &ModelParams<T>,
    w: &DualMatrix<T>,
    x: ArrayView1<T>,
    s: usize,
    dist: &SensitiveDistribution<T>,
) -> Result<(Array1<T>, Array2<T>)> {
    check_psi_dims(w, params.classes(), s, dist)?;
    let probs = params.predict_probs(x)?.0;
    let coeffs = psi_prob_coeffs(w, s, dist);
    Ok((params.probs_vjp(x, &probs, &coeffs), psi_grad_w(&probs, w, s, dist)))
}

/// Upper bound on `‖∇_θ ψ‖` when `‖W‖_F ≤ D`, `p̂_S ≥ ρ` and `F` is
/// `L_θ`-Lipschitz.
pub fn psi_theta_grad_bound<T: Scalar>(diameter: T, l_theta: T, rho: T) -> T {
    l_theta * (diameter * diameter + T::lit(2.0) * diameter / rho.sqrt())
}

/// Upper bound on `‖∇_W ψ‖_F` when `‖W‖_F ≤ D` and `p̂_S ≥ ρ`.
pub fn psi_w_grad_bound<T: Scalar>(diameter: T, rho: T) -> T {
    T::lit(2.0) * diameter + T::lit(2.0) / rho.sqrt()
}

/// `(1/n)·Σ_i ψ(θ, W; x_i, s_i)`, summed in row order.
pub fn mean_psi<T: Scalar>(
    params: &ModelParams<T>,
    w: &DualMatrix<T>,
    dataset: &TabularDataset<T>,
    dist: &SensitiveDistribution<T>,
) -> Result<T> {
    let mut total = T::zero();
    for i in 0..dataset.n() {
        total += psi(params, w, dataset.row(i), dataset.sensitive[i], dist)?;
    }
    Ok(total / T::from_usize_lossy(dataset.n()))
}

/// Equalized-odds analogue of [`mean_psi`]: row `i` uses `ws[y_i]` and
/// `P̂_{S|Y=y_i}`.
pub fn mean_psi_eq_odds<T: Scalar>(
    params: &ModelParams<T>,
    ws: &[DualMatrix<T>],
    dataset: &TabularDataset<T>,
    cond: &ConditionalSensitive<T>,
) -> Result<T> {
    if ws.len() != dataset.l {
        return Err(Error::DimensionMismatch { expected: dataset.l, got: ws.len() });
    }
    let mut total = T::zero();
    for i in 0..dataset.n() {
        let y = dataset.labels[i];
        total += psi(params, &ws[y], dataset.row(i), dataset.sensitive[i], &cond.per_label[y])?;
    }
    Ok(total / T::from_usize_lossy(dataset.n()))
}

/// Sufficient statistics of the averaged ψ as a function of `W`:
/// mean probabilities `F̄` and `b[r][u] = p̂(u, r)/√p̂_S(r)`.
#[derive(Debug, Clone)]
struct PsiMoments<T> {
    mean_probs: Array1<T>,
    linear: Array2<T>,
}

impl<T: Scalar> PsiMoments<T> {
    fn collect(
        params: &ModelParams<T>,
        dataset: &TabularDataset<T>,
        rows: &[usize],
        dist: &SensitiveDistribution<T>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (k, l) = (dist.k(), params.classes());
        let mut mean_probs = Array1::zeros(l);
        let mut linear = Array2::zeros((k, l));
        for &i in rows {
            let f = params.predict_probs(dataset.row(i))?.0;
            let s = dataset.sensitive[i];
            for u in 0..l {
                mean_probs[u] += f[u];
                linear[[s, u]] += f[u] * dist.inv_sqrt[s];
            }
        }
        let n = T::from_usize_lossy(rows.len());
        mean_probs.mapv_inplace(|v| v / n);
        linear.mapv_inplace(|v| v / n);
        Ok(Self { mean_probs, linear })
    }

    fn grad(&self, w: &Array2<T>) -> Array2<T> {
        let two = T::lit(2.0);
        let mut g = self.linear.mapv(|b| two * b);
        for ((r, u), &v) in w.indexed_iter() {
            g[[r, u]] -= two * v * self.mean_probs[u];
        }
        g
    }
}

/// Projected gradient ascent settings for [`inner_maximizer`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iterations: 100_000 }
    }
}

fn ascend<T: Scalar>(moments: &PsiMoments<T>, k: usize, diameter: T, opts: AscentOptions) -> Result<DualMatrix<T>> {
    let l = moments.mean_probs.len();
    let max_mean = moments.mean_probs.iter().copied().fold(T::zero(), T::max);
    let mut w = DualMatrix::zeros(k, l, diameter);
    if max_mean <= T::zero() {
        return Ok(w);
    }
    let step = (T::lit(2.0) * max_mean).recip();
    let tol = T::lit(opts.tolerance);
    let mut residual = T::infinity();
    for _ in 0..opts.max_iterations {
        let g = moments.grad(&w.w);
        let mut next = DualMatrix { w: &w.w + &g.mapv(|v| v * step), diameter };
        next.project();
        // gradient mapping; equals the gradient when the ball is inactive
        residual = (&next.w - &w.w).iter().map(|&v| v * v).sum::<T>().sqrt() / step;
        w = next;
        if residual < tol {
            return Ok(w);
        }
    }
    Err(Error::NonConvergence { iterations: opts.max_iterations, residual: residual.as_f64() })
}

/// `argmax_{‖W‖_F ≤ D} (1/n)·Σ_i ψ(θ, W; x_i, s_i)` by projected gradient
/// ascent with step `1/(2·max_u F̄_u)`.
pub fn inner_maximizer<T: Scalar>(
    params: &ModelParams<T>,
    dataset: &TabularDataset<T>,
    dist: &SensitiveDistribution<T>,
    diameter: T,
) -> Result<DualMatrix<T>> {
    inner_maximizer_with(params, dataset, dist, diameter, AscentOptions::default())
}

pub fn inner_maximizer_with<T: Scalar>(
    params: &ModelParams<T>,
    dataset: &TabularDataset<T>,
    dist: &SensitiveDistribution<T>,
    diameter: T,
    opts: AscentOptions,
) -> Result<DualMatrix<T>> {
    let rows: Vec<usize> = (0..dataset.n()).collect();
    let moments = PsiMoments::collect(params, dataset, &rows, dist)?;
    ascend(&moments, dist.k(), diameter, opts)
}

/// Closed-form unconstrained maximizer `W*[r][u] = p̂(u,r)/(√p̂_S(r)·F̄_u)`.
/// Columns with `F̄_u = 0` are set to zero.
pub fn unconstrained_maximizer<T: Scalar>(
    params: &ModelParams<T>,
    dataset: &TabularDataset<T>,
    dist: &SensitiveDistribution<T>,
) -> Result<Array2<T>> {
    let rows: Vec<usize> = (0..dataset.n()).collect();
    let m = PsiMoments::collect(params, dataset, &rows, dist)?;
    let mut w = Array2::zeros(m.linear.dim());
    for ((r, u), &b) in m.linear.indexed_iter() {
        if m.mean_probs[u] > T::zero() {
            w[[r, u]] = b / m.mean_probs[u];
        }
    }
    Ok(w)
}

/// One maximizer per true label, each over its own label slice.
pub fn inner_maximizer_eq_odds<T: Scalar>(
    params: &ModelParams<T>,
    dataset: &TabularDataset<T>,
    cond: &ConditionalSensitive<T>,
    diameter: T,
) -> Result<Vec<DualMatrix<T>>> {
    (0..dataset.l)
        .map(|y| {
            let rows: Vec<usize> = (0..dataset.n()).filter(|&i| dataset.labels[i] == y).collect();
            let moments = PsiMoments::collect(params, dataset, &rows, &cond.per_label[y])?;
            ascend(&moments, dataset.k, diameter, AscentOptions::default())
        })
        .collect()
}

pub fn mean_loss<T: Scalar>(params: &ModelParams<T>, dataset: &TabularDataset<T>) -> Result<T> {
    let mut total = T::zero();
    for i in 0..dataset.n() {
        total += params.loss_and_grad(dataset.row(i), dataset.labels[i])?.0;
    }
    Ok(total / T::from_usize_lossy(dataset.n()))
}

/// `L̂(θ) + λ·D̂_R`, with the divergence taken on soft-prediction joints.
///
/// For demographic parity `dist` must be the sensitive distribution of
/// `dataset`; it is only checked for shape. Equalized odds derives the
/// per-label distributions from `dataset`.
pub fn fermi_objective<T: Scalar>(
    params: &ModelParams<T>,
    spec: &FairnessSpec<T>,
    dataset: &TabularDataset<T>,
    dist: &SensitiveDistribution<T>,
) -> Result<T> {
    if dist.k() != dataset.k {
        return Err(Error::DimensionMismatch { expected: dataset.k, got: dist.k() });
    }
    let loss = mean_loss(params, dataset)?;
    if spec.lambda == T::zero() {
        return Ok(loss);
    }
    let divergence = match spec.notion {
        FairnessNotion::DemographicParity => chi2_dem_parity(&EmpiricalJoint::from_soft(params, dataset)?)?,
        FairnessNotion::EqualizedOdds => chi2_eq_odds(&ConditionalJoint::from_soft(params, dataset)?)?,
    };
    Ok(loss + spec.lambda * divergence)
}

/// `max_W F̂(θ, W)` evaluated through the inner maximizer; the min-max
/// counterpart of [`fermi_objective`].
pub fn minmax_objective<T: Scalar>(
    params: &ModelParams<T>,
    spec: &FairnessSpec<T>,
    dataset: &TabularDataset<T>,
    dist: &SensitiveDistribution<T>,
    diameter: T,
) -> Result<T> {
    let loss = mean_loss(params, dataset)?;
    let reg = match spec.notion {
        FairnessNotion::DemographicParity => {
            let w = inner_maximizer(params, dataset, dist, diameter)?;
            mean_psi(params, &w, dataset, dist)?
        }
        FairnessNotion::EqualizedOdds => {
            let cond = conditional_sensitive(dataset)?;
            let ws = inner_maximizer_eq_odds(params, dataset, &cond, diameter)?;
            mean_psi_eq_odds(params, &ws, dataset, &cond)?
        }
    };
    Ok(loss + spec.lambda * reg)
}

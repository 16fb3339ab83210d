//! Multinomial logistic regression.
//!
//! Flat parameter order, shared by every gradient and Jacobian in the
//! crate: the `l×d` weight matrix row-major, then the `l` biases. Entry
//! `u*d + c` is `weights[u][c]`; entry `l*d + u` is `bias[u]`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

/// Class probabilities `F(x, θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector<T>(pub Array1<T>);

impl<T: Scalar> ProbVector<T> {
    pub fn as_array(&self) -> &Array1<T> {
        &self.0
    }

    /// Hard label; ties go to the lowest class index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (u, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = u;
            }
        }
        best
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(l: usize, d: usize) -> Self {
        Self { weights: Array2::zeros((l, d)), bias: Array1::zeros(l) }
    }

    pub fn classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn features(&self) -> usize {
        self.weights.ncols()
    }

    pub fn d_theta(&self) -> usize {
        self.classes() * (self.features() + 1)
    }

    pub fn to_flat(&self) -> Array1<T> {
        self.weights.iter().chain(self.bias.iter()).copied().collect()
    }

    pub fn from_flat(l: usize, d: usize, flat: &[T]) -> Result<Self> {
        let want = l * (d + 1);
        if flat.len() != want {
            return Err(Error::DimensionMismatch { expected: want, got: flat.len() });
        }
        let weights = Array2::from_shape_vec((l, d), flat[..l * d].to_vec())
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let bias = Array1::from(flat[l * d..].to_vec());
        Ok(Self { weights, bias })
    }

    /// `self -= step * direction` on the flat layout.
    pub fn descend(&mut self, step: T, direction: &Array1<T>) {
        let l = self.classes();
        let d = self.features();
        debug_assert_eq!(direction.len(), l * (d + 1));
        for (w, &g) in self.weights.iter_mut().zip(direction.iter()) {
            *w = *w - step * g;
        }
        for (b, &g) in self.bias.iter_mut().zip(direction.iter().skip(l * d)) {
            *b = *b - step * g;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }

    fn check_dim(&self, x: &ArrayView1<T>) -> Result<()> {
        if x.len() != self.features() {
            return Err(Error::DimensionMismatch { expected: self.features(), got: x.len() });
        }
        Ok(())
    }

    fn logits(&self, x: &ArrayView1<T>) -> Array1<T> {
        self.weights.dot(x) + &self.bias
    }

    fn softmax(logits: &Array1<T>) -> Array1<T> {
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let exp = logits.mapv(|z| (z - max).exp());
        let total: T = exp.iter().copied().sum();
        exp / total
    }

    pub fn predict_probs(&self, x: ArrayView1<T>) -> Result<ProbVector<T>> {
        self.check_dim(&x)?;
        Ok(ProbVector(Self::softmax(&self.logits(&x))))
    }

    pub fn predict_label(&self, x: ArrayView1<T>) -> Result<usize> {
        Ok(self.predict_probs(x)?.argmax())
    }

    /// Cross-entropy `−ln F_y(x, θ)` and its flat gradient.
    pub fn loss_and_grad(&self, x: ArrayView1<T>, y: usize) -> Result<(T, Array1<T>)> {
        self.check_dim(&x)?;
        let l = self.classes();
        if y >= l {
            return Err(Error::InvalidArgument(format!("label {y} out of range for l={l}")));
        }
        let z = self.logits(&x);
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let loss = lse - z[y];
        let mut residual = Self::softmax(&z);
        residual[y] -= T::one();
        Ok((loss, self.outer_flat(&residual, &x)))
    }

    /// Flat gradient of `Σ_v r_v·z_v(x, θ)` for logit weights `r`.
    fn outer_flat(&self, r: &Array1<T>, x: &ArrayView1<T>) -> Array1<T> {
        let l = self.classes();
        let d = self.features();
        let mut g = Array1::zeros(l * (d + 1));
        for v in 0..l {
            for c in 0..d {
                g[v * d + c] = r[v] * x[c];
            }
            g[l * d + v] = r[v];
        }
        g
    }

    /// `J[u][·] = ∇_θ F_u(x, θ)`, shape `l × d_θ`.
    pub fn probs_jacobian(&self, x: ArrayView1<T>) -> Result<Array2<T>> {
        self.check_dim(&x)?;
        let l = self.classes();
        let d = self.features();
        let f = Self::softmax(&self.logits(&x));
        let mut jac = Array2::zeros((l, l * (d + 1)));
        for u in 0..l {
            for v in 0..l {
                let delta = if u == v { T::one() } else { T::zero() };
                let dz = f[u] * (delta - f[v]);
                for c in 0..d {
                    jac[[u, v * d + c]] = dz * x[c];
                }
                jac[[u, l * d + v]] = dz;
            }
        }
        Ok(jac)
    }

    /// `Jᵀ·coeffs` without materializing `J`, given probabilities `probs`
    /// already evaluated at `x`.
    pub fn probs_vjp(&self, x: ArrayView1<T>, probs: &Array1<T>, coeffs: &Array1<T>) -> Array1<T> {
        let mean: T = probs.iter().zip(coeffs.iter()).map(|(&p, &c)| p * c).sum();
        let r: Array1<T> = probs.iter().zip(coeffs.iter()).map(|(&p, &c)| p * (c - mean)).collect();
        self.outer_flat(&r, &x)
    }

    /// Writes `l d` on the first line and the flat vector on the second.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.classes(), self.features());
        let flat = self.to_flat();
        for (i, v) in flat.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{:?}", v.as_f64());
        }
        out.push('\n');
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        let mut dim = |what: &str| -> Result<usize> {
            tokens
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("checkpoint: missing {what}")))
        };
        let l = dim("class count")?;
        let d = dim("feature count")?;
        let flat = tokens
            .map(|t| {
                t.parse::<f64>()
                    .map(T::lit)
                    .map_err(|_| Error::InvalidArgument(format!("checkpoint: bad value `{t}`")))
            })
            .collect::<Result<Vec<T>>>()?;
        Self::from_flat(l, d, &flat)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut impl Rng, l: usize, d: usize) -> ModelParams<f64> {
        ModelParams {
            weights: Array2::from_shape_fn((l, d), |_| rng.random_range(-1.5..1.5)),
            bias: Array1::from_shape_fn(l, |_| rng.random_range(-1.0..1.0)),
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = ModelParams::<f64>::zeros(2, 3);
        let p = m.predict_probs(array![1.0, -2.0, 0.5].view()).unwrap();
        assert_eq!(p.0, array![0.5, 0.5]);
        assert_eq!(p.argmax(), 0);
        assert_eq!(m.d_theta(), 8);
    }

    #[test]
    fn bias_ln3_gives_three_to_one() {
        let m = ModelParams { weights: Array2::zeros((2, 1)), bias: array![3f64.ln(), 0.0] };
        let p = m.predict_probs(array![4.0].view()).unwrap();
        assert_abs_diff_eq!(p.0[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(p.0[1], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = ModelParams::<f64>::zeros(2, 3);
        assert!(matches!(
            m.predict_probs(array![1.0].view()),
            Err(Error::DimensionMismatch { expected: 3, got: 1 })
        ));
        assert!(m.probs_jacobian(array![1.0, 2.0].view()).is_err());
    }

    #[test]
    fn loss_at_half_is_ln2() {
        let m = ModelParams::<f64>::zeros(2, 2);
        let (loss, _) = m.loss_and_grad(array![0.3, 0.1].view(), 1).unwrap();
        assert_abs_diff_eq!(loss, 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn balanced_pair_has_zero_bias_gradient() {
        let m = ModelParams::<f64>::zeros(2, 2);
        let x = array![0.7, -0.2];
        let (_, g0) = m.loss_and_grad(x.view(), 0).unwrap();
        let (_, g1) = m.loss_and_grad(x.view(), 1).unwrap();
        let sum = g0 + g1;
        assert_eq!(sum[4], 0.0);
        assert_eq!(sum[5], 0.0);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = 1e-5;
        for _ in 0..100 {
            let (l, d) = (rng.random_range(2..4), rng.random_range(1..5));
            let m = random_params(&mut rng, l, d);
            let x = Array1::from_shape_fn(d, |_| rng.random_range(-2.0..2.0));
            let y = rng.random_range(0..l);
            let (_, g) = m.loss_and_grad(x.view(), y).unwrap();
            let flat = m.to_flat();
            for p in 0..flat.len() {
                let mut plus = flat.clone();
                plus[p] += h;
                let mut minus = flat.clone();
                minus[p] -= h;
                let lp = ModelParams::from_flat(l, d, plus.as_slice().unwrap()).unwrap();
                let lm = ModelParams::from_flat(l, d, minus.as_slice().unwrap()).unwrap();
                let fd = (lp.loss_and_grad(x.view(), y).unwrap().0 - lm.loss_and_grad(x.view(), y).unwrap().0)
                    / (2.0 * h);
                assert!(rel_err(fd, g[p]) < 1e-6 || (fd - g[p]).abs() < 1e-9, "p={p} fd={fd} g={}", g[p]);
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_and_sums_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = 1e-5;
        for _ in 0..100 {
            let (l, d) = (rng.random_range(2..4), rng.random_range(1..5));
            let m = random_params(&mut rng, l, d);
            let x = Array1::from_shape_fn(d, |_| rng.random_range(-2.0..2.0));
            let jac = m.probs_jacobian(x.view()).unwrap();
            let col_sums = jac.sum_axis(ndarray::Axis(0));
            assert!(col_sums.iter().all(|v| v.abs() < 1e-12));
            let flat = m.to_flat();
            for p in 0..flat.len() {
                let mut plus = flat.clone();
                plus[p] += h;
                let mut minus = flat.clone();
                minus[p] -= h;
                let fp = ModelParams::from_flat(l, d, plus.as_slice().unwrap()).unwrap().predict_probs(x.view()).unwrap();
                let fm = ModelParams::from_flat(l, d, minus.as_slice().unwrap()).unwrap().predict_probs(x.view()).unwrap();
                for u in 0..l {
                    let fd = (fp.0[u] - fm.0[u]) / (2.0 * h);
                    assert!(rel_err(fd, jac[[u, p]]) < 1e-6 || (fd - jac[[u, p]]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn jacobian_at_zero_input_has_empty_weight_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_params(&mut rng, 3, 4);
        let jac = m.probs_jacobian(Array1::zeros(4).view()).unwrap();
        assert!(jac.slice(ndarray::s![.., ..12]).iter().all(|&v| v == 0.0));
        assert!(jac.slice(ndarray::s![.., 12..]).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn vjp_agrees_with_jacobian_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let m = random_params(&mut rng, 3, 2);
            let x = Array1::from_shape_fn(2, |_| rng.random_range(-2.0..2.0));
            let c = Array1::from_shape_fn(3, |_| rng.random_range(-2.0..2.0));
            let probs = m.predict_probs(x.view()).unwrap().0;
            let via_jac = m.probs_jacobian(x.view()).unwrap().t().dot(&c);
            let via_vjp = m.probs_vjp(x.view(), &probs, &c);
            for (a, b) in via_jac.iter().zip(via_vjp.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn binary_gradient_norm_bound() {
        // with ‖x‖ ≤ R, ‖∇ℓ‖ ≤ √2·(R+1) for two classes
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = 3.0;
        for _ in 0..500 {
            let m = random_params(&mut rng, 2, 4);
            let mut x: Array1<f64> = Array1::from_shape_fn(4, |_| rng.random_range(-5.0..5.0));
            let norm = x.dot(&x).sqrt();
            if norm > r {
                x *= r / norm;
            }
            let (_, g) = m.loss_and_grad(x.view(), rng.random_range(0..2)).unwrap();
            assert!(g.dot(&g).sqrt() <= 2f64.sqrt() * (r + 1.0) + 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = random_params(&mut rng, 2, 5);
        let back = ModelParams::<f64>::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("theta.txt");
        m.save(&path).unwrap();
        assert_eq!(ModelParams::<f64>::load(&path).unwrap(), m);
        assert!(ModelParams::<f64>::from_text("2 5\n1.0").is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let m = ModelParams::<f32> { weights: Array2::zeros((2, 1)), bias: array![3f32.ln(), 0.0] };
        let p = m.predict_probs(array![1.0f32].view()).unwrap();
        assert!((p.0[0] - 0.75).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(
            b in proptest::collection::vec(-20.0f64..20.0, 3),
            shift in -50.0f64..50.0,
        ) {
            let m = ModelParams { weights: Array2::zeros((3, 1)), bias: Array1::from(b.clone()) };
            let shifted = ModelParams {
                weights: Array2::zeros((3, 1)),
                bias: Array1::from(b).mapv(|v| v + shift),
            };
            let x = array![0.0];
            let p = m.predict_probs(x.view()).unwrap();
            let q = shifted.predict_probs(x.view()).unwrap();
            prop_assert!((p.0.sum() - 1.0).abs() < 1e-9);
            for (a, c) in p.0.iter().zip(q.0.iter()) {
                prop_assert!((a - c).abs() < 1e-9);
                prop_assert!((0.0..=1.0).contains(a));
            }
        }
    }
}

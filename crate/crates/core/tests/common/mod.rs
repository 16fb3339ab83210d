#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use steffle::dataio::TabularDataset;
use steffle::fairness::DualMatrix;
use steffle::model::ModelParams;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Gaussian features; labels and sensitive classes uniform, with every
/// class present.
pub fn random_dataset(rng: &mut impl Rng, n: usize, d: usize, k: usize, l: usize) -> TabularDataset<f64> {
    assert!(n >= k.max(l));
    let features = Array2::from_shape_fn((n, d), |_| normal(rng));
    let labels = (0..n).map(|i| if i < l { i } else { rng.random_range(0..l) }).collect();
    let sensitive = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
    TabularDataset::new(features, labels, sensitive, k, l).unwrap()
}

pub fn random_model(rng: &mut impl Rng, l: usize, d: usize, scale: f64) -> ModelParams<f64> {
    ModelParams {
        weights: Array2::from_shape_fn((l, d), |_| scale * normal(rng)),
        bias: Array1::from_shape_fn(l, |_| scale * normal(rng)),
    }
}

/// Uniform direction, radius uniform in `[0, diameter]`.
pub fn random_dual(rng: &mut impl Rng, k: usize, l: usize, diameter: f64) -> DualMatrix<f64> {
    let raw = Array2::from_shape_fn((k, l), |_| normal(rng));
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let radius = diameter * rng.random::<f64>();
    DualMatrix { w: raw.mapv(|v| v * radius / norm), diameter }
}

/// Softmax of `W·x + b`, written out independently of the library.
pub fn softmax_oracle(model: &ModelParams<f64>, x: &[f64]) -> Vec<f64> {
    let l = model.weights.nrows();
    let z: Vec<f64> = (0..l)
        .map(|u| model.bias[u] + x.iter().enumerate().map(|(c, xc)| model.weights[[u, c]] * xc).sum::<f64>())
        .collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn l2(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn data_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

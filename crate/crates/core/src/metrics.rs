//! Test-time metrics on hard predictions.
//!
//! Rates are generic over [`Numeric`] so they can be evaluated in exact
//! rational arithmetic. Conditioning cells with no samples are left out of
//! the maxima.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dataio::TabularDataset;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::scalar::{Numeric, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub error: f64,
    pub dp_violation: f64,
    pub eo_violation: f64,
    /// Sample count per `(s, y)` cell.
    pub support: BTreeMap<(usize, usize), usize>,
}

fn ratio<T: Numeric>(num: usize, den: usize) -> T {
    T::from_usize(num).expect("count fits") / T::from_usize(den).expect("count fits")
}

pub fn misclassification_error<T: Numeric>(predictions: &[usize], labels: &[usize]) -> Result<T> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), got: predictions.len() });
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let wrong = predictions.iter().zip(labels).filter(|(p, y)| p != y).count();
    Ok(ratio(wrong, labels.len()))
}

fn class_count(values: &[usize]) -> usize {
    values.iter().copied().max().map_or(0, |m| m + 1)
}

/// `max_{y', s₁, s₂} |P̂[ŷ = y' | s = s₁] − P̂[ŷ = y' | s = s₂]|` over the
/// sensitive classes present in `sensitive`.
pub fn dem_parity_violation<T: Numeric>(predictions: &[usize], sensitive: &[usize]) -> Result<T> {
    if predictions.len() != sensitive.len() {
        return Err(Error::DimensionMismatch { expected: sensitive.len(), got: predictions.len() });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (l, k) = (class_count(predictions), class_count(sensitive));
    let mut totals = vec![0usize; k];
    let mut hits = vec![vec![0usize; l]; k];
    for (&p, &s) in predictions.iter().zip(sensitive) {
        totals[s] += 1;
        hits[s][p] += 1;
    }
    let present: Vec<usize> = (0..k).filter(|&s| totals[s] > 0).collect();
    if present.len() < 2 {
        return Err(Error::UndefinedMetric("demographic parity needs two sensitive classes".into()));
    }
    let mut worst = T::zero();
    for y in 0..l {
        for &a in &present {
            for &b in &present {
                let gap = (ratio::<T>(hits[a][y], totals[a]) - ratio::<T>(hits[b][y], totals[b])).abs();
                if gap > worst {
                    worst = gap;
                }
            }
        }
    }
    Ok(worst)
}

/// For every `y'` and pair of distinct sensitive classes, the larger of the
/// gaps in `P̂[ŷ = y' | s, y = y']` and `P̂[ŷ = y' | s, y ≠ y']`; the
/// maximum over all of them. Gaps whose conditioning cells are empty are
/// skipped.
pub fn eq_odds_violation<T: Numeric>(predictions: &[usize], sensitive: &[usize], labels: &[usize]) -> Result<T> {
    if predictions.len() != sensitive.len() || labels.len() != sensitive.len() {
        return Err(Error::DimensionMismatch { expected: sensitive.len(), got: predictions.len().min(labels.len()) });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let l = class_count(predictions).max(class_count(labels));
    let k = class_count(sensitive);
    // counts indexed [branch][s][y'] with branch 0: y = y', 1: y ≠ y'
    let mut totals = vec![vec![vec![0usize; l]; k]; 2];
    let mut hits = totals.clone();
    for ((&p, &s), &y) in predictions.iter().zip(sensitive).zip(labels) {
        for target in 0..l {
            let branch = usize::from(y != target);
            totals[branch][s][target] += 1;
            if p == target {
                hits[branch][s][target] += 1;
            }
        }
    }
    let mut worst: Option<T> = None;
    for branch in 0..2 {
        for target in 0..l {
            for a in 0..k {
                for b in (a + 1)..k {
                    let (ta, tb) = (totals[branch][a][target], totals[branch][b][target]);
                    if ta == 0 || tb == 0 {
                        continue;
                    }
                    let gap = (ratio::<T>(hits[branch][a][target], ta) - ratio::<T>(hits[branch][b][target], tb)).abs();
                    if worst.is_none_or(|w| gap > w) {
                        worst = Some(gap);
                    }
                }
            }
        }
    }
    worst.ok_or_else(|| Error::UndefinedMetric("no pair of nonempty equalized-odds cells".into()))
}

pub fn predict_all<T: Scalar>(params: &ModelParams<T>, dataset: &TabularDataset<T>) -> Result<Vec<usize>> {
    (0..dataset.n()).map(|i| params.predict_label(dataset.row(i))).collect()
}

/// All three metrics of `params` on `dataset` (normally the test split).
pub fn evaluate<T: Scalar>(params: &ModelParams<T>, dataset: &TabularDataset<T>) -> Result<EvalReport> {
    let predictions = predict_all(params, dataset)?;
    let mut support = BTreeMap::new();
    for (&s, &y) in dataset.sensitive.iter().zip(&dataset.labels) {
        *support.entry((s, y)).or_insert(0) += 1;
    }
    Ok(EvalReport {
        error: misclassification_error(&predictions, &dataset.labels)?,
        dp_violation: dem_parity_violation(&predictions, &dataset.sensitive)?,
        eo_violation: eq_odds_violation(&predictions, &dataset.sensitive, &dataset.labels)?,
        support,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use num_rational::Ratio;
    use num_traits::Signed;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type Q = Ratio<i64>;

    #[test]
    fn error_examples() {
        assert_eq!(misclassification_error::<f64>(&[0, 1, 1], &[0, 1, 1]).unwrap(), 0.0);
        assert_eq!(misclassification_error::<f64>(&[1, 0], &[0, 0]).unwrap(), 0.5);
        assert!(misclassification_error::<f64>(&[], &[]).is_err());
        assert!(misclassification_error::<f64>(&[1], &[0, 0]).is_err());
    }

    #[test]
    fn error_of_coin_flips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        assert_abs_diff_eq!(misclassification_error::<f64>(&p, &y).unwrap(), 0.5, epsilon = 0.01);
    }

    #[test]
    fn dp_examples() {
        assert_eq!(dem_parity_violation::<Q>(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap(), Q::from_integer(0));
        assert_eq!(dem_parity_violation::<Q>(&[1, 1, 0, 0], &[1, 1, 0, 0]).unwrap(), Q::from_integer(1));
        assert_eq!(dem_parity_violation::<Q>(&[1, 0, 0, 0], &[1, 1, 0, 0]).unwrap(), Q::new(1, 2));
        assert!(matches!(dem_parity_violation::<f64>(&[1, 0], &[1, 1]), Err(Error::UndefinedMetric(_))));
        assert_eq!(dem_parity_violation::<f64>(&[0, 0, 0], &[0, 1, 2]).unwrap(), 0.0);
    }

    #[test]
    fn eo_examples() {
        let y = [0, 1, 0, 1, 1, 0];
        let s = [0, 0, 1, 1, 0, 1];
        assert_eq!(eq_odds_violation::<Q>(&y, &s, &y).unwrap(), Q::from_integer(0));

        // y ⟂ s balanced, ŷ = s
        let s = [0, 0, 0, 0, 1, 1, 1, 1];
        let y = [0, 0, 1, 1, 0, 0, 1, 1];
        assert_eq!(eq_odds_violation::<Q>(&s, &s, &y).unwrap(), Q::from_integer(1));

        // single label value: only the y ≠ y' branch exists for y' = 1
        let p = [1, 0, 1, 1];
        let s = [0, 0, 1, 1];
        let y = [0, 0, 0, 0];
        // y'=0, y=y': P[ŷ=0|s=0,y=0]=1/2, s=1: 0 → 1/2
        // y'=1, y≠y': P[ŷ=1|s=0]=1/2, s=1: 1 → 1/2
        assert_eq!(eq_odds_violation::<Q>(&p, &s, &y).unwrap(), Q::new(1, 2));
        assert!(eq_odds_violation::<f64>(&[0, 1], &[0, 0], &[0, 1]).is_err());
    }

    #[test]
    fn binary_dp_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.random_range(2..40);
            let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let mut s: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
            s[0] = 0;
            s[1] = 1;
            let rate = |c: usize| {
                let idx: Vec<usize> = (0..n).filter(|&i| s[i] == c).collect();
                Q::new(idx.iter().filter(|&&i| p[i] == 1).count() as i64, idx.len() as i64)
            };
            assert_eq!(dem_parity_violation::<Q>(&p, &s).unwrap(), (rate(1) - rate(0)).abs());
        }
    }

    #[test]
    fn evaluate_constant_model() {
        let features = ndarray::Array2::from_shape_fn((6, 2), |(i, j)| (i * j) as f64);
        let ds = TabularDataset::new(features, vec![0, 1, 0, 1, 0, 1], vec![0, 0, 1, 1, 1, 0], 2, 2).unwrap();
        let r = evaluate(&ModelParams::<f64>::zeros(2, 2), &ds).unwrap();
        assert_eq!(r.error, 0.5);
        assert_eq!(r.dp_violation, 0.0);
        assert_eq!(r.eo_violation, 0.0);
        assert_eq!(r.support[&(1, 1)], 1);
        assert_eq!(r.support.values().sum::<usize>(), 6);
    }

    proptest! {
        #[test]
        fn violations_invariant_under_sensitive_relabeling(
            rows in proptest::collection::vec((0usize..3, 0usize..3, 0usize..2), 4..30),
            perm_seed in 0u64..1000,
        ) {
            let p: Vec<usize> = rows.iter().map(|r| r.0).collect();
            let s: Vec<usize> = rows.iter().map(|r| r.1).collect();
            let y: Vec<usize> = rows.iter().map(|r| r.2).collect();
            let mut perm = vec![0, 1, 2];
            let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            let s2: Vec<usize> = s.iter().map(|&v| perm[v]).collect();
            let a = dem_parity_violation::<Q>(&p, &s).ok();
            let b = dem_parity_violation::<Q>(&p, &s2).ok();
            prop_assert_eq!(a, b);
            let a = eq_odds_violation::<Q>(&p, &s, &y).ok();
            let b = eq_odds_violation::<Q>(&p, &s2, &y).ok();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn rates_are_in_unit_interval(rows in proptest::collection::vec((0usize..3, 0usize..2, 0usize..3), 2..30)) {
            let p: Vec<usize> = rows.iter().map(|r| r.0).collect();
            let s: Vec<usize> = rows.iter().map(|r| r.1).collect();
            let y: Vec<usize> = rows.iter().map(|r| r.2).collect();
            for v in [dem_parity_violation::<f64>(&p, &s), eq_odds_violation::<f64>(&p, &s, &y)].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}

//! Tabular data loading, preprocessing, splitting and silo partitioning.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Column used for heterogeneous partitioning when the schema names none.
pub const DEFAULT_PARTITION_ATTRIBUTE: &str = "age";

/// Rows of (features, label, sensitive attribute).
///
/// `attributes` keeps raw (unstandardized) per-row values of numeric and
/// partition columns so partitioning can stratify on them after the
/// feature matrix has been standardized.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset<T> {
    pub features: Array2<T>,
    pub labels: Vec<usize>,
    pub sensitive: Vec<usize>,
    pub k: usize,
    pub l: usize,
    pub feature_names: Vec<String>,
    /// Feature-matrix columns that hold standardizable numeric values.
    pub numeric_features: Vec<usize>,
    pub attributes: BTreeMap<String, Vec<f64>>,
}

impl<T: Scalar> TabularDataset<T> {
    pub fn new(
        features: Array2<T>,
        labels: Vec<usize>,
        sensitive: Vec<usize>,
        k: usize,
        l: usize,
    ) -> Result<Self> {
        let d = features.ncols();
        let ds = Self {
            features,
            labels,
            sensitive,
            k,
            l,
            feature_names: (0..d).map(|c| format!("x{c}")).collect(),
            numeric_features: Vec::new(),
            attributes: BTreeMap::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.nrows();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if self.labels.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.labels.len() });
        }
        if self.sensitive.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.sensitive.len() });
        }
        if let Some(&y) = self.labels.iter().find(|&&y| y >= self.l) {
            return Err(Error::InvalidArgument(format!("label {y} out of range for l={}", self.l)));
        }
        if let Some(&s) = self.sensitive.iter().find(|&&s| s >= self.k) {
            return Err(Error::InvalidArgument(format!(
                "sensitive class {s} out of range for k={}",
                self.k
            )));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite feature value".into()));
        }
        for (name, col) in &self.attributes {
            if col.len() != n {
                return Err(Error::Schema(format!("attribute `{name}` has wrong length")));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, T> {
        self.features.row(i)
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            sensitive: indices.iter().map(|&i| self.sensitive[i]).collect(),
            k: self.k,
            l: self.l,
            feature_names: self.feature_names.clone(),
            numeric_features: self.numeric_features.clone(),
            attributes: self
                .attributes
                .iter()
                .map(|(name, col)| (name.clone(), indices.iter().map(|&i| col[i]).collect()))
                .collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> TabularDataset<U> {
        TabularDataset {
            features: self.features.mapv(|v| U::lit(v.as_f64())),
            labels: self.labels.clone(),
            sensitive: self.sensitive.clone(),
            k: self.k,
            l: self.l,
            feature_names: self.feature_names.clone(),
            numeric_features: self.numeric_features.clone(),
            attributes: self.attributes.clone(),
        }
    }
}

/// Role of a CSV column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ColumnRole {
    FeatureNumeric,
    FeatureCategorical,
    Label,
    Sensitive,
    PartitionAttribute,
    Drop,
}

impl std::str::FromStr for ColumnRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "feature_numeric" => ColumnRole::FeatureNumeric,
            "feature_categorical" => ColumnRole::FeatureCategorical,
            "label" => ColumnRole::Label,
            "sensitive" => ColumnRole::Sensitive,
            "partition_attribute" => ColumnRole::PartitionAttribute,
            "drop" => ColumnRole::Drop,
            other => return Err(Error::Schema(format!("unknown role `{other}`"))),
        })
    }
}

/// Column-name to role map.
///
/// Text format, one column per line: `name = role[, role...]`. Blank lines
/// and lines starting with `#` are ignored. A column may carry
/// `partition_attribute` together with a feature role, e.g.
/// `age = feature_numeric, partition_attribute`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Schema {
    pub columns: Vec<(String, Vec<ColumnRole>)>,
}

impl Schema {
    pub fn parse(text: &str) -> Result<Self> {
        let mut columns: Vec<(String, Vec<ColumnRole>)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, roles) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| Error::Schema(format!("line {}: expected `name = role`", lineno + 1)))?;
            let name = name.trim().to_string();
            if name.is_empty() {
                return Err(Error::Schema(format!("line {}: empty column name", lineno + 1)));
            }
            if columns.iter().any(|(c, _)| *c == name) {
                return Err(Error::Schema(format!("column `{name}` listed twice")));
            }
            let roles = roles.split(',').map(str::parse).collect::<Result<Vec<ColumnRole>>>()?;
            columns.push((name, roles));
        }
        let schema = Self { columns };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn columns_with(&self, role: ColumnRole) -> impl Iterator<Item = &str> {
        self.columns.iter().filter(move |(_, r)| r.contains(&role)).map(|(c, _)| c.as_str())
    }

    pub fn validate(&self) -> Result<()> {
        for (role, what) in [(ColumnRole::Label, "label"), (ColumnRole::Sensitive, "sensitive")] {
            let count = self.columns_with(role).count();
            if count != 1 {
                return Err(Error::Schema(format!("expected exactly one {what} column, found {count}")));
            }
        }
        for (name, roles) in &self.columns {
            let exclusive = roles
                .iter()
                .filter(|r| !matches!(r, ColumnRole::PartitionAttribute))
                .count();
            if exclusive > 1 {
                return Err(Error::Schema(format!("column `{name}` has conflicting roles")));
            }
        }
        Ok(())
    }

    pub fn label_column(&self) -> &str {
        self.columns_with(ColumnRole::Label).next().expect("validated")
    }

    pub fn sensitive_column(&self) -> &str {
        self.columns_with(ColumnRole::Sensitive).next().expect("validated")
    }

    pub fn partition_column(&self) -> Option<&str> {
        self.columns_with(ColumnRole::PartitionAttribute).next()
    }
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "?" || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan")
}

fn levels_of(rows: &[Vec<String>], col: usize) -> Vec<String> {
    rows.iter().map(|r| r[col].clone()).collect::<BTreeSet<_>>().into_iter().collect()
}

fn level_index(levels: &[String], value: &str) -> usize {
    levels.binary_search_by(|l| l.as_str().cmp(value)).expect("level collected from same rows")
}

/// Loads a headered, comma-delimited CSV file.
///
/// Rows with a missing value (empty, `?`, `NA`) in any used column are
/// dropped. Categorical columns are fully one-hot encoded with levels in
/// lexicographic order; label and sensitive classes are indexed the same
/// way. Numeric columns are left raw and listed in `numeric_features`;
/// fit a [`Standardizer`] on the training split to scale them.
pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, schema: &Schema) -> Result<TabularDataset<T>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "file not found")));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).delimiter(b',').from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut col_of = BTreeMap::new();
    for (name, _) in &schema.columns {
        let idx = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn(name.clone()))?;
        col_of.insert(name.as_str(), idx);
    }
    let used: Vec<usize> = schema
        .columns
        .iter()
        .filter(|(_, roles)| !roles.contains(&ColumnRole::Drop))
        .map(|(name, _)| col_of[name.as_str()])
        .collect();

    let mut rows: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row: Vec<String> = record.iter().map(|c| c.trim().to_string()).collect();
        if used.iter().any(|&c| row.get(c).is_none_or(|v| is_missing(v))) {
            continue;
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = rows.len();

    let label_col = col_of[schema.label_column()];
    let sens_col = col_of[schema.sensitive_column()];
    let label_levels = levels_of(&rows, label_col);
    let sens_levels = levels_of(&rows, sens_col);
    if label_levels.len() < 2 {
        return Err(Error::DegenerateColumn { column: schema.label_column().to_string() });
    }
    if sens_levels.len() < 2 {
        return Err(Error::DegenerateColumn { column: schema.sensitive_column().to_string() });
    }
    let labels: Vec<usize> = rows.iter().map(|r| level_index(&label_levels, &r[label_col])).collect();
    let sensitive: Vec<usize> = rows.iter().map(|r| level_index(&sens_levels, &r[sens_col])).collect();

    let parse_numeric = |name: &str, col: usize| -> Result<Vec<f64>> {
        rows.iter()
            .enumerate()
            .map(|(i, r)| {
                r[col].parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    Error::Schema(format!("column `{name}` row {}: `{}` is not a finite number", i + 1, r[col]))
                })
            })
            .collect()
    };

    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut feature_names = Vec::new();
    let mut numeric_features = Vec::new();
    let mut attributes = BTreeMap::new();
    for (name, roles) in &schema.columns {
        let col = col_of[name.as_str()];
        let is_numeric = roles.contains(&ColumnRole::FeatureNumeric);
        let is_categorical = roles.contains(&ColumnRole::FeatureCategorical);
        if is_numeric {
            let values = parse_numeric(name, col)?;
            numeric_features.push(columns.len());
            feature_names.push(name.clone());
            columns.push(values.clone());
            attributes.insert(name.clone(), values);
        } else if is_categorical {
            let levels = levels_of(&rows, col);
            let idx: Vec<usize> = rows.iter().map(|r| level_index(&levels, &r[col])).collect();
            for (li, level) in levels.iter().enumerate() {
                feature_names.push(format!("{name}={level}"));
                columns.push(idx.iter().map(|&v| if v == li { 1.0 } else { 0.0 }).collect());
            }
            attributes.insert(name.clone(), idx.iter().map(|&v| v as f64).collect());
        }
        if roles.contains(&ColumnRole::PartitionAttribute) && !is_numeric && !is_categorical {
            let values = match parse_numeric(name, col) {
                Ok(v) => v,
                Err(_) => {
                    let levels = levels_of(&rows, col);
                    rows.iter().map(|r| level_index(&levels, &r[col]) as f64).collect()
                }
            };
            attributes.insert(name.clone(), values);
        }
    }
    if columns.is_empty() {
        return Err(Error::Schema("schema declares no feature columns".into()));
    }

    let d = columns.len();
    let features = Array2::from_shape_fn((n, d), |(i, c)| T::lit(columns[c][i]));
    let ds = TabularDataset {
        features,
        labels,
        sensitive,
        k: sens_levels.len(),
        l: label_levels.len(),
        feature_names,
        numeric_features,
        attributes,
    };
    ds.validate()?;
    Ok(ds)
}

/// Per-column affine scaling fit on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub columns: Vec<usize>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    /// Zero mean, unit (population) variance for every numeric feature
    /// column. Constant columns get scale 1.
    pub fn fit<T: Scalar>(train: &TabularDataset<T>) -> Self {
        let n = train.n() as f64;
        let mut means = Vec::new();
        let mut scales = Vec::new();
        for &c in &train.numeric_features {
            let col = train.features.column(c);
            let mean = col.iter().map(|v| v.as_f64()).sum::<f64>() / n;
            let var = col.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            means.push(mean);
            scales.push(if sd > 0.0 && sd.is_finite() { sd } else { 1.0 });
        }
        Self { columns: train.numeric_features.clone(), means, scales }
    }

    pub fn apply<T: Scalar>(&self, ds: &mut TabularDataset<T>) {
        for ((&c, &mean), &scale) in self.columns.iter().zip(&self.means).zip(&self.scales) {
            ds.features.column_mut(c).mapv_inplace(|v| T::lit((v.as_f64() - mean) / scale));
        }
    }
}

/// Seeded split into `(train, test)` of sizes `⌈ratio·n⌉` and the rest.
/// Each side keeps the original row order.
pub fn train_test_split<T: Scalar>(
    dataset: &TabularDataset<T>,
    ratio: f64,
    seed: u64,
) -> Result<(TabularDataset<T>, TabularDataset<T>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("split ratio {ratio} not in (0, 1)")));
    }
    let n = dataset.n();
    // guard against 0.7 * 10 = 7.000000000000001 rounding up
    let n_train = ((ratio * n as f64) - 1e-9).ceil().max(0.0) as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::InvalidArgument(format!("split of {n} rows at ratio {ratio} leaves an empty side")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train_idx = order[..n_train].to_vec();
    let mut test_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((dataset.subset(&train_idx), dataset.subset(&test_idx)))
}

/// Loads, splits, and standardizes with statistics from the training side only.
pub fn prepare<T: Scalar>(
    path: impl AsRef<Path>,
    schema: &Schema,
    ratio: f64,
    seed: u64,
) -> Result<(TabularDataset<T>, TabularDataset<T>, Standardizer)> {
    let data = load_csv::<T>(path, schema)?;
    let (mut train, mut test) = train_test_split(&data, ratio, seed)?;
    let scaler = Standardizer::fit(&train);
    scaler.apply(&mut train);
    scaler.apply(&mut test);
    Ok((train, test, scaler))
}

/// Empirical distribution of the sensitive attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitiveDistribution<T> {
    pub probs: Array1<T>,
    /// Diagonal of `P̂_S^{-1/2}`.
    pub inv_sqrt: Array1<T>,
    pub rho: T,
}

impl<T: Scalar> SensitiveDistribution<T> {
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyDataset);
        }
        if let Some(class) = counts.iter().position(|&c| c == 0) {
            return Err(Error::MissingSensitiveClass { class });
        }
        let n = T::from_usize_lossy(total);
        let probs: Array1<T> = counts.iter().map(|&c| T::from_usize_lossy(c) / n).collect();
        let inv_sqrt = probs.mapv(|p| p.sqrt().recip());
        let rho = probs.iter().copied().fold(T::infinity(), T::min);
        Ok(Self { probs, inv_sqrt, rho })
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    /// Dense `P̂_S^{-1/2}`.
    pub fn inv_sqrt_matrix(&self) -> Array2<T> {
        Array2::from_diag(&self.inv_sqrt)
    }
}

pub fn class_counts(values: &[usize], classes: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for &v in values {
        counts[v] += 1;
    }
    counts
}

pub fn sensitive_distribution<T: Scalar>(dataset: &TabularDataset<T>) -> Result<SensitiveDistribution<T>> {
    SensitiveDistribution::from_counts(&class_counts(&dataset.sensitive, dataset.k))
}

/// `P̂_{S|Y=y}` for every label `y`, plus `p̂_Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalSensitive<T> {
    pub per_label: Vec<SensitiveDistribution<T>>,
    pub label_probs: Array1<T>,
}

pub fn conditional_sensitive<T: Scalar>(dataset: &TabularDataset<T>) -> Result<ConditionalSensitive<T>> {
    let mut cells = vec![vec![0usize; dataset.k]; dataset.l];
    for (&y, &s) in dataset.labels.iter().zip(&dataset.sensitive) {
        cells[y][s] += 1;
    }
    let per_label = cells
        .iter()
        .map(|c| SensitiveDistribution::from_counts(c))
        .collect::<Result<Vec<_>>>()?;
    let n = T::from_usize_lossy(dataset.n());
    let label_probs = cells.iter().map(|c| T::from_usize_lossy(c.iter().sum()) / n).collect();
    Ok(ConditionalSensitive { per_label, label_probs })
}

/// Assignment of global row indices to silos.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiloPartition {
    /// Sorted index set per silo.
    pub assignments: Vec<Vec<usize>>,
    /// Nominal silo size `⌊n/N⌋`; the last silo also holds the remainder.
    pub silo_size: usize,
}

impl SiloPartition {
    pub fn silos(&self) -> usize {
        self.assignments.len()
    }

    /// Checks the sets are disjoint and cover `0..n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for set in &self.assignments {
            for &i in set {
                if i >= n || seen[i] {
                    return Err(Error::Topology(format!("index {i} out of range or assigned twice")));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Topology("partition does not cover every row".into()));
        }
        Ok(())
    }
}

/// Heterogeneous partition of `n` rows into `silos` silos.
///
/// Rows are sorted by `values` (ties by index) and cut into `silos`
/// contiguous strata of `⌊n/silos⌋` rows, the last stratum taking the
/// remainder. Silo `k` first draws `⌊(n/silos)·h⌋` rows from stratum `k`
/// without replacement; each silo is then filled to its size from a single
/// shared pool of still-unassigned rows, again without replacement.
pub fn partition_by_values(values: &[f64], silos: usize, h: f64, seed: u64) -> Result<SiloPartition> {
    let n = values.len();
    if silos == 0 {
        return Err(Error::InvalidArgument("silo count must be at least 1".into()));
    }
    if silos > n {
        return Err(Error::InvalidArgument(format!("{silos} silos for {n} rows")));
    }
    if !(0.0..=1.0).contains(&h) {
        return Err(Error::InvalidArgument(format!("heterogeneity {h} not in [0, 1]")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("partition attribute has non-finite values".into()));
    }
    let base = n / silos;
    let size_of = |k: usize| if k + 1 == silos { n - base * (silos - 1) } else { base };

    let mut by_value: Vec<usize> = (0..n).collect();
    by_value.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assigned = vec![false; n];
    let mut sets: Vec<Vec<usize>> = Vec::with_capacity(silos);
    let own = ((base as f64) * h).floor() as usize;
    for k in 0..silos {
        let start = k * base;
        let stratum = &by_value[start..start + size_of(k)];
        let picks = rand::seq::index::sample(&mut rng, stratum.len(), own.min(stratum.len()));
        let mut set: Vec<usize> = picks.into_iter().map(|p| stratum[p]).collect();
        for &i in &set {
            assigned[i] = true;
        }
        set.sort_unstable();
        sets.push(set);
    }

    let mut pool: Vec<usize> = (0..n).filter(|&i| !assigned[i]).collect();
    pool.shuffle(&mut rng);
    let mut cursor = 0;
    for (k, set) in sets.iter_mut().enumerate() {
        let need = size_of(k) - set.len();
        set.extend_from_slice(&pool[cursor..cursor + need]);
        cursor += need;
        set.sort_unstable();
    }
    debug_assert_eq!(cursor, pool.len());
    Ok(SiloPartition { assignments: sets, silo_size: base })
}

/// [`partition_by_values`] on a named raw attribute of the dataset.
pub fn partition_heterogeneous<T: Scalar>(
    dataset: &TabularDataset<T>,
    silos: usize,
    h: f64,
    attribute: &str,
    seed: u64,
) -> Result<SiloPartition> {
    if silos > dataset.n() {
        return Err(Error::InvalidArgument(format!("{silos} silos for {} rows", dataset.n())));
    }
    let values = dataset
        .attributes
        .get(attribute)
        .ok_or_else(|| Error::UnknownColumn(attribute.to_string()))?;
    partition_by_values(values, silos, h, seed)
}

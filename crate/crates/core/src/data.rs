//! Labeled datasets: CSV ingestion with one-hot expansion of categorical
//! columns, standardization, stratified fold plans and synthetic generators.
//!
//! Points are stored column-wise: `features` is `d x M` and column `i` is
//! the i-th point. Labels are re-encoded to `1..=K`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A class label in `1..=K`.
pub type Label = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    labels: Vec<Label>,
    feature_names: Option<Vec<String>>,
    class_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset with classes named `"1".."K"`, where `K` is the
    /// largest label present.
    pub fn new(features: DMatrix<f64>, labels: Vec<Label>) -> Result<Self> {
        let k = labels.iter().copied().max().unwrap_or(0);
        let names = (1..=k).map(|c| c.to_string()).collect();
        Self::with_names(features, labels, None, names)
    }

    pub fn with_names(
        features: DMatrix<f64>,
        labels: Vec<Label>,
        feature_names: Option<Vec<String>>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let (d, m) = features.shape();
        let k = class_names.len();
        if d == 0 {
            return Err(Error::InvalidDataset("no features".into()));
        }
        if m < 2 {
            return Err(Error::InvalidDataset(format!("{m} point(s), at least 2 required")));
        }
        if labels.len() != m {
            return Err(Error::DimensionMismatch { expected: m, found: labels.len() });
        }
        if k < 2 {
            return Err(Error::TooFewClasses(k));
        }
        if let Some(names) = &feature_names {
            if names.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: names.len() });
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite feature value".into()));
        }
        let mut seen = vec![false; k];
        for &y in &labels {
            if y == 0 || y > k {
                return Err(Error::InvalidDataset(format!("label {y} outside 1..={k}")));
            }
            seen[y - 1] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidDataset(format!("class {} has no points", missing + 1)));
        }
        Ok(Self { features, labels, feature_names, class_names })
    }

    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn len(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> Label {
        self.labels[i]
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.features.as_slice()[i * d..(i + 1) * d]
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Number of points per class, indexed by `label - 1`.
    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.class_count()];
        for &y in &self.labels {
            sizes[y - 1] += 1;
        }
        sizes
    }

    /// Indices of the points of each class, indexed by `label - 1`.
    pub fn class_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.class_count()];
        for (i, &y) in self.labels.iter().enumerate() {
            members[y - 1].push(i);
        }
        members
    }

    /// The points at `indices`, keeping the class encoding of `self`.
    /// Fails if some class ends up with no points.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let features = self.features.select_columns(indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::with_names(features, labels, self.feature_names.clone(), self.class_names.clone())
    }

    /// Same labels and names, new feature matrix (e.g. after a transform).
    pub fn with_features(&self, features: DMatrix<f64>) -> Result<Self> {
        let names = if features.nrows() == self.dim() { self.feature_names.clone() } else { None };
        Self::with_names(features, self.labels.clone(), names, self.class_names.clone())
    }

    /// Re-encodes labels so that class `c` means `class_names[c - 1]`.
    pub fn align_classes(&self, class_names: &[String]) -> Result<Self> {
        let index: HashMap<&str, usize> =
            class_names.iter().enumerate().map(|(i, n)| (n.as_str(), i + 1)).collect();
        let mut labels = Vec::with_capacity(self.len());
        for &y in &self.labels {
            let name = &self.class_names[y - 1];
            match index.get(name.as_str()) {
                Some(&c) => labels.push(c),
                None => return Err(Error::InvalidDataset(format!("unknown class {name:?}"))),
            }
        }
        // Test sets may lack some classes; only the encoding must be valid.
        Ok(Self {
            features: self.features.clone(),
            labels,
            feature_names: self.feature_names.clone(),
            class_names: class_names.to_vec(),
        })
    }
}

/// A column of a CSV file, by header name or zero-based position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    Name(String),
    Index(usize),
}

impl ColumnRef {
    fn resolve(&self, header: &[String]) -> Result<usize> {
        match self {
            ColumnRef::Name(name) => header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(format!("{name:?}"))),
            ColumnRef::Index(i) if *i < header.len() => Ok(*i),
            ColumnRef::Index(i) => Err(Error::MissingColumn(format!("#{i}"))),
        }
    }
}

impl FromStr for ColumnRef {
    type Err = std::convert::Infallible;

    /// Pure digits select by position, anything else by name.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.to_string()),
        })
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnRef::Name(n) => write!(f, "{n}"),
            ColumnRef::Index(i) => write!(f, "{i}"),
        }
    }
}

fn is_missing(field: &str) -> bool {
    matches!(field, "" | "?" | "NA" | "NaN" | "nan" | "null")
}

/// Reads a comma-separated file with a header row.
///
/// Each categorical column with `b` distinct values becomes `b` indicator
/// features, ordered by first appearance. Labels are re-encoded to `1..=K`
/// in first-appearance order. Missing values are rejected.
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: &ColumnRef,
    categorical_columns: &[ColumnRef],
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);

    let header: Vec<String> =
        reader.headers().map_err(csv_err)?.iter().map(|h| h.trim().to_string()).collect();
    let label_idx = label_column.resolve(&header)?;
    let mut is_categorical = vec![false; header.len()];
    for c in categorical_columns {
        is_categorical[c.resolve(&header)?] = true;
    }

    let mut rows: Vec<Vec<String>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        if record.len() != header.len() {
            return Err(Error::RaggedRow { row: r + 1, expected: header.len(), found: record.len() });
        }
        rows.push(record.iter().map(|f| f.trim().to_string()).collect());
    }

    // Per source column: either one numeric feature or a block of indicators.
    let mut columns: Vec<(usize, Vec<String>)> = Vec::new();
    for (j, _) in header.iter().enumerate().filter(|&(j, _)| j != label_idx) {
        let mut levels: Vec<String> = Vec::new();
        if is_categorical[j] {
            for row in &rows {
                if !levels.contains(&row[j]) {
                    levels.push(row[j].clone());
                }
            }
        }
        columns.push((j, levels));
    }

    let mut feature_names = Vec::new();
    for (j, levels) in &columns {
        if is_categorical[*j] {
            feature_names.extend(levels.iter().map(|l| format!("{}={}", header[*j], l)));
        } else {
            feature_names.push(header[*j].clone());
        }
    }
    let d = feature_names.len();
    let m = rows.len();

    let mut data = Vec::with_capacity(d * m);
    let mut class_names: Vec<String> = Vec::new();
    let mut labels = Vec::with_capacity(m);
    for (r, row) in rows.iter().enumerate() {
        for (j, levels) in &columns {
            let field = &row[*j];
            if is_missing(field) {
                return Err(Error::MissingValue { row: r + 1, column: header[*j].clone() });
            }
            if is_categorical[*j] {
                data.extend(levels.iter().map(|l| if l == field { 1.0 } else { 0.0 }));
            } else {
                let v: f64 = field.parse().map_err(|_| Error::NonNumeric {
                    row: r + 1,
                    column: header[*j].clone(),
                    value: field.clone(),
                })?;
                if !v.is_finite() {
                    return Err(Error::NonNumeric {
                        row: r + 1,
                        column: header[*j].clone(),
                        value: field.clone(),
                    });
                }
                data.push(v);
            }
        }
        let raw = &row[label_idx];
        if is_missing(raw) {
            return Err(Error::MissingValue { row: r + 1, column: header[label_idx].clone() });
        }
        let y = match class_names.iter().position(|c| c == raw) {
            Some(p) => p + 1,
            None => {
                class_names.push(raw.clone());
                class_names.len()
            }
        };
        labels.push(y);
    }
    if class_names.len() < 2 {
        return Err(Error::TooFewClasses(class_names.len()));
    }
    let features = DMatrix::from_vec(d, m, data);
    Dataset::with_names(features, labels, Some(feature_names), class_names)
}

/// Writes a dataset as CSV with one column per feature and a trailing
/// `label` column holding the integer class.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = match ds.feature_names() {
        Some(names) => names.to_vec(),
        None => (1..=ds.dim()).map(|j| format!("x{j}")).collect(),
    };
    header.push("label".into());
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.point(i).iter().map(|v| format!("{v:?}")).collect();
        rec.push(ds.label(i).to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    Ok(())
}

/// Per-feature mean and sample standard deviation (divisor `M - 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ScalingRecord {
    pub fn fit(features: &DMatrix<f64>) -> Self {
        let (d, m) = features.shape();
        let mut mean = vec![0.0; d];
        let mut std = vec![0.0; d];
        for j in 0..d {
            let row = features.row(j);
            let mu = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (m as f64 - 1.0);
            mean[j] = mu;
            std[j] = var.sqrt();
        }
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Zero-variance features map to 0.
    pub fn apply_point(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (mu, sd))| if *sd > 0.0 { (v - mu) / sd } else { 0.0 })
            .collect()
    }

    pub fn apply(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if features.nrows() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: features.nrows() });
        }
        let mut out = features.clone();
        for mut col in out.column_iter_mut() {
            let scaled = self.apply_point(col.as_slice());
            col.copy_from_slice(&scaled);
        }
        Ok(out)
    }
}

/// Standardizes every feature to sample mean 0 and sample deviation 1.
pub fn standardize(ds: &Dataset) -> Result<(Dataset, ScalingRecord)> {
    let record = ScalingRecord::fit(ds.features());
    let scaled = ds.with_features(record.apply(ds.features())?)?;
    Ok((scaled, record))
}

/// One stratified assignment of every point to a test fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldPlan {
    pub fold_assignments: Vec<usize>,
    pub fold_count: usize,
    pub repeat_index: usize,
    pub seed: u64,
}

impl FoldPlan {
    /// `(train, test)` index lists for fold `f`.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let (test, train): (Vec<usize>, Vec<usize>) =
            (0..self.fold_assignments.len()).partition(|&i| self.fold_assignments[i] == f);
        (train, test)
    }
}

pub(crate) fn derived_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// `repeats` independent stratified plans over `fold_count` folds.
///
/// Each class is shuffled and dealt round-robin, continuing the deal across
/// classes, so fold sizes and per-class fold counts each differ by at most 1.
pub fn make_folds(
    ds: &Dataset,
    fold_count: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<FoldPlan>> {
    if fold_count < 2 {
        return Err(Error::InvalidConfig(format!("fold count {fold_count} < 2")));
    }
    for (c, &n) in ds.class_sizes().iter().enumerate() {
        if n < fold_count {
            return Err(Error::ClassTooSmall { label: c + 1, count: n, required: fold_count });
        }
    }
    let members = ds.class_members();
    let plans = (0..repeats)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(seed, r as u64));
            let mut assignments = vec![0; ds.len()];
            let mut next = 0usize;
            for class in &members {
                let mut idx = class.clone();
                idx.shuffle(&mut rng);
                for i in idx {
                    assignments[i] = next % fold_count;
                    next += 1;
                }
            }
            FoldPlan { fold_assignments: assignments, fold_count, repeat_index: r, seed }
        })
        .collect();
    Ok(plans)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    TwoGaussians,
    ConcentricCircles,
    Helix,
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_gaussians" => Ok(Self::TwoGaussians),
            "concentric_circles" => Ok(Self::ConcentricCircles),
            "helix" => Ok(Self::Helix),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TwoGaussians => "two_gaussians",
            Self::ConcentricCircles => "concentric_circles",
            Self::Helix => "helix",
        })
    }
}

/// Shape parameters of the synthetic generators.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    /// Class centers of `two_gaussians`; both must have the same length.
    pub gaussian_centers: [Vec<f64>; 2],
    /// Radii of the inner and outer class of `concentric_circles`.
    pub circle_radii: [f64; 2],
    pub helix_strands: usize,
    /// Number of full turns of each helix strand.
    pub helix_turns: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            gaussian_centers: [vec![-2.5, 0.0], vec![2.5, 0.0]],
            circle_radii: [1.0, 2.0],
            helix_strands: 5,
            helix_turns: 2.0,
        }
    }
}

pub const DEFAULT_CIRCLE_NOISE: f64 = 0.08;

pub fn generate_synthetic(kind: SyntheticKind, n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    generate_synthetic_with(kind, n, noise, seed, &SyntheticParams::default())
}

/// Points are emitted class by class; within a class, in generation order.
pub fn generate_synthetic_with(
    kind: SyntheticKind,
    n: usize,
    noise: f64,
    seed: u64,
    params: &SyntheticParams,
) -> Result<Dataset> {
    if n < 4 {
        return Err(Error::InvalidConfig(format!("n = {n} < 4")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise {noise} must be finite and >= 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { noise * rng.sample::<f64, _>(StandardNormal) };

    let classes = match kind {
        SyntheticKind::Helix => params.helix_strands,
        _ => 2,
    };
    if classes < 2 || n < 2 * classes {
        return Err(Error::InvalidConfig(format!("{n} points cannot fill {classes} classes")));
    }
    let sizes: Vec<usize> = (0..classes).map(|c| n / classes + usize::from(c < n % classes)).collect();

    let (d, names): (usize, Vec<&str>) = match kind {
        SyntheticKind::TwoGaussians => {
            let [a, b] = &params.gaussian_centers;
            if a.len() != b.len() || a.is_empty() {
                return Err(Error::InvalidConfig("gaussian centers must share a dimension".into()));
            }
            (a.len(), Vec::new())
        }
        SyntheticKind::ConcentricCircles => (2, vec!["x", "y"]),
        SyntheticKind::Helix => (3, vec!["x", "y", "z"]),
    };

    let mut data = Vec::with_capacity(d * n);
    let mut labels = Vec::with_capacity(n);
    for (c, &size) in sizes.iter().enumerate() {
        for _ in 0..size {
            match kind {
                SyntheticKind::TwoGaussians => {
                    for &mu in &params.gaussian_centers[c] {
                        data.push(mu + gauss(&mut rng));
                    }
                }
                SyntheticKind::ConcentricCircles => {
                    let theta = rng.random_range(0.0..2.0 * PI);
                    let r = params.circle_radii[c];
                    data.push(r * theta.cos() + gauss(&mut rng));
                    data.push(r * theta.sin() + gauss(&mut rng));
                }
                SyntheticKind::Helix => {
                    let t = rng.random_range(0.0..2.0 * PI * params.helix_turns);
                    let phase = 2.0 * PI * c as f64 / classes as f64;
                    data.push((t + phase).cos() + gauss(&mut rng));
                    data.push((t + phase).sin() + gauss(&mut rng));
                    data.push(t / (2.0 * PI) + gauss(&mut rng));
                }
            }
            labels.push(c + 1);
        }
    }
    let features = DMatrix::from_vec(d, n, data);
    let feature_names = if names.is_empty() {
        (1..=d).map(|j| format!("x{j}")).collect()
    } else {
        names.iter().map(|s| s.to_string()).collect()
    };
    let class_names = (1..=classes).map(|c| c.to_string()).collect();
    Dataset::with_names(features, labels, Some(feature_names), class_names)
}

//! Per-prototype low-rank Mahalanobis metrics.
//!
//! Each prototype `s` owns a factor `L_s` (`d x p`) and measures squared
//! distance as `|L_s^T (x - p_s)|^2`, which equals `(x - p_s)^T W_s (x - p_s)`
//! for the PSD matrix `W_s = L_s L_s^T`. The `d x d` matrix is never formed.
//! Distances under different prototypes' metrics are compared as they are.

use nalgebra::{DMatrix, DVector};

use crate::data::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FactorMetric {
    factor: DMatrix<f64>,
}

impl FactorMetric {
    pub fn new(factor: DMatrix<f64>) -> Result<Self> {
        let (d, p) = factor.shape();
        if d == 0 || p == 0 {
            return Err(Error::InvalidConfig(format!("factor shape {d}x{p}")));
        }
        if factor.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite factor entry".into()));
        }
        Ok(Self { factor })
    }

    /// The first `rank` columns of the `dim x dim` identity.
    pub fn identity(dim: usize, rank: usize) -> Self {
        Self { factor: DMatrix::identity(dim, rank) }
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub(crate) fn factor_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.factor
    }

    /// `W = L L^T`. For inspection and tests only.
    pub fn implied_metric(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }

    /// `|L^T (x - p)|^2`.
    #[inline]
    pub fn squared_distance(&self, x: &[f64], p: &[f64]) -> f64 {
        let d = self.dim();
        self.factor
            .as_slice()
            .chunks_exact(d)
            .map(|col| {
                let s: f64 = col.iter().zip(x.iter().zip(p)).map(|(l, (a, b))| l * (a - b)).sum();
                s * s
            })
            .sum()
    }

    /// `L^T (x - p)`.
    pub fn project(&self, x: &[f64], p: &[f64]) -> DVector<f64> {
        let d = self.dim();
        DVector::from_iterator(
            self.rank(),
            self.factor
                .as_slice()
                .chunks_exact(d)
                .map(|col| col.iter().zip(x.iter().zip(p)).map(|(l, (a, b))| l * (a - b)).sum()),
        )
    }
}

/// Labeled prototypes, each paired with its own metric.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    positions: DMatrix<f64>,
    labels: Vec<Label>,
    metrics: Vec<FactorMetric>,
}

/// Index and squared distance of a nearest prototype.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nearest {
    pub index: usize,
    pub distance: f64,
}

impl PrototypeSet {
    pub fn new(positions: DMatrix<f64>, labels: Vec<Label>, metrics: Vec<FactorMetric>) -> Result<Self> {
        let (d, s) = positions.shape();
        if s == 0 {
            return Err(Error::InvalidConfig("empty prototype set".into()));
        }
        if labels.len() != s {
            return Err(Error::DimensionMismatch { expected: s, found: labels.len() });
        }
        if metrics.len() != s {
            return Err(Error::DimensionMismatch { expected: s, found: metrics.len() });
        }
        let rank = metrics[0].rank();
        for m in &metrics {
            if m.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, found: m.dim() });
            }
            if m.rank() != rank {
                return Err(Error::InvalidConfig("prototype metrics differ in rank".into()));
            }
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite prototype position".into()));
        }
        if labels.contains(&0) {
            return Err(Error::InvalidConfig("prototype label 0".into()));
        }
        Ok(Self { positions, labels, metrics })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.positions.nrows()
    }

    pub fn rank(&self) -> usize {
        self.metrics[0].rank()
    }

    pub fn positions(&self) -> &DMatrix<f64> {
        &self.positions
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn metrics(&self) -> &[FactorMetric] {
        &self.metrics
    }

    pub fn position(&self, s: usize) -> &[f64] {
        let d = self.dim();
        &self.positions.as_slice()[s * d..(s + 1) * d]
    }

    pub(crate) fn position_mut(&mut self, s: usize) -> &mut [f64] {
        let d = self.dim();
        &mut self.positions.as_mut_slice()[s * d..(s + 1) * d]
    }

    pub(crate) fn metric_mut(&mut self, s: usize) -> &mut FactorMetric {
        &mut self.metrics[s]
    }

    /// True when every class in `1..=k` owns at least one prototype.
    pub fn covers_classes(&self, k: usize) -> bool {
        (1..=k).all(|c| self.labels.contains(&c))
    }

    fn check(&self, x: &[f64], s: usize) -> Result<()> {
        if s >= self.len() {
            return Err(Error::IndexOutOfRange { index: s, count: self.len() });
        }
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: x.len() });
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn distance_unchecked(&self, x: &[f64], s: usize) -> f64 {
        self.metrics[s].squared_distance(x, self.position(s))
    }

    /// Squared distance from `x` to prototype `s` under that prototype's metric.
    pub fn squared_distance(&self, x: &[f64], s: usize) -> Result<f64> {
        self.check(x, s)?;
        Ok(self.distance_unchecked(x, s))
    }

    /// `L_s^T (x - p_s)`; its squared norm is the squared distance.
    pub fn project(&self, x: &[f64], s: usize) -> Result<DVector<f64>> {
        self.check(x, s)?;
        Ok(self.metrics[s].project(x, self.position(s)))
    }

    /// Argmin over the prototypes accepted by `keep`; ties go to the lowest index.
    fn nearest_where(&self, x: &[f64], keep: impl Fn(Label) -> bool) -> Option<Nearest> {
        let mut best: Option<Nearest> = None;
        for s in 0..self.len() {
            if !keep(self.labels[s]) {
                continue;
            }
            let distance = self.distance_unchecked(x, s);
            if best.is_none_or(|b| distance < b.distance) {
                best = Some(Nearest { index: s, distance });
            }
        }
        best
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: x.len() });
        }
        Ok(())
    }

    pub fn nearest_same_class(&self, x: &[f64], label: Label) -> Result<Nearest> {
        self.check_point(x)?;
        self.nearest_where(x, |l| l == label)
            .ok_or_else(|| Error::NoPrototype(format!("of class {label}")))
    }

    pub fn nearest_diff_class(&self, x: &[f64], label: Label) -> Result<Nearest> {
        self.check_point(x)?;
        self.nearest_where(x, |l| l != label)
            .ok_or_else(|| Error::NoPrototype(format!("outside class {label}")))
    }

    /// Nearest prototype of any class.
    pub fn nearest(&self, x: &[f64]) -> Result<Nearest> {
        self.check_point(x)?;
        self.nearest_where(x, |_| true).ok_or_else(|| Error::NoPrototype("at all".into()))
    }
}

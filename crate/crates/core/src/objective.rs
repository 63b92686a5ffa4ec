//! Sigmoid-smoothed nearest-prototype error and its gradients.
//!
//! For a point `x` with nearest same-class prototype `a` and nearest
//! different-class prototype `b`, the ratio `R = d_a(x) / d_b(x)` is below 1
//! exactly when the prototype-NN rule labels `x` correctly. The objective is
//! the mean of `S(R)` over the training points, with
//! `S(z) = 1 / (1 + exp(beta (1 - z)))`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::metric::PrototypeSet;

pub const DEFAULT_BETA: f64 = 10.0;
pub const DEFAULT_DENOM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub beta: f64,
    /// Lower bound applied to the different-class distance before dividing.
    pub denom_floor: f64,
}

impl LossConfig {
    pub fn new(beta: f64) -> Result<Self> {
        Self::with_floor(beta, DEFAULT_DENOM_FLOOR)
    }

    pub fn with_floor(beta: f64, denom_floor: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("beta {beta} must be positive")));
        }
        if !(denom_floor > 0.0 && denom_floor <= 1e-9) {
            return Err(Error::InvalidConfig(format!("denominator floor {denom_floor} outside (0, 1e-9]")));
        }
        Ok(Self { beta, denom_floor })
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { beta: DEFAULT_BETA, denom_floor: DEFAULT_DENOM_FLOOR }
    }
}

/// `(S(z), 1 - S(z))`, each evaluated without cancellation or overflow.
#[inline]
fn sigmoid_pair(z: f64, beta: f64) -> (f64, f64) {
    let t = beta * (1.0 - z);
    if t >= 0.0 {
        let e = (-t).exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    } else {
        let e = t.exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    }
}

/// `1 / (1 + exp(beta (1 - z)))`: increasing, `0.5` at `z = 1`.
pub fn sigmoid(z: f64, beta: f64) -> f64 {
    sigmoid_pair(z, beta).0
}

/// `beta S(z) (1 - S(z))`.
pub fn sigmoid_derivative(z: f64, beta: f64) -> f64 {
    let (s, one_minus) = sigmoid_pair(z, beta);
    beta * s * one_minus
}

/// Nearest same/different-class prototypes of one point and their ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioRecord {
    pub same_index: usize,
    pub diff_index: usize,
    pub d_same: f64,
    pub d_diff: f64,
    /// `d_same / max(d_diff, denom_floor)`.
    pub ratio: f64,
}

impl RatioRecord {
    fn new(same_index: usize, diff_index: usize, d_same: f64, d_diff: f64, cfg: &LossConfig) -> Self {
        let ratio = d_same / d_diff.max(cfg.denom_floor);
        Self { same_index, diff_index, d_same, d_diff, ratio }
    }

    /// Re-evaluates the ratio for the same pair of prototypes.
    pub fn frozen(
        x: &[f64],
        same_index: usize,
        diff_index: usize,
        ps: &PrototypeSet,
        cfg: &LossConfig,
    ) -> Result<Self> {
        let d_same = ps.squared_distance(x, same_index)?;
        let d_diff = ps.squared_distance(x, diff_index)?;
        Ok(Self::new(same_index, diff_index, d_same, d_diff, cfg))
    }
}

pub fn ratio(x: &[f64], label: Label, ps: &PrototypeSet, cfg: &LossConfig) -> Result<RatioRecord> {
    let same = ps.nearest_same_class(x, label)?;
    let diff = ps.nearest_diff_class(x, label)?;
    Ok(RatioRecord::new(same.index, diff.index, same.distance, diff.distance, cfg))
}

/// Mean of `S(R(x))` over the dataset; lies in `[0, 1]`.
pub fn objective(ds: &Dataset, ps: &PrototypeSet, cfg: &LossConfig) -> Result<f64> {
    let terms: Vec<f64> = (0..ds.len())
        .into_par_iter()
        .map(|i| ratio(ds.point(i), ds.label(i), ps, cfg).map(|r| sigmoid(r.ratio, cfg.beta)))
        .collect::<Result<_>>()?;
    // Sequential sum keeps the result independent of thread scheduling.
    Ok(terms.iter().sum::<f64>() / ds.len() as f64)
}

/// Per-sample gradients of `S(R(x))` with respect to the two factors and
/// the two prototype positions involved in `R(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGradients {
    pub grad_factor_same: DMatrix<f64>,
    pub grad_factor_diff: DMatrix<f64>,
    pub grad_proto_same: DVector<f64>,
    pub grad_proto_diff: DVector<f64>,
    pub ratio: f64,
    /// `S'(R)`, the window weighting every block.
    pub window: f64,
    pub same_index: usize,
    pub diff_index: usize,
}

impl SampleGradients {
    pub fn is_finite(&self) -> bool {
        self.grad_factor_same.iter().all(|v| v.is_finite())
            && self.grad_factor_diff.iter().all(|v| v.is_finite())
            && self.grad_proto_same.iter().all(|v| v.is_finite())
            && self.grad_proto_diff.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        [
            self.grad_factor_same.amax(),
            self.grad_factor_diff.amax(),
            self.grad_proto_same.amax(),
            self.grad_proto_diff.amax(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub fn sample_gradients(
    x: &[f64],
    label: Label,
    ps: &PrototypeSet,
    cfg: &LossConfig,
) -> Result<SampleGradients> {
    let rec = ratio(x, label, ps, cfg)?;
    Ok(gradients_at(x, &rec, ps, cfg))
}

/// Gradients for a fixed same/different prototype pair.
///
/// With `g = S'(R)`, `D = max(d_diff, floor)`, `u = x - p_a`, `v = x - p_b`:
///
/// ```text
/// dL_a = g / D      * 2 u u^T L_a
/// dL_b = -g R / D   * 2 v v^T L_b
/// dp_a = -g / D     * 2 L_a L_a^T u
/// dp_b = g R / D    * 2 L_b L_b^T v
/// ```
pub fn gradients_at(x: &[f64], rec: &RatioRecord, ps: &PrototypeSet, cfg: &LossConfig) -> SampleGradients {
    let window = sigmoid_derivative(rec.ratio, cfg.beta);
    let denom = rec.d_diff.max(cfg.denom_floor);
    let xv = DVector::from_column_slice(x);

    let same = &ps.metrics()[rec.same_index];
    let u = &xv - DVector::from_column_slice(ps.position(rec.same_index));
    let proj_u = same.factor().tr_mul(&u); // L_a^T u
    let coef_same = window / denom;
    let grad_factor_same = &u * proj_u.transpose() * (2.0 * coef_same);
    let grad_proto_same = same.factor() * &proj_u * (-2.0 * coef_same);

    let diff = &ps.metrics()[rec.diff_index];
    let v = &xv - DVector::from_column_slice(ps.position(rec.diff_index));
    let proj_v = diff.factor().tr_mul(&v);
    let coef_diff = window * rec.ratio / denom;
    let grad_factor_diff = &v * proj_v.transpose() * (-2.0 * coef_diff);
    let grad_proto_diff = diff.factor() * &proj_v * (2.0 * coef_diff);

    SampleGradients {
        grad_factor_same,
        grad_factor_diff,
        grad_proto_same,
        grad_proto_diff,
        ratio: rec.ratio,
        window,
        same_index: rec.same_index,
        diff_index: rec.diff_index,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::FactorMetric;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn set(positions: &[f64], d: usize, labels: Vec<Label>) -> PrototypeSet {
        let s = labels.len();
        PrototypeSet::new(
            DMatrix::from_column_slice(d, s, positions),
            labels,
            vec![FactorMetric::identity(d, d); s],
        )
        .unwrap()
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(1.0, 3.7), 0.5);
        // Closed form 1/(1+e^10) and 1/(1+e^-10).
        assert!((sigmoid(0.0, 10.0) - 4.5397868702434395e-5).abs() < 1e-18);
        assert!((sigmoid(2.0, 10.0) - 0.9999546021312976).abs() < 1e-15);
        assert_eq!(sigmoid(-1e6, 10.0), 0.0);
        assert_eq!(sigmoid(1e6, 10.0), 1.0);
        let mut prev = 0.0;
        for i in 0..200 {
            let v = sigmoid(-2.0 + 0.03 * i as f64, 10.0);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn sigmoid_derivative_values() {
        assert_eq!(sigmoid_derivative(1.0, 10.0), 2.5);
        // 10 e^-20 / (1 + e^-20)^2
        let expected = 10.0 * (-20f64).exp() / (1.0 + (-20f64).exp()).powi(2);
        assert!((sigmoid_derivative(3.0, 10.0) - expected).abs() < 1e-22);
        assert!((expected - 2.061e-8).abs() < 1e-11);
        assert!(sigmoid_derivative(1e6, 10.0) >= 0.0);
        assert!(sigmoid_derivative(-1e6, 10.0) >= 0.0);
    }

    #[test]
    fn loss_config_validation() {
        assert!(LossConfig::new(0.0).is_err());
        assert!(LossConfig::with_floor(10.0, 1e-6).is_err());
        assert!(LossConfig::new(10.0).is_ok());
    }

    #[test]
    fn ratio_examples() {
        let cfg = LossConfig::default();
        let ps = set(&[0.0, 0.0, 3.0, 4.0], 2, vec![1, 2]);
        let r = ratio(&[0.0, 0.0], 1, &ps, &cfg).unwrap();
        assert_eq!(r.ratio, 0.0);
        let r = ratio(&[1.5, 2.0], 1, &ps, &cfg).unwrap();
        assert_eq!(r.ratio, 1.0);
        assert_eq!((r.same_index, r.diff_index), (0, 1));

        // Coincident with a different-class prototype: floor, no division by zero.
        let r = ratio(&[3.0, 4.0], 1, &ps, &cfg).unwrap();
        assert_eq!(r.ratio, 25.0 / 1e-12);

        let one_class = set(&[0.0, 0.0], 2, vec![1]);
        assert!(ratio(&[0.0, 0.0], 1, &one_class, &cfg).is_err());
    }

    #[test]
    fn ratio_matches_exhaustive_scan() {
        let cfg = LossConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let labels = vec![1, 2, 1, 3, 2];
            let positions = DMatrix::from_fn(3, 5, |_, _| rng.sample(StandardNormal));
            let metrics = (0..5)
                .map(|_| FactorMetric::new(DMatrix::from_fn(3, 2, |_, _| rng.sample(StandardNormal))).unwrap())
                .collect();
            let ps = PrototypeSet::new(positions, labels.clone(), metrics).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let d: Vec<f64> = (0..5).map(|s| ps.squared_distance(&x, s).unwrap()).collect();
            let same = (0..5).filter(|&s| labels[s] == 2).map(|s| d[s]).fold(f64::INFINITY, f64::min);
            let diff = (0..5).filter(|&s| labels[s] != 2).map(|s| d[s]).fold(f64::INFINITY, f64::min);
            let r = ratio(&x, 2, &ps, &cfg).unwrap();
            assert_eq!(r.ratio, same / diff);
            assert_eq!(r.ratio < 1.0, ps.nearest(&x).unwrap().index == r.same_index);
        }
    }

    #[test]
    fn objective_examples() {
        let cfg = LossConfig::default();
        let ps = set(&[0.0, 0.0, 10.0, 10.0], 2, vec![1, 2]);
        let ds = Dataset::new(DMatrix::from_column_slice(2, 2, &[0.0, 0.0, 10.0, 10.0]), vec![1, 2]).unwrap();
        let j = objective(&ds, &ps, &cfg).unwrap();
        assert!((0.0..1e-4).contains(&j));

        // One point on the boundary (R = 1) adds 0.5 / M.
        let ds = Dataset::new(
            DMatrix::from_column_slice(2, 3, &[0.0, 0.0, 10.0, 10.0, 5.0, 5.0]),
            vec![1, 2, 1],
        )
        .unwrap();
        let j = objective(&ds, &ps, &cfg).unwrap();
        assert!((j - (2.0 * sigmoid(0.0, 10.0) + 0.5) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn coincident_point_zeroes_same_blocks() {
        let cfg = LossConfig::default();
        let ps = set(&[0.0, 0.0, 1.0, 1.0], 2, vec![1, 2]);
        let g = sample_gradients(&[0.0, 0.0], 1, &ps, &cfg).unwrap();
        assert_eq!(g.grad_factor_same.amax(), 0.0);
        assert_eq!(g.grad_proto_same.amax(), 0.0);
    }

    #[test]
    fn saturated_sample_has_negligible_gradients() {
        let cfg = LossConfig::default();
        // d_same = 3, d_diff = 1 -> R = 3.
        let ps = set(&[3f64.sqrt(), 0.0, 0.0, 1.0], 2, vec![1, 2]);
        let g = sample_gradients(&[0.0, 0.0], 1, &ps, &cfg).unwrap();
        assert!((g.ratio - 3.0).abs() < 1e-12);
        assert!(g.max_abs() <= 1e-6, "{}", g.max_abs());
    }

    #[test]
    fn prototype_steps_move_toward_and_away() {
        let cfg = LossConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let positions = DMatrix::from_fn(3, 2, |_, _| rng.sample(StandardNormal));
            let metrics = (0..2)
                .map(|_| FactorMetric::new(DMatrix::from_fn(3, 2, |_, _| rng.sample(StandardNormal))).unwrap())
                .collect();
            let ps = PrototypeSet::new(positions, vec![1, 2], metrics).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let g = sample_gradients(&x, 1, &ps, &cfg).unwrap();
            let xv = DVector::from_column_slice(&x);
            let u = &xv - DVector::from_column_slice(ps.position(0));
            let v = &xv - DVector::from_column_slice(ps.position(1));
            // Descent step is -grad; toward x means positive inner product with u.
            assert!((-&g.grad_proto_same).dot(&u) >= 0.0);
            assert!((-&g.grad_proto_diff).dot(&v) <= 0.0);
        }
    }
}

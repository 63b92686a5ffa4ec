//! Joint learning of prototype positions and their local metrics.
//!
//! Training is online: every visited point updates the factor and the
//! position of its nearest same-class and nearest different-class
//! prototype, each through its own Adadelta state. After every epoch the
//! objective is recomputed and training stops once it changes by no more
//! than `epsilon_converge`.

pub mod adadelta;

pub use adadelta::{AdadeltaState, DEFAULT_EPS as DEFAULT_EPS_ADA, DEFAULT_RHO};

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{derived_seed, standardize, Dataset, Label, ScalingRecord};
use crate::error::{Error, Result};
use crate::eval;
use crate::kernel::{to_kernel_coordinates, Kernel, KernelDescriptor};
use crate::metric::{FactorMetric, Nearest, PrototypeSet};
use crate::objective::{gradients_at, objective, ratio, LossConfig, SampleGradients};

pub const DEFAULT_PROTOTYPES_PER_CLASS: usize = 5;
pub const DEFAULT_EPSILON_CONVERGE: f64 = 1e-5;
pub const DEFAULT_MAX_EPOCHS: usize = 200;
pub const DEFAULT_INIT_NOISE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Linear,
    Kernel,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Mode::Linear),
            "kernel" => Ok(Mode::Kernel),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Linear => "linear",
            Mode::Kernel => "kernel",
        })
    }
}

/// `2^-15, 2^-14, ..., 2^3`.
pub fn default_sigma_grid() -> Vec<f64> {
    (-15..=3).map(|e| 2f64.powi(e)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub prototypes_per_class: usize,
    /// Factor width `p`; `None` uses the input dimension (capped by the
    /// coordinate dimension in kernel mode).
    pub rank: Option<usize>,
    pub beta: f64,
    pub epsilon_converge: f64,
    pub max_epochs: usize,
    pub rho: f64,
    pub eps_ada: f64,
    pub seed: u64,
    pub mode: Mode,
    pub kernel: Option<Kernel>,
    /// Candidate rbf widths; when set, `sigma` is chosen by internal
    /// cross-validation on the training data.
    pub sigma_grid: Option<Vec<f64>>,
    pub sigma_folds: usize,
    pub standardize: bool,
    /// Standard deviation of the Gaussian noise added to the initial factors.
    pub init_noise: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            prototypes_per_class: DEFAULT_PROTOTYPES_PER_CLASS,
            rank: None,
            beta: crate::objective::DEFAULT_BETA,
            epsilon_converge: DEFAULT_EPSILON_CONVERGE,
            max_epochs: DEFAULT_MAX_EPOCHS,
            rho: DEFAULT_RHO,
            eps_ada: DEFAULT_EPS_ADA,
            seed: 0,
            mode: Mode::Linear,
            kernel: None,
            sigma_grid: None,
            sigma_folds: 10,
            standardize: true,
            init_noise: DEFAULT_INIT_NOISE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.prototypes_per_class == 0 {
            return bad("prototypes_per_class must be >= 1".into());
        }
        if self.rank == Some(0) {
            return bad("rank must be >= 1".into());
        }
        LossConfig::new(self.beta)?;
        if self.epsilon_converge.is_nan() || self.epsilon_converge < 0.0 {
            return bad(format!("epsilon_converge {}", self.epsilon_converge));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1".into());
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho {} outside (0, 1)", self.rho));
        }
        if !(self.eps_ada > 0.0 && self.eps_ada.is_finite()) {
            return bad(format!("eps_ada {}", self.eps_ada));
        }
        if !(self.init_noise >= 0.0 && self.init_noise.is_finite()) {
            return bad(format!("init_noise {}", self.init_noise));
        }
        if self.mode == Mode::Kernel && self.kernel.is_none() {
            return bad("kernel mode requires a kernel".into());
        }
        if let Some(Kernel::Rbf { sigma }) = self.kernel {
            Kernel::rbf(sigma)?;
        }
        if let Some(grid) = &self.sigma_grid {
            if grid.is_empty() || grid.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return bad("sigma grid must hold positive values".into());
            }
            if self.sigma_folds < 2 {
                return bad("sigma_folds must be >= 2".into());
            }
        }
        Ok(())
    }

    fn loss(&self) -> LossConfig {
        LossConfig { beta: self.beta, ..LossConfig::default() }
    }

    fn rank_for(&self, input_dim: usize, coord_dim: usize) -> Result<usize> {
        let rank = self.rank.unwrap_or(input_dim.min(coord_dim));
        if rank == 0 || rank > coord_dim {
            return Err(Error::InvalidConfig(format!("rank {rank} outside 1..={coord_dim}")));
        }
        Ok(rank)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub initial_objective: f64,
    pub final_objective: f64,
    pub epochs: usize,
    pub converged: bool,
}

/// A trained prototype classifier.
///
/// Prototypes live in the model space: standardized input space in linear
/// mode, kernel coordinates against `kernel.reference_points` in kernel mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub prototypes: PrototypeSet,
    pub mode: Mode,
    pub kernel: Option<KernelDescriptor>,
    pub scaling: Option<ScalingRecord>,
    pub beta: f64,
    pub input_dim: usize,
    pub class_names: Vec<String>,
    pub summary: TrainSummary,
}

impl Model {
    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn rank(&self) -> usize {
        self.prototypes.rank()
    }

    /// Maps a raw input point into the space the prototypes live in.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, found: x.len() });
        }
        let scaled = match &self.scaling {
            Some(rec) => rec.apply_point(x),
            None => x.to_vec(),
        };
        match &self.kernel {
            Some(kd) => kd.coordinates_of(&scaled),
            None => Ok(scaled),
        }
    }

    /// Raw input matrix (`d x N`) to model space (`d' x N`).
    pub fn transform_all(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if points.nrows() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, found: points.nrows() });
        }
        let scaled = match &self.scaling {
            Some(rec) => rec.apply(points)?,
            None => points.clone(),
        };
        match &self.kernel {
            Some(kd) => Ok(to_kernel_coordinates(&scaled, kd)?.coords),
            None => Ok(scaled),
        }
    }

    /// Nearest prototype of a raw input point.
    pub fn nearest(&self, x: &[f64]) -> Result<Nearest> {
        self.prototypes.nearest(&self.transform(x)?)
    }
}

/// Samples `prototypes_per_class` distinct points of every class as initial
/// prototypes and gives each the identity-like factor `[I_p; 0]` plus noise.
pub fn initialize(ds: &Dataset, cfg: &TrainConfig) -> Result<PrototypeSet> {
    initialize_with_rank(ds, cfg, cfg.rank_for(ds.dim(), ds.dim())?)
}

fn initialize_with_rank(ds: &Dataset, cfg: &TrainConfig, rank: usize) -> Result<PrototypeSet> {
    let n = cfg.prototypes_per_class;
    let sizes = ds.class_sizes();
    for (c, &size) in sizes.iter().enumerate() {
        if size < n {
            return Err(Error::ClassTooSmall { label: c + 1, count: size, required: n });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut chosen = Vec::with_capacity(n * ds.class_count());
    let mut labels = Vec::with_capacity(n * ds.class_count());
    for (c, members) in ds.class_members().iter().enumerate() {
        let mut picks: Vec<usize> = members.choose_multiple(&mut rng, n).copied().collect();
        picks.sort_unstable();
        chosen.extend(picks);
        labels.extend(std::iter::repeat_n(c + 1, n));
    }
    let positions = ds.features().select_columns(&chosen);
    let d = ds.dim();
    let metrics = labels
        .iter()
        .map(|_| {
            let mut factor = DMatrix::identity(d, rank);
            if cfg.init_noise > 0.0 {
                factor.iter_mut().for_each(|v| *v += cfg.init_noise * rng.sample::<f64, _>(StandardNormal));
            }
            FactorMetric::new(factor)
        })
        .collect::<Result<Vec<_>>>()?;
    PrototypeSet::new(positions, labels, metrics)
}

/// What one sample visit did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Visit {
    pub same_index: usize,
    pub diff_index: usize,
    pub ratio: f64,
    /// `S'(R)`; zero means the sample could not move any parameter.
    pub window: f64,
}

/// Online optimizer state over a fixed training set.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    data: &'a Dataset,
    loss: LossConfig,
    prototypes: PrototypeSet,
    factor_states: Vec<Option<AdadeltaState>>,
    position_states: Vec<Option<AdadeltaState>>,
    rho: f64,
    eps_ada: f64,
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a Dataset, prototypes: PrototypeSet, cfg: &TrainConfig) -> Result<Self> {
        if prototypes.dim() != data.dim() {
            return Err(Error::DimensionMismatch { expected: data.dim(), found: prototypes.dim() });
        }
        if !prototypes.covers_classes(data.class_count()) {
            return Err(Error::NoPrototype("for some class".into()));
        }
        let s = prototypes.len();
        Ok(Self {
            data,
            loss: cfg.loss(),
            prototypes,
            factor_states: vec![None; s],
            position_states: vec![None; s],
            rho: cfg.rho,
            eps_ada: cfg.eps_ada,
        })
    }

    pub fn prototypes(&self) -> &PrototypeSet {
        &self.prototypes
    }

    pub fn into_prototypes(self) -> PrototypeSet {
        self.prototypes
    }

    pub fn objective(&self) -> Result<f64> {
        objective(self.data, &self.prototypes, &self.loss)
    }

    fn state(slot: &mut Option<AdadeltaState>, len: usize, rho: f64, eps: f64) -> &mut AdadeltaState {
        slot.get_or_insert_with(|| AdadeltaState::new(len, rho, eps))
    }

    /// Visits training point `i`: finds its two nearest prototypes and
    /// applies one Adadelta update to each of the four parameter blocks.
    pub fn visit(&mut self, i: usize) -> Result<Visit> {
        let x = self.data.point(i);
        let label: Label = self.data.label(i);
        let rec = ratio(x, label, &self.prototypes, &self.loss)?;
        let grads = gradients_at(x, &rec, &self.prototypes, &self.loss);
        if !grads.is_finite() {
            return Err(Error::NonFiniteGradient);
        }
        self.apply(&grads)?;
        Ok(Visit { same_index: rec.same_index, diff_index: rec.diff_index, ratio: rec.ratio, window: grads.window })
    }

    fn apply(&mut self, g: &SampleGradients) -> Result<()> {
        let (rho, eps) = (self.rho, self.eps_ada);
        for (s, grad) in [(g.same_index, &g.grad_factor_same), (g.diff_index, &g.grad_factor_diff)] {
            let factor = self.prototypes.metric_mut(s).factor_mut();
            let st = Self::state(&mut self.factor_states[s], factor.len(), rho, eps);
            st.apply(factor.as_mut_slice(), grad.as_slice())?;
        }
        for (s, grad) in [(g.same_index, &g.grad_proto_same), (g.diff_index, &g.grad_proto_diff)] {
            let position = self.prototypes.position_mut(s);
            let st = Self::state(&mut self.position_states[s], position.len(), rho, eps);
            st.apply(position, grad.as_slice())?;
        }
        Ok(())
    }

    fn parameters_finite(&self, a: usize, b: usize) -> bool {
        [a, b].into_iter().all(|s| {
            self.prototypes.position(s).iter().all(|v| v.is_finite())
                && self.prototypes.metrics()[s].factor().iter().all(|v| v.is_finite())
        })
    }
}

/// Runs the epoch loop on data already in model space.
pub fn fit(ds: &Dataset, cfg: &TrainConfig, rank: usize) -> Result<(PrototypeSet, TrainSummary)> {
    fit_from(ds, cfg, initialize_with_rank(ds, cfg, rank)?)
}

/// Runs the training loop from the given starting prototypes. `ds` must
/// already be in model space.
pub fn fit_from(ds: &Dataset, cfg: &TrainConfig, init: PrototypeSet) -> Result<(PrototypeSet, TrainSummary)> {
    let mut trainer = Trainer::new(ds, init, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(cfg.seed, 0x5eed));
    let mut order: Vec<usize> = (0..ds.len()).collect();

    let initial = trainer.objective()?;
    let mut lambda = initial;
    let mut epochs = 0;
    let mut converged = false;
    while epochs < cfg.max_epochs {
        let previous = lambda;
        order.shuffle(&mut rng);
        let mut active = false;
        for &i in &order {
            let visit = trainer.visit(i).map_err(|e| Error::TrainingAborted {
                epoch: epochs + 1,
                sample: i,
                reason: e.to_string(),
            })?;
            if !trainer.parameters_finite(visit.same_index, visit.diff_index) {
                return Err(Error::TrainingAborted {
                    epoch: epochs + 1,
                    sample: i,
                    reason: "non-finite parameter".into(),
                });
            }
            active |= visit.window > 0.0;
        }
        epochs += 1;
        lambda = trainer.objective()?;
        if !active || (previous - lambda).abs() <= cfg.epsilon_converge {
            converged = true;
            break;
        }
    }
    let summary = TrainSummary { initial_objective: initial, final_objective: lambda, epochs, converged };
    Ok((trainer.into_prototypes(), summary))
}

fn scaled(ds: &Dataset, cfg: &TrainConfig) -> Result<(Dataset, Option<ScalingRecord>)> {
    if cfg.standardize {
        let (s, rec) = standardize(ds)?;
        Ok((s, Some(rec)))
    } else {
        Ok((ds.clone(), None))
    }
}

/// Trains in the mode selected by `cfg.mode`.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<Model> {
    cfg.validate()?;
    match cfg.mode {
        Mode::Linear => {
            let (data, scaling) = scaled(ds, cfg)?;
            let rank = cfg.rank_for(ds.dim(), ds.dim())?;
            let (prototypes, summary) = fit(&data, cfg, rank)?;
            Ok(Model {
                prototypes,
                mode: Mode::Linear,
                kernel: None,
                scaling,
                beta: cfg.beta,
                input_dim: ds.dim(),
                class_names: ds.class_names().to_vec(),
                summary,
            })
        }
        Mode::Kernel => train_kernelized(ds, cfg),
    }
}

/// Linear-mode model at its starting point: sampled prototypes with exact
/// `[I_p; 0]` factors and no training.
pub fn untrained(ds: &Dataset, cfg: &TrainConfig) -> Result<Model> {
    cfg.validate()?;
    let (data, scaling) = scaled(ds, cfg)?;
    let rank = cfg.rank_for(ds.dim(), ds.dim())?;
    let prototypes = initialize_with_rank(&data, &TrainConfig { init_noise: 0.0, ..cfg.clone() }, rank)?;
    let j = crate::objective::objective(&data, &prototypes, &cfg.loss())?;
    Ok(Model {
        prototypes,
        mode: Mode::Linear,
        kernel: None,
        scaling,
        beta: cfg.beta,
        input_dim: ds.dim(),
        class_names: ds.class_names().to_vec(),
        summary: TrainSummary { initial_objective: j, final_objective: j, epochs: 0, converged: false },
    })
}

/// Trains on kernel coordinates against the (standardized) training points.
///
/// Prototypes start as kernel columns of sampled training points and move
/// freely in coordinate space; factors are `M_ref x p`.
pub fn train_kernelized(ds: &Dataset, cfg: &TrainConfig) -> Result<Model> {
    cfg.validate()?;
    let mut kernel = cfg.kernel.ok_or_else(|| Error::InvalidConfig("kernel mode requires a kernel".into()))?;
    if let (Kernel::Rbf { .. }, Some(grid)) = (kernel, &cfg.sigma_grid) {
        let selection = eval::select_sigma(ds, cfg, grid)?;
        kernel = Kernel::rbf(selection.sigma)?;
    }
    let (data, scaling) = scaled(ds, cfg)?;
    let kd = KernelDescriptor::new(kernel, data.features().clone())?;
    let coords = to_kernel_coordinates(data.features(), &kd)?.coords;
    let kdata = data.with_features(coords)?;
    let rank = cfg.rank_for(ds.dim(), kdata.dim())?;
    let (prototypes, summary) = fit(&kdata, cfg, rank)?;
    Ok(Model {
        prototypes,
        mode: Mode::Kernel,
        kernel: Some(kd),
        scaling,
        beta: cfg.beta,
        input_dim: ds.dim(),
        class_names: ds.class_names().to_vec(),
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, generate_synthetic_with, SyntheticKind, SyntheticParams};

    fn circles() -> Dataset {
        generate_synthetic(SyntheticKind::ConcentricCircles, 60, 0.05, 1).unwrap()
    }

    #[test]
    fn initialize_samples_per_class() {
        let ds = generate_synthetic(SyntheticKind::Helix, 90, 0.05, 2).unwrap();
        let cfg = TrainConfig { prototypes_per_class: 5, ..Default::default() };
        let ps = initialize(&ds, &cfg).unwrap();
        assert_eq!(ps.len(), 25);
        for c in 1..=5 {
            assert_eq!(ps.labels().iter().filter(|&&l| l == c).count(), 5);
        }
        // Every prototype is a distinct data point of its class.
        for s in 0..ps.len() {
            let hit = (0..ds.len()).find(|&i| ds.point(i) == ps.position(s)).unwrap();
            assert_eq!(ds.label(hit), ps.labels()[s]);
        }
        assert_eq!(ps, initialize(&ds, &cfg).unwrap());
    }

    #[test]
    fn noiseless_full_rank_init_is_euclidean() {
        let ds = circles();
        let cfg = TrainConfig { init_noise: 0.0, ..Default::default() };
        let ps = initialize(&ds, &cfg).unwrap();
        let x = ds.point(3);
        for s in 0..ps.len() {
            let e: f64 = x.iter().zip(ps.position(s)).map(|(a, b)| (a - b).powi(2)).sum();
            assert_eq!(ps.squared_distance(x, s).unwrap(), e);
        }
    }

    #[test]
    fn initialize_rejects_small_class() {
        let ds = circles();
        let cfg = TrainConfig { prototypes_per_class: 31, ..Default::default() };
        assert!(matches!(initialize(&ds, &cfg), Err(Error::ClassTooSmall { .. })));
    }

    #[test]
    fn visit_touches_exactly_two_prototypes() {
        let ds = circles();
        let cfg = TrainConfig::default();
        let ps = initialize(&ds, &cfg).unwrap();
        let mut trainer = Trainer::new(&ds, ps, &cfg).unwrap();
        for i in 0..ds.len() {
            let before = trainer.prototypes().clone();
            let v = trainer.visit(i).unwrap();
            let after = trainer.prototypes();
            for s in 0..before.len() {
                if s == v.same_index || s == v.diff_index {
                    continue;
                }
                assert_eq!(before.position(s), after.position(s));
                assert_eq!(before.metrics()[s], after.metrics()[s]);
            }
            assert_eq!(before.labels(), after.labels());
        }
    }

    #[test]
    fn infinite_epsilon_runs_one_epoch() {
        let ds = circles();
        let cfg = TrainConfig { epsilon_converge: f64::INFINITY, ..Default::default() };
        let model = train(&ds, &cfg).unwrap();
        assert_eq!(model.summary.epochs, 1);
        assert!(model.summary.converged);
    }

    #[test]
    fn training_is_deterministic_and_keeps_labels() {
        let ds = circles();
        let cfg = TrainConfig { max_epochs: 20, seed: 9, ..Default::default() };
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &cfg).unwrap();
        assert_eq!(a, b);
        let init_labels = initialize(&standardize(&ds).unwrap().0, &cfg).unwrap().labels().to_vec();
        assert_eq!(a.prototypes.labels(), init_labels.as_slice());
    }

    #[test]
    fn metrics_stay_psd() {
        let ds = circles();
        let model = train(&ds, &TrainConfig { max_epochs: 30, ..Default::default() }).unwrap();
        for m in model.prototypes.metrics() {
            assert!(m.implied_metric().symmetric_eigenvalues().min() >= -1e-10);
        }
    }

    #[test]
    fn separated_gaussians_train_to_low_objective() {
        let params = SyntheticParams { gaussian_centers: [vec![-5.0, 0.0], vec![5.0, 0.0]], ..Default::default() };
        let ds = generate_synthetic_with(SyntheticKind::TwoGaussians, 100, 1.0, 3, &params).unwrap();
        let cfg = TrainConfig { prototypes_per_class: 1, ..Default::default() };
        let model = train(&ds, &cfg).unwrap();
        let s = &model.summary;
        assert!(s.final_objective < 0.01, "{s:?}");
        assert!(s.final_objective < s.initial_objective);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { rank: Some(0), ..Default::default() }.validate().is_err());
        assert!(TrainConfig { beta: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { mode: Mode::Kernel, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { rho: 1.0, ..Default::default() }.validate().is_err());
        let ds = circles();
        assert!(train(&ds, &TrainConfig { rank: Some(3), ..Default::default() }).is_err());
    }

    #[test]
    fn tiny_rbf_width_stays_finite() {
        let ds = circles();
        let cfg = TrainConfig {
            mode: Mode::Kernel,
            kernel: Some(Kernel::Rbf { sigma: 2f64.powi(-15) }),
            max_epochs: 5,
            ..Default::default()
        };
        let model = train(&ds, &cfg).unwrap();
        assert!(model.prototypes.positions().iter().all(|v| v.is_finite()));
        assert!(model.summary.final_objective.is_finite());
    }

    #[test]
    fn sigma_grid_has_nineteen_powers_of_two() {
        let grid = default_sigma_grid();
        assert_eq!(grid.len(), 19);
        assert_eq!(grid[0], 2f64.powi(-15));
        assert_eq!(grid[18], 8.0);
    }
}

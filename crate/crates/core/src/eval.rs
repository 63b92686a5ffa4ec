//! Prototype nearest-neighbor prediction and the cross-validation harness.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_folds, Dataset, FoldPlan, Label};
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::trainer::{train, Model, TrainConfig};

/// Label of the nearest prototype, each prototype measuring with its own
/// metric. Ties go to the lowest prototype index.
pub fn predict(x: &[f64], model: &Model) -> Result<Label> {
    let nearest = model.nearest(x)?;
    Ok(model.prototypes.labels()[nearest.index])
}

pub fn predict_all(ds: &Dataset, model: &Model) -> Result<Vec<Label>> {
    let points = model.transform_all(ds.features())?;
    let d = points.nrows();
    points
        .as_slice()
        .par_chunks_exact(d)
        .map(|x| model.prototypes.nearest(x).map(|n| model.prototypes.labels()[n.index]))
        .collect()
}

/// Fraction of points labeled correctly by the prototype-NN rule.
///
/// Prototypes rather than training points serve as references, so this is
/// the training accuracy of the prototype classifier.
pub fn loo_accuracy(ds: &Dataset, model: &Model) -> Result<f64> {
    let predicted = predict_all(ds, model)?;
    let hits = predicted.iter().zip(ds.labels()).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / ds.len() as f64)
}

/// Every point projected by the factor of its predicted nearest prototype,
/// relative to that prototype (`rank x N`), plus the prototype indices.
pub fn projected_view(ds: &Dataset, model: &Model) -> Result<(nalgebra::DMatrix<f64>, Vec<usize>)> {
    let points = model.transform_all(ds.features())?;
    let d = points.nrows();
    let rows: Vec<(nalgebra::DVector<f64>, usize)> = points
        .as_slice()
        .par_chunks_exact(d)
        .map(|x| {
            let s = model.prototypes.nearest(x)?.index;
            Ok((model.prototypes.project(x, s)?, s))
        })
        .collect::<Result<_>>()?;
    let mut out = nalgebra::DMatrix::zeros(model.rank(), ds.len());
    let mut index = Vec::with_capacity(ds.len());
    for (i, (z, s)) in rows.into_iter().enumerate() {
        out.set_column(i, &z);
        index.push(s);
    }
    Ok((out, index))
}

/// Leave-one-out 1-NN accuracy measured in the projected view.
pub fn projected_loo_accuracy(ds: &Dataset, model: &Model) -> Result<f64> {
    let (z, _) = projected_view(ds, model)?;
    Ok(nn_loo_accuracy(&z, ds.labels()))
}

/// Accuracy of the plain 1-NN rule over all other points of `ds` under the
/// Euclidean distance (true leave-one-out).
pub fn nn_loo_accuracy(points: &nalgebra::DMatrix<f64>, labels: &[Label]) -> f64 {
    let d = points.nrows();
    let cols: Vec<&[f64]> = points.as_slice().chunks_exact(d).collect();
    let hits = (0..cols.len())
        .into_par_iter()
        .filter(|&i| {
            let mut best = (f64::INFINITY, 0);
            for (j, c) in cols.iter().enumerate() {
                if j == i {
                    continue;
                }
                let dist: f64 = cols[i].iter().zip(*c).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist < best.0 {
                    best = (dist, j);
                }
            }
            labels[best.1] == labels[i]
        })
        .count();
    hits as f64 / cols.len() as f64
}

/// How the report was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfigEcho {
    pub protocol: String,
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_fold_errors: Vec<f64>,
    pub mean_error: f64,
    /// Population standard deviation over `per_fold_errors`.
    pub std_error: f64,
    /// `confusion[true - 1][predicted - 1]`, summed over all folds.
    pub per_class_confusion: Vec<Vec<usize>>,
    pub class_names: Vec<String>,
    pub config: EvalConfigEcho,
}

/// Test-split predictions of one fold.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub truth: Vec<Label>,
    pub predicted: Vec<Label>,
}

impl FoldOutcome {
    pub fn error(&self) -> f64 {
        let wrong = self.truth.iter().zip(&self.predicted).filter(|(a, b)| a != b).count();
        wrong as f64 / self.truth.len() as f64
    }
}

pub fn summarize(outcomes: &[FoldOutcome], class_names: Vec<String>, config: EvalConfigEcho) -> EvalReport {
    let k = class_names.len();
    let per_fold_errors: Vec<f64> = outcomes.iter().map(FoldOutcome::error).collect();
    let n = per_fold_errors.len() as f64;
    let mean_error = per_fold_errors.iter().sum::<f64>() / n;
    let std_error = (per_fold_errors.iter().map(|e| (e - mean_error).powi(2)).sum::<f64>() / n).sqrt();
    let mut confusion = vec![vec![0; k]; k];
    for o in outcomes {
        for (&t, &p) in o.truth.iter().zip(&o.predicted) {
            confusion[t - 1][p - 1] += 1;
        }
    }
    EvalReport { per_fold_errors, mean_error, std_error, per_class_confusion: confusion, class_names, config }
}

/// Runs `fit_predict(train, test)` on every fold of every plan, in parallel,
/// returning outcomes ordered by `(repeat, fold)`.
pub fn run_folds<F>(ds: &Dataset, plans: &[FoldPlan], fit_predict: F) -> Result<Vec<FoldOutcome>>
where
    F: Fn(&Dataset, &Dataset) -> Result<Vec<Label>> + Sync,
{
    let jobs: Vec<(usize, usize)> =
        plans.iter().enumerate().flat_map(|(r, p)| (0..p.fold_count).map(move |f| (r, f))).collect();
    jobs.into_par_iter()
        .map(|(r, f)| {
            let (train_idx, test_idx) = plans[r].split(f);
            let train_ds = ds.select(&train_idx)?;
            let test_ds = ds.select(&test_idx)?;
            let predicted = fit_predict(&train_ds, &test_ds)?;
            Ok(FoldOutcome { truth: test_ds.labels().to_vec(), predicted })
        })
        .collect()
}

/// Stratified `folds`-fold cross-validation repeated `repeats` times.
///
/// Every fold trains from scratch on its training split, so standardization
/// statistics and the rbf width are fitted without seeing the test split.
pub fn cross_validate(
    ds: &Dataset,
    cfg: &TrainConfig,
    folds: usize,
    repeats: usize,
    seed: u64,
) -> Result<EvalReport> {
    cfg.validate()?;
    let plans = make_folds(ds, folds, repeats, seed)?;
    let outcomes = run_folds(ds, &plans, |train_ds, test_ds| {
        let model = train(train_ds, cfg)?;
        predict_all(test_ds, &model)
    })?;
    let echo = EvalConfigEcho {
        protocol: "cross_validation".into(),
        folds,
        repeats,
        seed,
        train: Some(cfg.clone()),
    };
    Ok(summarize(&outcomes, ds.class_names().to_vec(), echo))
}

/// Error of a trained model on a labeled dataset, as a one-fold report.
pub fn holdout(ds: &Dataset, model: &Model) -> Result<EvalReport> {
    let aligned = ds.align_classes(&model.class_names)?;
    let predicted = predict_all(&aligned, model)?;
    let outcome = FoldOutcome { truth: aligned.labels().to_vec(), predicted };
    let echo = EvalConfigEcho { protocol: "holdout".into(), folds: 1, repeats: 1, seed: 0, train: None };
    Ok(summarize(&[outcome], model.class_names.clone(), echo))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaSelection {
    pub sigma: f64,
    /// Mean inner cross-validation error for every grid value, in grid order.
    pub errors: Vec<f64>,
}

/// Picks the rbf width with the lowest mean error under internal stratified
/// cross-validation on `ds`. Ties go to the earlier grid value. The fold
/// count is reduced to the smallest class size when necessary.
pub fn select_sigma(ds: &Dataset, cfg: &TrainConfig, grid: &[f64]) -> Result<SigmaSelection> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty sigma grid".into()));
    }
    let smallest = ds.class_sizes().into_iter().min().unwrap_or(0);
    let folds = cfg.sigma_folds.min(smallest);
    if folds < 2 {
        return Err(Error::ClassTooSmall { label: 0, count: smallest, required: 2 });
    }
    let plans = make_folds(ds, folds, 1, cfg.seed)?;
    let errors = grid
        .par_iter()
        .map(|&sigma| {
            let inner = TrainConfig { kernel: Some(Kernel::rbf(sigma)?), sigma_grid: None, ..cfg.clone() };
            let outcomes = run_folds(ds, &plans, |train_ds, test_ds| {
                let model = train(train_ds, &inner)?;
                predict_all(test_ds, &model)
            })?;
            Ok(outcomes.iter().map(FoldOutcome::error).sum::<f64>() / outcomes.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (i, e) in errors.iter().enumerate() {
        if *e < errors[best] {
            best = i;
        }
    }
    Ok(SigmaSelection { sigma: grid[best], errors })
}

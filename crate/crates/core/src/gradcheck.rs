//! Central-difference verification of the analytic sample gradients.
//!
//! The nearest same/different-class prototypes are frozen while
//! differencing, since the objective is only piecewise smooth across
//! changes of those assignments.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metric::{FactorMetric, PrototypeSet};
use crate::objective::{gradients_at, ratio, sigmoid, LossConfig, RatioRecord, SampleGradients};

pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckConfig {
    pub dim: usize,
    pub rank: usize,
    pub prototypes: usize,
    pub beta: f64,
    pub trials: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Scales one analytic block by 1.1 before comparing (negative control).
    pub corrupt: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            dim: 5,
            rank: 3,
            prototypes: 4,
            beta: 10.0,
            trials: 200,
            seed: 0,
            step: 1e-5,
            tolerance: DEFAULT_TOLERANCE,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub trials: usize,
    /// Largest relative error per block: factor same, factor diff,
    /// position same, position diff.
    pub block_max_rel_error: [f64; 4],
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// One random instance whose ratio lies in the active part of the sigmoid.
pub struct Instance {
    pub prototypes: PrototypeSet,
    pub x: Vec<f64>,
    pub label: usize,
}

pub fn random_instance(rng: &mut ChaCha8Rng, cfg: &GradCheckConfig, loss: &LossConfig) -> Result<Instance> {
    let (d, p, s) = (cfg.dim, cfg.rank, cfg.prototypes);
    if d == 0 || p == 0 || p > d || s < 2 {
        return Err(Error::InvalidConfig(format!("need 1 <= rank <= dim and >= 2 prototypes (d={d}, p={p}, S={s})")));
    }
    let labels: Vec<usize> = (0..s).map(|i| i % 2 + 1).collect();
    loop {
        let positions = DMatrix::from_fn(d, s, |_, _| rng.sample(StandardNormal));
        let metrics = (0..s)
            .map(|_| FactorMetric::new(DMatrix::from_fn(d, p, |_, _| rng.sample(StandardNormal))))
            .collect::<Result<Vec<_>>>()?;
        let ps = PrototypeSet::new(positions, labels.clone(), metrics)?;
        let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let rec = ratio(&x, 1, &ps, loss)?;
        if rec.d_diff > 1e-3 && (0.5..=1.5).contains(&rec.ratio) {
            return Ok(Instance { prototypes: ps, x, label: 1 });
        }
    }
}

fn frozen_loss(x: &[f64], rec: &RatioRecord, ps: &PrototypeSet, loss: &LossConfig) -> f64 {
    let r = RatioRecord::frozen(x, rec.same_index, rec.diff_index, ps, loss).expect("valid indices");
    sigmoid(r.ratio, loss.beta)
}

enum Block {
    Factor(usize),
    Position(usize),
}

fn central_difference(
    x: &[f64],
    rec: &RatioRecord,
    ps: &PrototypeSet,
    loss: &LossConfig,
    block: Block,
    h: f64,
) -> Vec<f64> {
    let mut work = ps.clone();
    let len = match block {
        Block::Factor(s) => ps.metrics()[s].factor().len(),
        Block::Position(_) => ps.dim(),
    };
    (0..len)
        .map(|k| {
            let mut eval_at = |delta: f64| {
                let entry = match block {
                    Block::Factor(s) => &mut work.metric_mut(s).factor_mut().as_mut_slice()[k],
                    Block::Position(s) => &mut work.position_mut(s)[k],
                };
                let original = *entry;
                *entry = original + delta;
                let v = frozen_loss(x, rec, &work, loss);
                let entry = match block {
                    Block::Factor(s) => &mut work.metric_mut(s).factor_mut().as_mut_slice()[k],
                    Block::Position(s) => &mut work.position_mut(s)[k],
                };
                *entry = original;
                v
            };
            (eval_at(h) - eval_at(-h)) / (2.0 * h)
        })
        .collect()
}

fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let scale = analytic.iter().chain(numeric).map(|v| v.abs()).fold(1e-12, f64::max);
    diff / scale
}

/// Relative errors of the four analytic blocks against central differences.
pub fn compare(inst: &Instance, loss: &LossConfig, h: f64, corrupt: bool) -> Result<[f64; 4]> {
    let rec = ratio(&inst.x, inst.label, &inst.prototypes, loss)?;
    let mut g: SampleGradients = gradients_at(&inst.x, &rec, &inst.prototypes, loss);
    if corrupt {
        g.grad_proto_diff *= 1.1;
    }
    let ps = &inst.prototypes;
    let x = &inst.x;
    Ok([
        rel_error(g.grad_factor_same.as_slice(), &central_difference(x, &rec, ps, loss, Block::Factor(rec.same_index), h)),
        rel_error(g.grad_factor_diff.as_slice(), &central_difference(x, &rec, ps, loss, Block::Factor(rec.diff_index), h)),
        rel_error(g.grad_proto_same.as_slice(), &central_difference(x, &rec, ps, loss, Block::Position(rec.same_index), h)),
        rel_error(g.grad_proto_diff.as_slice(), &central_difference(x, &rec, ps, loss, Block::Position(rec.diff_index), h)),
    ])
}

pub fn run(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let loss = LossConfig::new(cfg.beta)?;
    if cfg.step.is_nan() || cfg.step <= 0.0 {
        return Err(Error::InvalidConfig(format!("step {}", cfg.step)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut block_max = [0.0f64; 4];
    for _ in 0..cfg.trials {
        let inst = random_instance(&mut rng, cfg, &loss)?;
        let errs = compare(&inst, &loss, cfg.step, cfg.corrupt)?;
        for (m, e) in block_max.iter_mut().zip(errs) {
            *m = m.max(e);
        }
    }
    let max_rel_error = block_max.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        trials: cfg.trials,
        block_max_rel_error: block_max,
        max_rel_error,
        tolerance: cfg.tolerance,
        passed: max_rel_error <= cfg.tolerance,
    })
}

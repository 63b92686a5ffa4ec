//! C ABI over the `lmdl` crate.
//!
//! Datasets and models are opaque handles created and freed by this
//! library. Every fallible call returns an [`LmdlStatus`]; on failure the
//! message is available from [`lmdl_last_error`] on the same thread.
//! Labels cross the boundary as 1-based class indices.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lmdl::data::{load_csv, ColumnRef, Dataset};
use lmdl::eval::{cross_validate, predict};
use lmdl::gradcheck::{self, GradCheckConfig};
use lmdl::kernel::Kernel;
use lmdl::model_file;
use lmdl::trainer::{default_sigma_grid, train, Mode, Model, TrainConfig};
use lmdl::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmdlStatus {
    Ok = 0,
    InvalidInput = 1,
    TrainingAborted = 2,
    GradcheckFailed = 3,
    NullPointer = 4,
    Io = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmdlMode {
    Linear = 0,
    Kernel = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmdlKernelKind {
    Linear = 0,
    Rbf = 1,
}

/// Training options. Obtain defaults from [`lmdl_train_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmdlTrainConfig {
    pub prototypes_per_class: usize,
    /// 0 selects the input dimension.
    pub rank: usize,
    pub beta: f64,
    pub epsilon_converge: f64,
    pub max_epochs: usize,
    pub rho: f64,
    pub eps_ada: f64,
    pub seed: u64,
    pub mode: LmdlMode,
    /// Kernel mode only.
    pub kernel: LmdlKernelKind,
    /// rbf width, used unless `select_sigma` is set.
    pub sigma: f64,
    /// Choose sigma from 2^-15 .. 2^3 by internal cross-validation.
    pub select_sigma: bool,
    pub sigma_folds: usize,
    pub standardize: bool,
    pub init_noise: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmdlTrainSummary {
    pub initial_objective: f64,
    pub final_objective: f64,
    pub epochs: usize,
    pub converged: bool,
}

/// Opaque dataset handle.
pub struct LmdlDataset(Dataset);

/// Opaque model handle.
pub struct LmdlModel(Model);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> LmdlStatus {
    match e {
        Error::TrainingAborted { .. } | Error::NonFiniteGradient => LmdlStatus::TrainingAborted,
        Error::Io { .. } => LmdlStatus::Io,
        _ => LmdlStatus::InvalidInput,
    }
}

struct Failure(LmdlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(LmdlStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LmdlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LmdlStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            LmdlStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(LmdlStatus::InvalidInput, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn to_config(c: &LmdlTrainConfig) -> Result<TrainConfig, Failure> {
    let mode = match c.mode {
        LmdlMode::Linear => Mode::Linear,
        LmdlMode::Kernel => Mode::Kernel,
    };
    let kernel = match (mode, c.kernel) {
        (Mode::Linear, _) => None,
        (Mode::Kernel, LmdlKernelKind::Linear) => Some(Kernel::Linear),
        (Mode::Kernel, LmdlKernelKind::Rbf) => Some(Kernel::rbf(c.sigma)?),
    };
    let cfg = TrainConfig {
        prototypes_per_class: c.prototypes_per_class,
        rank: (c.rank > 0).then_some(c.rank),
        beta: c.beta,
        epsilon_converge: c.epsilon_converge,
        max_epochs: c.max_epochs,
        rho: c.rho,
        eps_ada: c.eps_ada,
        seed: c.seed,
        mode,
        kernel,
        sigma_grid: (c.select_sigma && matches!(kernel, Some(Kernel::Rbf { .. }))).then(default_sigma_grid),
        sigma_folds: c.sigma_folds,
        standardize: c.standardize,
        init_noise: c.init_noise,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Library defaults: linear mode, 5 prototypes per class, beta 10.
#[no_mangle]
pub extern "C" fn lmdl_train_config_default() -> LmdlTrainConfig {
    let d = TrainConfig::default();
    LmdlTrainConfig {
        prototypes_per_class: d.prototypes_per_class,
        rank: 0,
        beta: d.beta,
        epsilon_converge: d.epsilon_converge,
        max_epochs: d.max_epochs,
        rho: d.rho,
        eps_ada: d.eps_ada,
        seed: d.seed,
        mode: LmdlMode::Linear,
        kernel: LmdlKernelKind::Rbf,
        sigma: 1.0,
        select_sigma: false,
        sigma_folds: d.sigma_folds,
        standardize: d.standardize,
        init_noise: d.init_noise,
    }
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lmdl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a CSV file. `label` is a column name or zero-based index.
#[no_mangle]
pub unsafe extern "C" fn lmdl_dataset_load_csv(
    path: *const c_char,
    label: *const c_char,
    out: *mut *mut LmdlDataset,
) -> LmdlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let label: ColumnRef = str_arg(label, "label")?.parse().unwrap_or_else(|e| match e {});
        let ds = load_csv(path, &label, &[])?;
        *out = Box::into_raw(Box::new(LmdlDataset(ds)));
        Ok(())
    })
}

/// Builds a dataset from `n` points of dimension `dim`, stored point after
/// point in `features`, with labels in `1..=K`.
#[no_mangle]
pub unsafe extern "C" fn lmdl_dataset_from_arrays(
    features: *const f64,
    labels: *const usize,
    n: usize,
    dim: usize,
    out: *mut *mut LmdlDataset,
) -> LmdlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if features.is_null() {
            return Err(null("features"));
        }
        if labels.is_null() {
            return Err(null("labels"));
        }
        let len = n.checked_mul(dim).ok_or_else(|| Failure(LmdlStatus::InvalidInput, "n * dim overflows".into()))?;
        let x = std::slice::from_raw_parts(features, len);
        let y = std::slice::from_raw_parts(labels, n).to_vec();
        let ds = Dataset::new(lmdl::nalgebra::DMatrix::from_column_slice(dim, n, x), y)?;
        *out = Box::into_raw(Box::new(LmdlDataset(ds)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lmdl_dataset_free(ds: *mut LmdlDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of points; 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn lmdl_dataset_len(ds: *const LmdlDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// Feature dimension; 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn lmdl_dataset_dim(ds: *const LmdlDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.dim())
}

#[no_mangle]
pub unsafe extern "C" fn lmdl_dataset_class_count(ds: *const LmdlDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.class_count())
}

#[no_mangle]
pub unsafe extern "C" fn lmdl_train(
    ds: *const LmdlDataset,
    config: *const LmdlTrainConfig,
    out: *mut *mut LmdlModel,
) -> LmdlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let ds = ref_arg(ds, "dataset")?;
        let cfg = to_config(ref_arg(config, "config")?)?;
        let model = train(&ds.0, &cfg)?;
        *out = Box::into_raw(Box::new(LmdlModel(model)));
        Ok(())
    })
}

/// Stratified `folds`-fold cross-validation repeated `repeats` times.
#[no_mangle]
pub unsafe extern "C" fn lmdl_cross_validate(
    ds: *const LmdlDataset,
    config: *const LmdlTrainConfig,
    folds: usize,
    repeats: usize,
    seed: u64,
    mean_error: *mut f64,
    std_error: *mut f64,
) -> LmdlStatus {
    guard(|| {
        let ds = ref_arg(ds, "dataset")?;
        let cfg = to_config(ref_arg(config, "config")?)?;
        let mean_out = out_arg(mean_error, "mean_error")?;
        let report = cross_validate(&ds.0, &cfg, folds, repeats, seed)?;
        *mean_out = report.mean_error;
        if let Some(s) = std_error.as_mut() {
            *s = report.std_error;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lmdl_model_save(model: *const LmdlModel, path: *const c_char) -> LmdlStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        model_file::save(&model.0, str_arg(path, "path")?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lmdl_model_load(path: *const c_char, out: *mut *mut LmdlModel) -> LmdlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model = model_file::load(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(LmdlModel(model)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lmdl_model_free(model: *mut LmdlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Predicted 1-based class of one point with `len` features.
#[no_mangle]
pub unsafe extern "C" fn lmdl_model_predict(
    model: *const LmdlModel,
    x: *const f64,
    len: usize,
    label: *mut usize,
) -> LmdlStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let label = out_arg(label, "label")?;
        if x.is_null() {
            return Err(null("x"));
        }
        *label = predict(std::slice::from_raw_parts(x, len), &model.0)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lmdl_model_summary(model: *const LmdlModel, out: *mut LmdlTrainSummary) -> LmdlStatus {
    guard(|| {
        let s = &ref_arg(model, "model")?.0.summary;
        *out_arg(out, "out")? = LmdlTrainSummary {
            initial_objective: s.initial_objective,
            final_objective: s.final_objective,
            epochs: s.epochs,
            converged: s.converged,
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lmdl_model_input_dim(model: *const LmdlModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.input_dim)
}

#[no_mangle]
pub unsafe extern "C" fn lmdl_model_rank(model: *const LmdlModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.rank())
}

#[no_mangle]
pub unsafe extern "C" fn lmdl_model_prototype_count(model: *const LmdlModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.prototypes.len())
}

#[no_mangle]
pub unsafe extern "C" fn lmdl_model_class_count(model: *const LmdlModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.class_count())
}

/// Gradient check with the default instance shape (d=5, p=3, S=4, beta=10).
/// Returns `GradcheckFailed` when the error exceeds 1e-4.
#[no_mangle]
pub unsafe extern "C" fn lmdl_gradcheck(trials: usize, seed: u64, max_rel_error: *mut f64) -> LmdlStatus {
    let mut passed = false;
    let status = guard(|| {
        let out = out_arg(max_rel_error, "max_rel_error")?;
        let report = gradcheck::run(&GradCheckConfig { trials, seed, ..Default::default() })?;
        *out = report.max_rel_error;
        passed = report.passed;
        if !passed {
            set_error(format!("max relative error {:.3e}", report.max_rel_error));
        }
        Ok(())
    });
    if status == LmdlStatus::Ok && !passed {
        LmdlStatus::GradcheckFailed
    } else {
        status
    }
}

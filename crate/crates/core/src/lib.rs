//! Local Mahalanobis distance learning for prototype nearest-neighbor
//! classification.
//!
//! Every prototype carries its own low-rank metric `W_s = L_s L_s^T`.
//! Positions and factors are learned jointly by online Adadelta descent on
//! a sigmoid-smoothed estimate of the nearest-prototype error rate. A
//! kernelized variant runs the same procedure on kernel coordinates.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod kernel;
pub mod metric;
pub mod model_file;
pub mod objective;
pub mod trainer;

pub use data::{load_csv, ColumnRef, Dataset, Label, ScalingRecord, SyntheticKind};
pub use error::{Error, Result};
pub use eval::{cross_validate, loo_accuracy, predict, EvalReport};
pub use kernel::{Kernel, KernelDescriptor};
pub use metric::{FactorMetric, PrototypeSet};
pub use objective::LossConfig;
pub use trainer::{train, Mode, Model, TrainConfig};

pub use nalgebra;

//! JSON persistence of trained models.
//!
//! Matrices are stored row-major with explicit shapes. Numbers are written
//! in shortest round-trip decimal form and parsed exactly, so every matrix
//! survives a save/load cycle bit for bit.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::ScalingRecord;
use crate::error::{Error, Result};
use crate::kernel::{Kernel, KernelDescriptor};
use crate::metric::{FactorMetric, PrototypeSet};
use crate::trainer::{Mode, Model, TrainSummary};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub data: Vec<f64>,
}

impl MatrixRecord {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let data = m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::ModelFormat(format!(
                "matrix {}x{} holds {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRecord {
    #[serde(flatten)]
    pub kernel: Kernel,
    pub reference_points: MatrixRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub mode: Mode,
    pub beta: f64,
    pub rank: usize,
    pub input_dim: usize,
    pub class_names: Vec<String>,
    /// `d' x S`, columns are prototypes.
    pub prototype_positions: MatrixRecord,
    pub prototype_labels: Vec<usize>,
    pub factors: Vec<MatrixRecord>,
    pub kernel: Option<KernelRecord>,
    pub scaling: Option<ScalingRecord>,
    pub summary: TrainSummary,
}

impl ModelFile {
    pub fn from_model(model: &Model) -> Self {
        let ps = &model.prototypes;
        Self {
            format_version: FORMAT_VERSION,
            mode: model.mode,
            beta: model.beta,
            rank: ps.rank(),
            input_dim: model.input_dim,
            class_names: model.class_names.clone(),
            prototype_positions: MatrixRecord::from_matrix(ps.positions()),
            prototype_labels: ps.labels().to_vec(),
            factors: ps.metrics().iter().map(|m| MatrixRecord::from_matrix(m.factor())).collect(),
            kernel: model.kernel.as_ref().map(|kd| KernelRecord {
                kernel: kd.kernel,
                reference_points: MatrixRecord::from_matrix(kd.reference_points()),
            }),
            scaling: model.scaling.clone(),
            summary: model.summary.clone(),
        }
    }

    pub fn into_model(self) -> Result<Model> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion { found: self.format_version, supported: FORMAT_VERSION });
        }
        let metrics = self
            .factors
            .iter()
            .map(|f| FactorMetric::new(f.to_matrix()?))
            .collect::<Result<Vec<_>>>()?;
        let prototypes = PrototypeSet::new(self.prototype_positions.to_matrix()?, self.prototype_labels, metrics)?;
        if prototypes.rank() != self.rank {
            return Err(Error::ModelFormat(format!("rank {} but factors have {}", self.rank, prototypes.rank())));
        }
        if !prototypes.covers_classes(self.class_names.len()) || prototypes.labels().iter().any(|&l| l > self.class_names.len()) {
            return Err(Error::ModelFormat("prototype labels do not match class names".into()));
        }
        let kernel = match (self.mode, self.kernel) {
            (Mode::Kernel, Some(k)) => Some(KernelDescriptor::new(k.kernel, k.reference_points.to_matrix()?)?),
            (Mode::Kernel, None) => return Err(Error::ModelFormat("kernel mode without reference points".into())),
            (Mode::Linear, Some(_)) => return Err(Error::ModelFormat("linear mode with a kernel".into())),
            (Mode::Linear, None) => None,
        };
        let expected_dim = match &kernel {
            Some(kd) => {
                if kd.input_dim() != self.input_dim {
                    return Err(Error::ModelFormat("reference points do not match input_dim".into()));
                }
                kd.reference_count()
            }
            None => self.input_dim,
        };
        if prototypes.dim() != expected_dim {
            return Err(Error::ModelFormat(format!("prototypes have dimension {}, expected {expected_dim}", prototypes.dim())));
        }
        if let Some(rec) = &self.scaling {
            if rec.mean.len() != self.input_dim || rec.std.len() != self.input_dim {
                return Err(Error::ModelFormat("scaling record does not match input_dim".into()));
            }
        }
        Ok(Model {
            prototypes,
            mode: self.mode,
            kernel,
            scaling: self.scaling,
            beta: self.beta,
            input_dim: self.input_dim,
            class_names: self.class_names,
            summary: self.summary,
        })
    }
}

pub fn to_json(model: &Model) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ModelFile::from_model(model))?)
}

pub fn from_json(text: &str) -> Result<Model> {
    // Check the version before the full schema so old files fail clearly.
    #[derive(Deserialize)]
    struct Version {
        format_version: u32,
    }
    let v: Version = serde_json::from_str(text)?;
    if v.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion { found: v.format_version, supported: FORMAT_VERSION });
    }
    serde_json::from_str::<ModelFile>(text)?.into_model()
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_json(model)?).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    from_json(&text)
}

//! Baseline classifiers and their evaluation metrics.
//!
//! Both models score on the log-odds scale: `p = sigmoid(raw_score)` and a
//! positive raw score means higher default risk.

pub mod gbdt;
pub mod logistic;
pub mod metrics;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;

pub use gbdt::{fit_gbdt, train_gbdt, GbdtModel, GbdtParams, Node, SearchSpace, Split, Tree};
pub use logistic::{
    fit_logistic, train_logistic, LogisticModel, NewtonConfig, Selection, Standardization, DEFAULT_LAMBDA_GRID,
};
pub use metrics::{confusion_cells, ks_statistic, macro_f1, pr_auc, ConfusionCell, EvalMetrics};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("expected {expected} values, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("labels contain a single class")]
    SingleClass,
    #[error("optimizer stopped after {iterations} iterations with gradient norm {gradient_norm:e}")]
    Convergence { gradient_norm: f64, iterations: usize },
    #[error("invalid forest: {0}")]
    InvalidForest(String),
    #[error("degenerate search space: {0}")]
    DegenerateSearchSpace(String),
    #[error("every feature is constant on the training rows")]
    AllConstantFeatures,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("model file format {found} is not supported (expected {expected})")]
    Format { expected: u32, found: u32 },
}

/// Logistic function, clamped so the result stays strictly inside (0, 1).
pub fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probability: f64,
    /// Linear predictor or forest margin, in log-odds.
    pub raw_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Logistic(LogisticModel),
    Gbdt(GbdtModel),
}

impl Model {
    pub fn tag(&self) -> &'static str {
        match self {
            Model::Logistic(_) => "logistic",
            Model::Gbdt(_) => "gbdt",
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Model::Logistic(m) => m.n_features(),
            Model::Gbdt(m) => m.n_features,
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction, ModelError> {
        match self {
            Model::Logistic(m) => m.predict(x),
            Model::Gbdt(m) => m.predict(x),
        }
    }

    pub fn predict_all(&self, ds: &crate::data::EncodedDataset) -> Result<Vec<Prediction>, ModelError> {
        ds.rows().map(|r| self.predict(r)).collect()
    }
}

/// On-disk model: the model plus the encoded column names it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub feature_names: Vec<String>,
    pub model: Model,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<Selection>,
}

impl ModelFile {
    pub fn new(model: Model, feature_names: Vec<String>, selection: Option<Selection>) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            feature_names,
            model,
            selection,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Format {
                expected: MODEL_FORMAT_VERSION,
                found: file.format_version,
            });
        }
        if file.feature_names.len() != file.model.n_features() {
            return Err(ModelError::DimensionMismatch {
                expected: file.model.n_features(),
                found: file.feature_names.len(),
            });
        }
        if let Model::Gbdt(g) = &file.model {
            g.validate()?;
        }
        Ok(file)
    }

    /// Fails unless the dataset has exactly the columns the model was trained on.
    pub fn check_columns(&self, ds: &crate::data::EncodedDataset) -> Result<(), ModelError> {
        if ds.encoded_names() != self.feature_names.as_slice() {
            return Err(ModelError::InvalidInput(
                "dataset columns differ from the model's training columns".into(),
            ));
        }
        Ok(())
    }
}

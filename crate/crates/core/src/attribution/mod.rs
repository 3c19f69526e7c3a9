//! Per-instance reference attributions on the log-odds scale.
//!
//! Every attribution satisfies `baseline + sum(values) == model_output`:
//! exactly for the linear model, to rounding for the forest. Grouping sums
//! the one-hot columns of each original feature, and ranking orders the
//! groups by absolute contribution with ties broken by name.

mod shapley;
mod treeshap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{EncodedDataset, FeatureGroup};
use crate::models::{LogisticModel, Model};

pub use shapley::{brute_force_shapley, coalition_value, MAX_BRUTE_FORCE_FEATURES};
pub use treeshap::tree_shap;

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("expected {expected} values, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid forest: {0}")]
    InvalidForest(String),
    #[error("{found} features exceed the brute-force limit of {max}")]
    TooManyFeatures { found: usize, max: usize },
    #[error("group index is not a partition: {0}")]
    NotAPartition(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionVector {
    /// One signed contribution per encoded column.
    pub values: Vec<f64>,
    pub baseline: f64,
    /// The raw score the decomposition reproduces.
    pub model_output: f64,
}

impl AttributionVector {
    /// `baseline + sum(values)`, summed in column order.
    pub fn reconstruction(&self) -> f64 {
        let mut total = self.baseline;
        for v in &self.values {
            total += v;
        }
        total
    }

    pub fn additivity_gap(&self) -> f64 {
        (self.reconstruction() - self.model_output).abs()
    }
}

/// `phi_j = beta_j * x_j` on the input scale, `phi_0 = beta_0`.
pub fn linear_contributions(model: &LogisticModel, x: &[f64]) -> Result<AttributionVector, AttributionError> {
    let model_output = model.raw_score(x).map_err(|_| AttributionError::DimensionMismatch {
        expected: model.n_features(),
        found: x.len(),
    })?;
    Ok(AttributionVector {
        values: model.coefficients.iter().zip(x).map(|(b, v)| b * v).collect(),
        baseline: model.intercept,
        model_output,
    })
}

/// Dispatch on model kind: linear contributions or TreeSHAP.
pub fn attribute(model: &Model, x: &[f64]) -> Result<AttributionVector, AttributionError> {
    match model {
        Model::Logistic(m) => linear_contributions(m, x),
        Model::Gbdt(m) => tree_shap(m, x),
    }
}

/// Attributions for many rows; the forest is validated once.
pub fn attribute_rows(
    model: &Model,
    ds: &EncodedDataset,
    rows: &[usize],
) -> Result<Vec<AttributionVector>, AttributionError> {
    match model {
        Model::Logistic(m) => rows.iter().map(|&r| linear_contributions(m, ds.row(r))).collect(),
        Model::Gbdt(m) => {
            if ds.n_cols() != m.n_features {
                return Err(AttributionError::DimensionMismatch {
                    expected: m.n_features,
                    found: ds.n_cols(),
                });
            }
            treeshap::check_covers(m)?;
            Ok(rows
                .iter()
                .map(|&r| treeshap::tree_shap_unchecked(m, ds.row(r)))
                .collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedAttribution {
    /// `(original feature, sum over its columns)` in group order.
    pub values: Vec<(String, f64)>,
}

impl GroupedAttribution {
    /// Sum of group values in group order.
    pub fn total(&self) -> f64 {
        let mut total = 0.0;
        for (_, v) in &self.values {
            total += v;
        }
        total
    }
}

/// Column sum taken group by group, matching [`GroupedAttribution::total`]
/// operation for operation.
pub fn group_order_sum(values: &[f64], groups: &[FeatureGroup]) -> f64 {
    let mut total = 0.0;
    for g in groups {
        let mut s = 0.0;
        for &c in &g.columns {
            s += values[c];
        }
        total += s;
    }
    total
}

pub fn group_attributions(
    attr: &AttributionVector,
    groups: &[FeatureGroup],
) -> Result<GroupedAttribution, AttributionError> {
    let m = attr.values.len();
    let mut seen = vec![false; m];
    for g in groups {
        for &c in &g.columns {
            if c >= m {
                return Err(AttributionError::NotAPartition(format!(
                    "group `{}` names column {c} of {m}",
                    g.name
                )));
            }
            if std::mem::replace(&mut seen[c], true) {
                return Err(AttributionError::NotAPartition(format!("column {c} is in two groups")));
            }
        }
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(AttributionError::NotAPartition(format!("column {c} is in no group")));
    }
    let values = groups
        .iter()
        .map(|g| {
            let mut s = 0.0;
            for &c in &g.columns {
                s += attr.values[c];
            }
            (g.name.clone(), s)
        })
        .collect();
    Ok(GroupedAttribution { values })
}

/// Features ordered by `|value|` descending; exact ties by name ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedExplanation {
    pub entries: Vec<(String, f64)>,
}

impl RankedExplanation {
    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn top(&self, k: usize) -> Vec<&str> {
        self.entries.iter().take(k).map(|(n, _)| n.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn rank_features(grouped: &GroupedAttribution) -> RankedExplanation {
    let mut entries = grouped.values.clone();
    entries.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(&b.0)));
    RankedExplanation { entries }
}

/// One line of `attribute` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub instance_id: usize,
    pub baseline: f64,
    pub model_output: f64,
    pub grouped: Vec<(String, f64)>,
    pub ranking: Vec<String>,
}

/// Attribution, grouping and ranking of one dataset row.
pub fn explain(
    model: &Model,
    ds: &EncodedDataset,
    row: usize,
) -> Result<(AttributionVector, RankedExplanation), AttributionError> {
    let attr = attribute(model, ds.row(row))?;
    let ranked = rank_features(&group_attributions(&attr, ds.groups())?);
    Ok((attr, ranked))
}

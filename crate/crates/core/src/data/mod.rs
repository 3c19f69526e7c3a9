//! Loading, cleaning, encoding and splitting tabular loan data.

mod encode;
pub mod lendingclub;
mod persist;
mod schema;
mod split;
pub mod synthetic;
mod table;

use std::path::PathBuf;

use thiserror::Error;

pub use encode::{apply_schema, EncodedDataset, FeatureGroup};
pub use persist::{DatasetDir, PrepReport, DATASET_FORMAT_VERSION};
pub use schema::{DisplayFormat, FeatureEntry, FeatureKind, FeatureSchema, TargetSpec};
pub use split::{stratified_folds, stratified_split, SplitIndices};
pub use table::{drop_degenerate, load_table, read_csv, Column, DropReason, DropReport, RawTable, TableFormat};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("table has no data rows")]
    EmptyTable,
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow { line: usize, expected: usize, found: usize },
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("every column was dropped as degenerate")]
    DegenerateDataset,
    #[error("schema: {0}")]
    Schema(String),
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("feature `{feature}`: level `{level}` is not declared and has no consolidation rule")]
    UnknownLevel { feature: String, level: String },
    #[error("feature `{feature}`, row {row}: `{value}` is not a number")]
    InvalidNumeric { feature: String, row: usize, value: String },
    #[error("row {row}: target value `{value}` is neither declared outcome")]
    NonBinaryTarget { row: usize, value: String },
    #[error("labels contain a single class")]
    SingleClass,
    #[error("class {class} has only {count} rows")]
    ClassTooSmall { class: u8, count: usize },
    #[error("split ratio must be in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("need at least 2 folds, got {0}")]
    InvalidFolds(usize),
    #[error("group index is not a partition: {0}")]
    NotAPartition(String),
    #[error("shape: {0}")]
    Shape(String),
    #[error("dataset format: {0}")]
    Format(String),
}

/// Everything `prepare` produces.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: EncodedDataset,
    pub split: SplitIndices,
    pub report: PrepReport,
}

/// Drop degenerate columns, encode, split, and impute missing numerics with
/// training-split medians.
pub fn prepare(raw: RawTable, schema: &FeatureSchema, ratio: f64, seed: u64) -> Result<Prepared, DataError> {
    let source_rows = raw.n_rows();
    let raw = if schema.target.drop_other {
        keep_declared_outcomes(&raw, &schema.target)?
    } else {
        raw
    };
    let other_outcome_rows = source_rows - raw.n_rows();
    let (raw, dropped) = drop_degenerate(raw)?;
    let mut dataset = apply_schema(&raw, schema)?;
    let split = stratified_split(dataset.labels(), ratio, seed)?;
    let imputed_medians = dataset.impute_medians(&split.train_idx)?;
    Ok(Prepared {
        dataset,
        split,
        report: PrepReport {
            source_rows,
            other_outcome_rows,
            dropped,
            imputed_medians,
        },
    })
}

fn keep_declared_outcomes(raw: &RawTable, target: &TargetSpec) -> Result<RawTable, DataError> {
    let col = raw
        .column(&target.column)
        .ok_or_else(|| DataError::MissingColumn(target.column.clone()))?;
    let keep: Vec<usize> = (0..raw.n_rows())
        .filter(|&r| {
            col.text_at(r)
                .is_some_and(|v| v == target.positive || v == target.negative)
        })
        .collect();
    if keep.is_empty() {
        return Err(DataError::EmptyTable);
    }
    Ok(raw.select_rows(&keep))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prepare_synthetic() {
        let raw = read_csv(synthetic::corpus_bytes(1000, 1).as_slice()).unwrap();
        let schema = FeatureSchema::from_toml_str(synthetic::SCHEMA_TOML).unwrap();
        let p = prepare(raw, &schema, 0.7, 42).unwrap();
        assert_eq!(p.split.train_idx.len(), 700);
        assert!(!p.dataset.has_missing());
        assert!(p.report.imputed_medians.contains_key("mths_since_last_delinq"));
        // nominal groups sum to one in every row
        for row in p.dataset.rows() {
            for g in p.dataset.groups().iter().filter(|g| g.columns.len() > 1) {
                let s: f64 = g.columns.iter().map(|&c| row[c]).sum();
                assert_eq!(s, 1.0);
            }
        }
    }
}

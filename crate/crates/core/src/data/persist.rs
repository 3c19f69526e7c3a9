//! On-disk layout of a prepared dataset directory (format version 1):
//!
//! | file          | contents                                                   |
//! |---------------|------------------------------------------------------------|
//! | `meta.json`   | format version, shape, names, per-feature display formats |
//! | `matrix.csv`  | header = encoded column names; one row per instance        |
//! | `labels.csv`  | `row_id,label`                                             |
//! | `display.csv` | `row_id` then one human-readable column per feature        |
//! | `groups.json` | `[{"name": .., "columns": [..]}]` in feature order         |
//! | `schema.toml` | the schema the dataset was encoded with, verbatim          |
//! | `split.json`  | optional train/test split over row positions               |
//! | `prep.json`   | optional preparation report (drops, imputed medians)       |
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! save/load cycle reproduces the matrix bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::encode::{check_partition, EncodedDataset, FeatureGroup};
use super::split::SplitIndices;
use super::table::DropReport;
use super::{DataError, DisplayFormat};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    n_rows: usize,
    n_cols: usize,
    encoded_names: Vec<String>,
    original_names: Vec<String>,
    display_formats: Vec<DisplayFormat>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrepReport {
    pub source_rows: usize,
    /// Rows removed for an outcome other than the two declared ones.
    #[serde(default)]
    pub other_outcome_rows: usize,
    pub dropped: DropReport,
    pub imputed_medians: BTreeMap<String, f64>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DataError> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, DataError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(f))
}

pub struct DatasetDir {
    root: PathBuf,
}

impl DatasetDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.root.join(file)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn save(&self, ds: &EncodedDataset, schema_source: &str) -> Result<(), DataError> {
        fs::create_dir_all(&self.root).map_err(io_err(&self.root))?;
        let meta = Meta {
            format_version: DATASET_FORMAT_VERSION,
            n_rows: ds.n_rows(),
            n_cols: ds.n_cols(),
            encoded_names: ds.encoded_names.clone(),
            original_names: ds.original_names(),
            display_formats: ds.display_formats.clone(),
        };
        write_json(&self.path("meta.json"), &meta)?;
        write_json(&self.path("groups.json"), &ds.groups)?;
        let schema_path = self.path("schema.toml");
        fs::write(&schema_path, schema_source).map_err(io_err(&schema_path))?;

        let mut w = csv_writer(&self.path("matrix.csv"))?;
        w.write_record(&ds.encoded_names)?;
        for row in ds.rows() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(io_err(&self.root))?;

        let mut w = csv_writer(&self.path("labels.csv"))?;
        w.write_record(["row_id", "label"])?;
        for (id, y) in ds.row_ids.iter().zip(&ds.labels) {
            w.write_record([id.to_string(), y.to_string()])?;
        }
        w.flush().map_err(io_err(&self.root))?;

        let mut w = csv_writer(&self.path("display.csv"))?;
        w.write_record(std::iter::once("row_id".to_string()).chain(ds.original_names()))?;
        for (id, vals) in ds.row_ids.iter().zip(&ds.display) {
            w.write_record(std::iter::once(id.to_string()).chain(vals.iter().cloned()))?;
        }
        w.flush().map_err(io_err(&self.root))?;
        Ok(())
    }

    pub fn load(&self) -> Result<EncodedDataset, DataError> {
        let meta: Meta = read_json(&self.path("meta.json"))?;
        if meta.format_version != DATASET_FORMAT_VERSION {
            return Err(DataError::Format(format!(
                "dataset format_version {} is not supported",
                meta.format_version
            )));
        }
        let groups: Vec<FeatureGroup> = read_json(&self.path("groups.json"))?;
        check_partition(&groups, meta.n_cols)?;

        let mut matrix = Vec::with_capacity(meta.n_rows * meta.n_cols);
        let path = self.path("matrix.csv");
        let mut r = csv::Reader::from_path(&path)?;
        for rec in r.records() {
            let rec = rec?;
            for cell in rec.iter() {
                matrix.push(
                    cell.parse::<f64>()
                        .map_err(|_| DataError::Format(format!("bad number `{cell}` in {}", path.display())))?,
                );
            }
        }

        let mut row_ids = Vec::with_capacity(meta.n_rows);
        let mut labels = Vec::with_capacity(meta.n_rows);
        let mut r = csv::Reader::from_path(self.path("labels.csv"))?;
        for rec in r.deserialize::<(usize, u8)>() {
            let (id, y) = rec?;
            row_ids.push(id);
            labels.push(y);
        }

        let mut display = Vec::with_capacity(meta.n_rows);
        let mut r = csv::Reader::from_path(self.path("display.csv"))?;
        for rec in r.records() {
            let rec = rec?;
            display.push(rec.iter().skip(1).map(str::to_string).collect());
        }

        if matrix.len() != meta.n_rows * meta.n_cols || labels.len() != meta.n_rows || display.len() != meta.n_rows {
            return Err(DataError::Format("dataset files disagree on row count".into()));
        }
        Ok(EncodedDataset {
            matrix,
            n_cols: meta.n_cols,
            labels,
            encoded_names: meta.encoded_names,
            groups,
            row_ids,
            display,
            display_formats: meta.display_formats,
        })
    }

    pub fn schema_source(&self) -> Result<String, DataError> {
        let p = self.path("schema.toml");
        fs::read_to_string(&p).map_err(io_err(&p))
    }

    pub fn save_split(&self, split: &SplitIndices) -> Result<(), DataError> {
        write_json(&self.path("split.json"), split)
    }

    pub fn load_split(&self) -> Result<SplitIndices, DataError> {
        read_json(&self.path("split.json"))
    }

    pub fn save_report(&self, report: &PrepReport) -> Result<(), DataError> {
        write_json(&self.path("prep.json"), report)
    }

    pub fn load_report(&self) -> Result<PrepReport, DataError> {
        read_json(&self.path("prep.json"))
    }
}

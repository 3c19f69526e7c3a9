//! Raw CSV ingestion with per-column type sniffing.

use std::collections::BTreeSet;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

/// Tokens treated as a missing cell, compared after trimming.
const MISSING_TOKENS: &[&str] = &["", "NA", "N/A", "NaN", "nan", "null", "NULL", "None"];

pub(crate) fn is_missing_token(s: &str) -> bool {
    MISSING_TOKENS.contains(&s)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<Option<f64>>),
    Text(Vec<Option<String>>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Column::Numeric(_))
    }

    /// Cell rendered back to text; `None` for missing.
    pub fn text_at(&self, row: usize) -> Option<String> {
        match self {
            Column::Numeric(v) => v[row].map(|x| x.to_string()),
            Column::Text(v) => v[row].clone(),
        }
    }

    fn missing_count(&self) -> usize {
        match self {
            Column::Numeric(v) => v.iter().filter(|c| c.is_none()).count(),
            Column::Text(v) => v.iter().filter(|c| c.is_none()).count(),
        }
    }

    /// Number of distinct non-missing values.
    fn distinct_count(&self) -> usize {
        match self {
            Column::Numeric(v) => v.iter().flatten().map(|x| x.to_bits()).collect::<BTreeSet<_>>().len(),
            Column::Text(v) => v.iter().flatten().collect::<BTreeSet<_>>().len(),
        }
    }

    fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&r| v[r]).collect()),
            Column::Text(v) => Column::Text(rows.iter().map(|&r| v[r].clone()).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    headers: Vec<String>,
    columns: Vec<Column>,
    n_rows: usize,
}

impl RawTable {
    /// Build a table from raw string cells, sniffing each column's type.
    pub fn from_records(headers: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self, DataError> {
        if rows.is_empty() {
            return Err(DataError::EmptyTable);
        }
        let mut seen = BTreeSet::new();
        for h in &headers {
            if !seen.insert(h.as_str()) {
                return Err(DataError::DuplicateColumn(h.clone()));
            }
        }
        let width = headers.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(DataError::RaggedRow {
                    // +2: one for the header, one for 1-based numbering
                    line: i + 2,
                    expected: width,
                    found: row.len(),
                });
            }
        }
        let n_rows = rows.len();
        let columns = (0..width)
            .map(|c| sniff_column(rows.iter().map(|r| r[c].trim())))
            .collect();
        Ok(Self {
            headers,
            columns,
            n_rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.headers.len()
    }

    pub fn headers(&self) -> &[String] {
        &self.headers
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.headers.iter().position(|h| h == name).map(|i| &self.columns[i])
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, &Column)> {
        self.headers.iter().map(String::as_str).zip(self.columns.iter())
    }

    /// Keep only the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> RawTable {
        RawTable {
            headers: self.headers.clone(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            n_rows: rows.len(),
        }
    }

    fn retain_columns(self, keep: &[bool]) -> RawTable {
        let (headers, columns) = self
            .headers
            .into_iter()
            .zip(self.columns)
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(hc, _)| hc)
            .unzip();
        RawTable {
            headers,
            columns,
            n_rows: self.n_rows,
        }
    }
}

fn sniff_column<'a>(cells: impl Iterator<Item = &'a str> + Clone) -> Column {
    let numeric = cells
        .clone()
        .filter(|c| !is_missing_token(c))
        .all(|c| c.parse::<f64>().is_ok_and(f64::is_finite));
    if numeric {
        Column::Numeric(
            cells
                .map(|c| if is_missing_token(c) { None } else { c.parse().ok() })
                .collect(),
        )
    } else {
        Column::Text(cells.map(|c| (!is_missing_token(c)).then(|| c.to_string())).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Csv,
}

pub fn load_table(path: &Path, format: TableFormat) -> Result<RawTable, DataError> {
    match format {
        TableFormat::Csv => {
            let file = File::open(path).map_err(|e| DataError::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            read_csv(file)
        }
    }
}

pub fn read_csv<R: std::io::Read>(reader: R) -> Result<RawTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(DataError::EmptyTable);
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    RawTable::from_records(headers, rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    AllMissing,
    ZeroVariance,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DropReport {
    pub dropped: Vec<(String, DropReason)>,
}

/// Remove columns that are entirely missing or constant over their non-missing values.
pub fn drop_degenerate(raw: RawTable) -> Result<(RawTable, DropReport), DataError> {
    let mut report = DropReport::default();
    let keep: Vec<bool> = raw
        .columns()
        .map(|(name, col)| {
            let reason = if col.missing_count() == col.len() {
                Some(DropReason::AllMissing)
            } else if col.distinct_count() <= 1 {
                Some(DropReason::ZeroVariance)
            } else {
                None
            };
            if let Some(r) = reason {
                report.dropped.push((name.to_string(), r));
            }
            reason.is_none()
        })
        .collect();
    if !keep.iter().any(|&k| k) {
        return Err(DataError::DegenerateDataset);
    }
    Ok((raw.retain_columns(&keep), report))
}

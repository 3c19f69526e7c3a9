use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::schema::{FeatureKind, FeatureSchema};
use super::table::{Column, RawTable};
use super::DataError;

/// Encoded columns belonging to one original feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub name: String,
    pub columns: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    /// Row-major `n_rows x n_cols`.
    pub(crate) matrix: Vec<f64>,
    pub(crate) n_cols: usize,
    pub(crate) labels: Vec<u8>,
    pub(crate) encoded_names: Vec<String>,
    pub(crate) groups: Vec<FeatureGroup>,
    /// Stable instance identifiers (source row index unless overridden).
    pub(crate) row_ids: Vec<usize>,
    /// Per row, per original feature: the value as a person would read it.
    pub(crate) display: Vec<Vec<String>>,
    pub(crate) display_formats: Vec<super::DisplayFormat>,
}

impl EncodedDataset {
    pub fn new(
        matrix: Vec<f64>,
        n_cols: usize,
        labels: Vec<u8>,
        encoded_names: Vec<String>,
        groups: Vec<FeatureGroup>,
    ) -> Result<Self, DataError> {
        let n_rows = labels.len();
        if matrix.len() != n_rows * n_cols || encoded_names.len() != n_cols {
            return Err(DataError::Shape(format!(
                "matrix has {} cells for {} rows x {} columns ({} names)",
                matrix.len(),
                n_rows,
                n_cols,
                encoded_names.len()
            )));
        }
        check_partition(&groups, n_cols)?;
        let display = (0..n_rows)
            .map(|r| {
                groups
                    .iter()
                    .map(|g| {
                        g.columns
                            .iter()
                            .map(|&c| super::DisplayFormat::Plain.render(matrix[r * n_cols + c]))
                            .collect::<Vec<_>>()
                            .join("/")
                    })
                    .collect()
            })
            .collect();
        let display_formats = vec![super::DisplayFormat::Plain; groups.len()];
        let ds = Self {
            matrix,
            n_cols,
            labels,
            encoded_names,
            groups,
            row_ids: (0..n_rows).collect(),
            display,
            display_formats,
        };
        ds.check_labels()?;
        Ok(ds)
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.matrix.chunks_exact(self.n_cols.max(1))
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn encoded_names(&self) -> &[String] {
        &self.encoded_names
    }

    pub fn groups(&self) -> &[FeatureGroup] {
        &self.groups
    }

    pub fn original_names(&self) -> Vec<String> {
        self.groups.iter().map(|g| g.name.clone()).collect()
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    /// Position of an instance id, if present.
    pub fn position_of(&self, id: usize) -> Option<usize> {
        // ids are ascending for datasets built by apply_schema
        match self.row_ids.binary_search(&id) {
            Ok(p) => Some(p),
            Err(_) => self.row_ids.iter().position(|&r| r == id),
        }
    }

    /// Original-feature (name, human-readable value) pairs for one row.
    pub fn display_row(&self, i: usize) -> Vec<(String, String)> {
        self.groups
            .iter()
            .zip(&self.display[i])
            .map(|(g, v)| (g.name.clone(), v.clone()))
            .collect()
    }

    pub fn group_index(&self) -> BTreeMap<String, Vec<usize>> {
        self.groups
            .iter()
            .map(|g| (g.name.clone(), g.columns.clone()))
            .collect()
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> EncodedDataset {
        let mut matrix = Vec::with_capacity(rows.len() * self.n_cols);
        for &r in rows {
            matrix.extend_from_slice(self.row(r));
        }
        EncodedDataset {
            matrix,
            n_cols: self.n_cols,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            encoded_names: self.encoded_names.clone(),
            groups: self.groups.clone(),
            row_ids: rows.iter().map(|&r| self.row_ids[r]).collect(),
            display: rows.iter().map(|&r| self.display[r].clone()).collect(),
            display_formats: self.display_formats.clone(),
        }
    }

    pub fn prevalence(&self) -> f64 {
        self.labels.iter().map(|&y| y as f64).sum::<f64>() / self.n_rows() as f64
    }

    fn check_labels(&self) -> Result<(), DataError> {
        let pos = self.labels.iter().filter(|&&y| y == 1).count();
        if self.labels.iter().any(|&y| y > 1) {
            return Err(DataError::Shape("labels must be 0 or 1".into()));
        }
        if pos == 0 || pos == self.labels.len() {
            return Err(DataError::SingleClass);
        }
        Ok(())
    }

    /// Fill missing (NaN) cells with the median of the given reference rows,
    /// per column. Returns the medians used, keyed by encoded column name.
    pub fn impute_medians(&mut self, reference_rows: &[usize]) -> Result<BTreeMap<String, f64>, DataError> {
        let mut used = BTreeMap::new();
        for c in 0..self.n_cols {
            if !(0..self.n_rows()).any(|r| self.matrix[r * self.n_cols + c].is_nan()) {
                continue;
            }
            let mut vals: Vec<f64> = reference_rows
                .iter()
                .map(|&r| self.matrix[r * self.n_cols + c])
                .filter(|v| !v.is_nan())
                .collect();
            if vals.is_empty() {
                return Err(DataError::Shape(format!(
                    "column `{}` has no observed values in the reference rows",
                    self.encoded_names[c]
                )));
            }
            vals.sort_by(f64::total_cmp);
            let mid = vals.len() / 2;
            let median = if vals.len().is_multiple_of(2) {
                (vals[mid - 1] + vals[mid]) / 2.0
            } else {
                vals[mid]
            };
            let group = self
                .groups
                .iter()
                .position(|g| g.columns.contains(&c))
                .expect("partition");
            let fmt = self.display_formats[group];
            for r in 0..self.n_rows() {
                let cell = &mut self.matrix[r * self.n_cols + c];
                if cell.is_nan() {
                    *cell = median;
                    self.display[r][group] = fmt.render(median);
                }
            }
            used.insert(self.encoded_names[c].clone(), median);
        }
        Ok(used)
    }

    pub fn has_missing(&self) -> bool {
        self.matrix.iter().any(|v| v.is_nan())
    }
}

pub(crate) fn check_partition(groups: &[FeatureGroup], n_cols: usize) -> Result<(), DataError> {
    let mut owner = vec![None; n_cols];
    for (g, group) in groups.iter().enumerate() {
        if group.columns.is_empty() {
            return Err(DataError::NotAPartition(format!("group `{}` is empty", group.name)));
        }
        for &c in &group.columns {
            match owner.get_mut(c) {
                None => {
                    return Err(DataError::NotAPartition(format!(
                        "group `{}` references column {c} of {n_cols}",
                        group.name
                    )))
                }
                Some(Some(_)) => return Err(DataError::NotAPartition(format!("column {c} is in two groups"))),
                Some(slot) => *slot = Some(g),
            }
        }
    }
    if let Some(c) = owner.iter().position(Option::is_none) {
        return Err(DataError::NotAPartition(format!("column {c} belongs to no group")));
    }
    Ok(())
}

/// Encode a raw table according to the schema.
///
/// Numeric cells that are missing become NaN; call
/// [`EncodedDataset::impute_medians`] with the training rows afterwards.
pub fn apply_schema(raw: &RawTable, schema: &FeatureSchema) -> Result<EncodedDataset, DataError> {
    let n = raw.n_rows();
    let target = raw
        .column(&schema.target.column)
        .ok_or_else(|| DataError::MissingColumn(schema.target.column.clone()))?;
    let labels = (0..n)
        .map(|r| match target.text_at(r) {
            Some(v) if v == schema.target.positive => Ok(1u8),
            Some(v) if v == schema.target.negative => Ok(0u8),
            other => Err(DataError::NonBinaryTarget {
                row: r,
                value: other.unwrap_or_default(),
            }),
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut encoded_names = Vec::new();
    let mut groups = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut display: Vec<Vec<String>> = vec![Vec::new(); n];
    let mut display_formats = Vec::new();

    for entry in schema.active() {
        let col = raw
            .column(&entry.column)
            .ok_or_else(|| DataError::MissingColumn(entry.column.clone()))?;
        let start = encoded_names.len();
        match &entry.kind {
            FeatureKind::Numeric => {
                let values = numeric_values(col, &entry.name, entry.strip_suffix.as_deref())?;
                for (r, v) in values.iter().enumerate() {
                    display[r].push(if v.is_nan() {
                        String::new()
                    } else {
                        entry.display.render(*v)
                    });
                }
                encoded_names.push(entry.name.clone());
                columns.push(values);
            }
            FeatureKind::Ordinal(codes) => {
                let mut values = Vec::with_capacity(n);
                for r in 0..n {
                    let raw_level = col.text_at(r).unwrap_or_default();
                    let level = entry.consolidate(&raw_level);
                    let code = codes.get(level).ok_or_else(|| DataError::UnknownLevel {
                        feature: entry.name.clone(),
                        level: raw_level.clone(),
                    })?;
                    values.push(*code as f64);
                    display[r].push(level.to_string());
                }
                encoded_names.push(entry.name.clone());
                columns.push(values);
            }
            FeatureKind::Nominal(levels) => {
                let mut onehot = vec![vec![0.0; n]; levels.len()];
                for r in 0..n {
                    let raw_level = col.text_at(r).unwrap_or_default();
                    let level = entry.consolidate(&raw_level);
                    let k = levels
                        .iter()
                        .position(|l| l == level)
                        .ok_or_else(|| DataError::UnknownLevel {
                            feature: entry.name.clone(),
                            level: raw_level.clone(),
                        })?;
                    onehot[k][r] = 1.0;
                    display[r].push(level.to_string());
                }
                for level in levels {
                    encoded_names.push(format!("{}={}", entry.name, level));
                }
                columns.extend(onehot);
            }
            FeatureKind::Drop => unreachable!("active() skips drops"),
        }
        groups.push(FeatureGroup {
            name: entry.name.clone(),
            columns: (start..encoded_names.len()).collect(),
        });
        display_formats.push(entry.display);
    }

    let n_cols = encoded_names.len();
    let mut matrix = vec![0.0; n * n_cols];
    for (c, values) in columns.iter().enumerate() {
        for (r, v) in values.iter().enumerate() {
            matrix[r * n_cols + c] = *v;
        }
    }
    let ds = EncodedDataset {
        matrix,
        n_cols,
        labels,
        encoded_names,
        groups,
        row_ids: (0..n).collect(),
        display,
        display_formats,
    };
    check_partition(&ds.groups, n_cols)?;
    ds.check_labels()?;
    Ok(ds)
}

fn numeric_values(col: &Column, feature: &str, strip_suffix: Option<&str>) -> Result<Vec<f64>, DataError> {
    match col {
        Column::Numeric(v) => Ok(v.iter().map(|c| c.unwrap_or(f64::NAN)).collect()),
        Column::Text(v) => v
            .iter()
            .enumerate()
            .map(|(r, c)| match c {
                None => Ok(f64::NAN),
                Some(s) => {
                    let t = strip_suffix.and_then(|suf| s.strip_suffix(suf)).unwrap_or(s).trim();
                    t.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| DataError::InvalidNumeric {
                            feature: feature.to_string(),
                            row: r,
                            value: s.clone(),
                        })
                }
            })
            .collect(),
    }
}

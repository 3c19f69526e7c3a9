//! Declarative feature schema.
//!
//! A schema is a TOML document with a `[target]` table and one
//! `[[feature]]` table per raw column the pipeline should know about:
//!
//! ```toml
//! format_version = 1
//!
//! [target]
//! column = "loan_status"
//! positive = "Charged Off"
//! negative = "Fully Paid"
//!
//! [[feature]]
//! name = "grade"
//! kind = "ordinal"
//! levels = { A = 1, B = 2, C = 3 }
//!
//! [[feature]]
//! name = "home_ownership"
//! kind = "nominal"
//! levels = ["MORTGAGE", "OWN", "RENT", "OTHER"]
//! consolidate = { NONE = "OTHER", ANY = "OTHER" }
//!
//! [[feature]]
//! name = "total_pymnt"
//! kind = "drop"
//! drop_reason = "recorded after origination"
//! ```
//!
//! Optional per-feature keys: `column` (source column when it differs from
//! `name`), `display` (`plain`, `integer`, `money`, `percent`), and
//! `strip_suffix` (removed from text cells before numeric parsing, e.g. `"%"`).
//! A missing categorical cell is looked up as the empty level `""`, so a
//! schema can route it with `consolidate = { "" = "OTHER" }`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

pub const SCHEMA_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplayFormat {
    #[default]
    Plain,
    Integer,
    Money,
    Percent,
}

impl DisplayFormat {
    /// Human-readable rendering used in prompts. Fixed rules so prompts are
    /// reproducible: money gets thousands separators, percent a trailing `%`,
    /// everything rounded to at most 4 decimals.
    pub fn render(self, x: f64) -> String {
        match self {
            DisplayFormat::Plain => trim_decimals(x, 4),
            DisplayFormat::Integer => format!("{}", x.round() as i64),
            DisplayFormat::Money => {
                let cents = (x * 100.0).round() / 100.0;
                let whole = cents.trunc();
                let mut out = group_thousands(whole.abs() as u64);
                if cents < 0.0 {
                    out.insert(0, '-');
                }
                let frac = (cents - whole).abs();
                if frac > 0.0 {
                    out.push_str(&format!("{:.2}", frac)[1..]);
                }
                out
            }
            DisplayFormat::Percent => format!("{}%", trim_decimals(x, 2)),
        }
    }
}

fn trim_decimals(x: f64, places: usize) -> String {
    let s = format!("{:.*}", places, x);
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

fn group_thousands(mut n: u64) -> String {
    let mut parts = Vec::new();
    loop {
        if n < 1000 {
            parts.push(n.to_string());
            break;
        }
        parts.push(format!("{:03}", n % 1000));
        n /= 1000;
    }
    parts.reverse();
    parts.join(",")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub column: String,
    pub positive: String,
    pub negative: String,
    /// Drop rows with any other outcome instead of rejecting the table.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub drop_other: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureKind {
    Numeric,
    /// Level name to integer code.
    Ordinal(BTreeMap<String, i64>),
    /// Consolidated levels in one-hot column order.
    Nominal(Vec<String>),
    Drop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEntry {
    pub name: String,
    pub column: String,
    pub kind: FeatureKind,
    pub consolidation: BTreeMap<String, String>,
    pub reason: Option<String>,
    pub display: DisplayFormat,
    pub strip_suffix: Option<String>,
}

impl FeatureEntry {
    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, FeatureKind::Ordinal(_) | FeatureKind::Nominal(_))
    }

    /// Map a raw categorical level through the consolidation table.
    pub fn consolidate<'a>(&'a self, raw: &'a str) -> &'a str {
        self.consolidation.get(raw).map(String::as_str).unwrap_or(raw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    pub target: TargetSpec,
    pub entries: Vec<FeatureEntry>,
    /// Source text, echoed verbatim into persisted datasets.
    pub source: String,
}

// On-disk shape.

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    format_version: u32,
    target: TargetSpec,
    #[serde(default, rename = "feature")]
    features: Vec<EntryFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryFile {
    name: String,
    #[serde(default)]
    column: Option<String>,
    kind: KindTag,
    #[serde(default)]
    levels: Option<LevelsFile>,
    #[serde(default)]
    consolidate: BTreeMap<String, String>,
    #[serde(default)]
    drop_reason: Option<String>,
    #[serde(default)]
    display: DisplayFormat,
    #[serde(default)]
    strip_suffix: Option<String>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum KindTag {
    Numeric,
    Ordinal,
    Nominal,
    Drop,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum LevelsFile {
    List(Vec<String>),
    Codes(BTreeMap<String, i64>),
}

impl FeatureSchema {
    pub fn from_toml_str(text: &str) -> Result<Self, DataError> {
        let file: SchemaFile = toml::from_str(text).map_err(|e| DataError::Schema(e.to_string()))?;
        if file.format_version != SCHEMA_FORMAT_VERSION {
            return Err(DataError::Schema(format!(
                "unsupported schema format_version {}",
                file.format_version
            )));
        }
        let entries = file
            .features
            .into_iter()
            .map(EntryFile::into_entry)
            .collect::<Result<Vec<_>, _>>()?;
        let schema = FeatureSchema {
            target: file.target,
            entries,
            source: text.to_string(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let mut names = BTreeSet::new();
        for e in &self.entries {
            if !names.insert(e.name.as_str()) {
                return Err(DataError::Schema(format!("duplicate feature name `{}`", e.name)));
            }
            match &e.kind {
                FeatureKind::Ordinal(codes) => {
                    if codes.is_empty() {
                        return Err(DataError::Schema(format!("`{}`: no levels", e.name)));
                    }
                    let distinct: BTreeSet<_> = codes.values().collect();
                    if distinct.len() != codes.len() {
                        return Err(DataError::Schema(format!(
                            "`{}`: ordinal codes are not injective",
                            e.name
                        )));
                    }
                }
                FeatureKind::Nominal(levels) => {
                    if levels.is_empty() {
                        return Err(DataError::Schema(format!("`{}`: no levels", e.name)));
                    }
                    let distinct: BTreeSet<_> = levels.iter().collect();
                    if distinct.len() != levels.len() {
                        return Err(DataError::Schema(format!("`{}`: repeated nominal level", e.name)));
                    }
                }
                FeatureKind::Numeric | FeatureKind::Drop => {}
            }
            if !e.consolidation.is_empty() {
                let declared: BTreeSet<&str> = match &e.kind {
                    FeatureKind::Ordinal(codes) => codes.keys().map(String::as_str).collect(),
                    FeatureKind::Nominal(levels) => levels.iter().map(String::as_str).collect(),
                    _ => {
                        return Err(DataError::Schema(format!(
                            "`{}`: consolidate only applies to categorical features",
                            e.name
                        )))
                    }
                };
                for (raw, target) in &e.consolidation {
                    if !declared.contains(target.as_str()) {
                        return Err(DataError::Schema(format!(
                            "`{}`: consolidation `{raw}` -> `{target}` targets an undeclared level",
                            e.name
                        )));
                    }
                }
            }
        }
        if self.active().next().is_none() {
            return Err(DataError::Schema("schema has no non-drop features".into()));
        }
        if self.target.positive == self.target.negative {
            return Err(DataError::Schema("target labels must differ".into()));
        }
        if self.entries.iter().any(|e| e.column == self.target.column) {
            return Err(DataError::Schema(format!(
                "target column `{}` is also declared as a feature",
                self.target.column
            )));
        }
        Ok(())
    }

    /// Non-drop entries in declaration order.
    pub fn active(&self) -> impl Iterator<Item = &FeatureEntry> {
        self.entries.iter().filter(|e| !matches!(e.kind, FeatureKind::Drop))
    }

    pub fn entry(&self, name: &str) -> Option<&FeatureEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

impl EntryFile {
    fn into_entry(self) -> Result<FeatureEntry, DataError> {
        let kind = match (self.kind, self.levels) {
            (KindTag::Numeric, None) => FeatureKind::Numeric,
            (KindTag::Drop, None) => FeatureKind::Drop,
            (KindTag::Ordinal, Some(LevelsFile::Codes(c))) => FeatureKind::Ordinal(c),
            (KindTag::Nominal, Some(LevelsFile::List(l))) => FeatureKind::Nominal(l),
            (KindTag::Ordinal, _) => {
                return Err(DataError::Schema(format!(
                    "`{}`: ordinal levels must be a table of level = code",
                    self.name
                )))
            }
            (KindTag::Nominal, _) => {
                return Err(DataError::Schema(format!(
                    "`{}`: nominal levels must be a list",
                    self.name
                )))
            }
            (_, Some(_)) => {
                return Err(DataError::Schema(format!(
                    "`{}`: levels given for a non-categorical feature",
                    self.name
                )))
            }
        };
        Ok(FeatureEntry {
            column: self.column.unwrap_or_else(|| self.name.clone()),
            name: self.name,
            kind,
            consolidation: self.consolidate,
            reason: self.drop_reason,
            display: self.display,
            strip_suffix: self.strip_suffix,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
format_version = 1
[target]
column = "y"
positive = "Charged Off"
negative = "Fully Paid"
"#;

    fn parse(features: &str) -> Result<FeatureSchema, DataError> {
        FeatureSchema::from_toml_str(&format!("{BASE}{features}"))
    }

    #[test]
    fn parses_all_kinds() {
        let s = parse(
            r#"
[[feature]]
name = "grade"
kind = "ordinal"
levels = { A = 1, B = 2 }

[[feature]]
name = "home"
kind = "nominal"
levels = ["RENT", "OWN", "OTHER"]
consolidate = { NONE = "OTHER" }

[[feature]]
name = "rate"
kind = "numeric"
display = "percent"
strip_suffix = "%"

[[feature]]
name = "later"
kind = "drop"
drop_reason = "leakage"
"#,
        )
        .unwrap();
        assert_eq!(s.entries.len(), 4);
        assert_eq!(s.active().count(), 3);
        assert_eq!(s.entry("home").unwrap().consolidate("NONE"), "OTHER");
        assert_eq!(s.entry("home").unwrap().consolidate("RENT"), "RENT");
        assert_eq!(s.entry("later").unwrap().reason.as_deref(), Some("leakage"));
    }

    #[test]
    fn rejects_duplicate_names() {
        let err = parse(
            r#"
[[feature]]
name = "a"
kind = "numeric"
[[feature]]
name = "a"
kind = "numeric"
"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn rejects_non_injective_ordinal() {
        let err = parse(
            r#"
[[feature]]
name = "g"
kind = "ordinal"
levels = { A = 1, B = 1 }
"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("injective"));
    }

    #[test]
    fn rejects_consolidation_to_undeclared_level() {
        let err = parse(
            r#"
[[feature]]
name = "h"
kind = "nominal"
levels = ["RENT", "OWN"]
consolidate = { NONE = "OTHER" }
"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("undeclared"));
    }

    #[test]
    fn rejects_all_drop() {
        let err = parse(
            r#"
[[feature]]
name = "x"
kind = "drop"
"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("non-drop"));
    }

    #[test]
    fn rejects_wrong_levels_shape() {
        assert!(parse(
            r#"
[[feature]]
name = "g"
kind = "ordinal"
levels = ["A", "B"]
"#
        )
        .is_err());
    }

    #[test]
    fn display_rules() {
        assert_eq!(DisplayFormat::Money.render(12000.0), "12,000");
        assert_eq!(DisplayFormat::Money.render(1234567.5), "1,234,567.50");
        assert_eq!(DisplayFormat::Money.render(-950.0), "-950");
        assert_eq!(DisplayFormat::Percent.render(13.4900), "13.49%");
        assert_eq!(DisplayFormat::Plain.render(0.123456), "0.1235");
        assert_eq!(DisplayFormat::Plain.render(3.0), "3");
        assert_eq!(DisplayFormat::Integer.render(6.6), "7");
    }
}

//! Summary tables built from persisted records.
//!
//! The report is a pure function of the records and model metrics, so
//! regenerating it from the same files gives the same bytes. Records with a
//! transport error are left out of every score table and counted in the
//! health table instead.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::record::{read_records, records_path, write_atomic, EvalRecord};
use super::run::METRICS_FILE;
use super::HarnessError;
use crate::alignment::summarize_values;
use crate::models::EvalMetrics;
use crate::prompt::PromptMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub base_model: String,
    pub pr_auc: f64,
    pub macro_f1: f64,
    /// KS in percent.
    pub ks: f64,
}

/// Mean, min and max over a set of values; all `None` when the set is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub n: usize,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl Spread {
    fn of(values: &[f64]) -> Self {
        let raw: Vec<Option<f64>> = values.iter().map(|&v| Some(v)).collect();
        match summarize_values(&raw) {
            Ok(s) => Self {
                n: s.n,
                mean: Some(s.mean),
                min: Some(s.min),
                max: Some(s.max),
            },
            Err(_) => Self {
                n: 0,
                mean: None,
                min: None,
                max: None,
            },
        }
    }

    fn cell(&self) -> String {
        match (self.mean, self.min, self.max) {
            (Some(mean), Some(min), Some(max)) => format!("{} ({}, {})", fmt2(mean), fmt2(min), fmt2(max)),
            _ => "n/a".into(),
        }
    }
}

/// One arm and K with at least one record below perfect overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonPerfectOverlapRow {
    pub base_model: String,
    pub llm: String,
    pub k: usize,
    /// Records with overlap below one, and the spread of their values.
    pub nonperfect: Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauCell {
    pub n_nonperfect: usize,
    pub mean_of_nonperfect: Option<f64>,
    /// Records where fewer than two features were shared.
    pub n_undefined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauRow {
    pub base_model: String,
    pub llm: String,
    pub by_k: BTreeMap<usize, TauCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapGridRow {
    pub mode: PromptMode,
    pub llm: String,
    pub by_k: BTreeMap<usize, Spread>,
}

/// Autonomous-mode overlap for one base model: a row per mode and LLM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapGrid {
    pub base_model: String,
    pub k_values: Vec<usize>,
    pub rows: Vec<OverlapGridRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmHealth {
    pub arm_id: String,
    pub records: usize,
    pub failed: usize,
    pub unparseable: usize,
    pub with_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub model_metrics: Vec<MetricsRow>,
    pub translator_k_values: Vec<usize>,
    pub translator_nonperfect_overlap: Vec<NonPerfectOverlapRow>,
    pub translator_tau: Vec<TauRow>,
    pub autonomous_overlap: Vec<OverlapGrid>,
    pub health: Vec<ArmHealth>,
}

fn fmt2(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn k_values<'a>(records: impl Iterator<Item = &'a EvalRecord>) -> Vec<usize> {
    let set: BTreeSet<usize> = records
        .filter_map(|r| r.scores.as_ref())
        .flat_map(|s| s.k_values.iter().copied())
        .collect();
    set.into_iter().collect()
}

/// Scored records grouped by `(base model, llm)`.
fn by_arm<'a>(records: &[&'a EvalRecord]) -> BTreeMap<(String, String), Vec<&'a EvalRecord>> {
    let mut out: BTreeMap<(String, String), Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        out.entry((r.base_model.clone(), r.llm.clone())).or_default().push(r);
    }
    out
}

pub fn build_report(
    translator: &[EvalRecord],
    autonomous: &[EvalRecord],
    metrics: &BTreeMap<String, EvalMetrics>,
) -> Result<Report, HarnessError> {
    if translator.is_empty() && autonomous.is_empty() {
        return Err(HarnessError::EmptyRecords);
    }
    let model_metrics = metrics
        .iter()
        .map(|(name, m)| MetricsRow {
            base_model: name.clone(),
            pr_auc: m.pr_auc,
            macro_f1: m.macro_f1,
            ks: 100.0 * m.ks,
        })
        .collect();

    let scored_t: Vec<&EvalRecord> = translator.iter().filter(|r| r.scores.is_some()).collect();
    let ks_t = k_values(scored_t.iter().copied());
    let mut nonperfect_rows = Vec::new();
    let mut tau_rows = Vec::new();
    for ((base_model, llm), rs) in by_arm(&scored_t) {
        let mut by_k = BTreeMap::new();
        for &k in &ks_t {
            let overlaps: Vec<f64> = rs
                .iter()
                .filter_map(|r| r.scores.as_ref()?.overlap_at_k.get(&k).copied())
                .filter(|&v| v < 1.0)
                .collect();
            if !overlaps.is_empty() {
                nonperfect_rows.push(NonPerfectOverlapRow {
                    base_model: base_model.clone(),
                    llm: llm.clone(),
                    k,
                    nonperfect: Spread::of(&overlaps),
                });
            }
            let taus: Vec<Option<f64>> = rs
                .iter()
                .filter_map(|r| r.scores.as_ref()?.tau_at_k.get(&k).copied())
                .collect();
            let cell = match summarize_values(&taus) {
                Ok(s) => TauCell {
                    n_nonperfect: s.n_nonperfect,
                    mean_of_nonperfect: s.mean_of_nonperfect,
                    n_undefined: s.n_undefined,
                },
                Err(_) => TauCell {
                    n_nonperfect: 0,
                    mean_of_nonperfect: None,
                    n_undefined: 0,
                },
            };
            by_k.insert(k, cell);
        }
        tau_rows.push(TauRow { base_model, llm, by_k });
    }

    let scored_a: Vec<&EvalRecord> = autonomous.iter().filter(|r| r.scores.is_some()).collect();
    let ks_a = k_values(scored_a.iter().copied());
    let mut grids: BTreeMap<String, Vec<OverlapGridRow>> = BTreeMap::new();
    let mut groups: BTreeMap<(String, PromptMode, String), Vec<&EvalRecord>> = BTreeMap::new();
    for r in &scored_a {
        groups
            .entry((r.base_model.clone(), r.mode, r.llm.clone()))
            .or_default()
            .push(r);
    }
    for ((base_model, mode, llm), rs) in groups {
        let by_k = ks_a
            .iter()
            .map(|&k| {
                let v: Vec<f64> = rs
                    .iter()
                    .filter_map(|r| r.scores.as_ref()?.overlap_at_k.get(&k).copied())
                    .collect();
                (k, Spread::of(&v))
            })
            .collect();
        grids
            .entry(base_model)
            .or_default()
            .push(OverlapGridRow { mode, llm, by_k });
    }
    let autonomous_overlap = grids
        .into_iter()
        .map(|(base_model, rows)| OverlapGrid {
            base_model,
            k_values: ks_a.clone(),
            rows,
        })
        .collect();

    let mut health: BTreeMap<&str, ArmHealth> = BTreeMap::new();
    for r in translator.iter().chain(autonomous) {
        let h = health.entry(&r.arm_id).or_insert_with(|| ArmHealth {
            arm_id: r.arm_id.clone(),
            records: 0,
            failed: 0,
            unparseable: 0,
            with_violations: 0,
        });
        h.records += 1;
        h.failed += r.error.is_some() as usize;
        h.unparseable += r.unparseable as usize;
        h.with_violations += (!r.violations.is_empty()) as usize;
    }

    Ok(Report {
        model_metrics,
        translator_k_values: ks_t,
        translator_nonperfect_overlap: nonperfect_rows,
        translator_tau: tau_rows,
        autonomous_overlap,
        health: health.into_values().collect(),
    })
}

impl Report {
    pub fn to_json(&self) -> Result<String, HarnessError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn to_markdown(&self) -> String {
        let mut md = String::from("# Evaluation report\n");

        md.push_str("\n## Baseline model metrics (test split)\n\n");
        if self.model_metrics.is_empty() {
            md.push_str("No model metrics supplied.\n");
        } else {
            md.push_str("| Model | PR-AUC | Macro-F1 | KS (%) |\n|---|---|---|---|\n");
            for m in &self.model_metrics {
                let _ = writeln!(
                    md,
                    "| {} | {} | {} | {} |",
                    m.base_model,
                    fmt2(m.pr_auc),
                    fmt2(m.macro_f1),
                    fmt2(m.ks)
                );
            }
        }

        md.push_str("\n## Translator: records with Overlap@K below 1\n\n");
        if self.translator_tau.is_empty() {
            md.push_str("No translator records.\n");
        } else if self.translator_nonperfect_overlap.is_empty() {
            md.push_str("None: every scored record has Overlap@K = 1 at every K.\n");
        } else {
            md.push_str("| Base model | LLM | K | Number | Mean (min, max) |\n|---|---|---|---|---|\n");
            for r in &self.translator_nonperfect_overlap {
                let _ = writeln!(
                    md,
                    "| {} | {} | {} | {} | {} |",
                    r.base_model,
                    r.llm,
                    r.k,
                    r.nonperfect.n,
                    r.nonperfect.cell()
                );
            }
        }

        if !self.translator_tau.is_empty() {
            md.push_str("\n## Translator: number (mean) of Kendall's tau below 1\n\n");
            md.push_str("| Base model | LLM |");
            for k in &self.translator_k_values {
                let _ = write!(md, " Top-{k} |");
            }
            md.push_str("\n|---|---|");
            md.push_str(&"---|".repeat(self.translator_k_values.len()));
            md.push('\n');
            for row in &self.translator_tau {
                let _ = write!(md, "| {} | {} |", row.base_model, row.llm);
                for k in &self.translator_k_values {
                    let cell = &row.by_k[k];
                    let mut text = match cell.mean_of_nonperfect {
                        Some(mean) => format!("{} ({})", cell.n_nonperfect, fmt2(mean)),
                        None => cell.n_nonperfect.to_string(),
                    };
                    if cell.n_undefined > 0 {
                        let _ = write!(text, " [{} undefined]", cell.n_undefined);
                    }
                    let _ = write!(md, " {text} |");
                }
                md.push('\n');
            }
        }

        for grid in &self.autonomous_overlap {
            let _ = write!(
                md,
                "\n## Autonomous: mean (min, max) Overlap@K, {}\n\n",
                grid.base_model
            );
            md.push_str("| Mode | LLM |");
            for k in &grid.k_values {
                let _ = write!(md, " Overlap@{k} |");
            }
            md.push_str("\n|---|---|");
            md.push_str(&"---|".repeat(grid.k_values.len()));
            md.push('\n');
            for row in &grid.rows {
                let _ = write!(md, "| {} | {} |", row.mode, row.llm);
                for k in &grid.k_values {
                    let _ = write!(md, " {} |", row.by_k[k].cell());
                }
                md.push('\n');
            }
        }

        md.push_str(
            "\n## Record health\n\n| Arm | Records | Failed | Unparseable | With violations |\n|---|---|---|---|---|\n",
        );
        for h in &self.health {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} |",
                h.arm_id, h.records, h.failed, h.unparseable, h.with_violations
            );
        }
        md
    }
}

/// Reads `rq1`/`rq2` records and `metrics.json` from `records_dir`, writes
/// `report.json` and `report.md` into `out_dir`, and returns their paths.
pub fn report_from_dir(records_dir: &Path, out_dir: &Path) -> Result<(Report, PathBuf, PathBuf), HarnessError> {
    let load = |rq: u8| -> Result<Vec<EvalRecord>, HarnessError> {
        let p = records_path(records_dir, rq);
        if p.exists() {
            read_records(&p)
        } else {
            Ok(Vec::new())
        }
    };
    let translator = load(1)?;
    let autonomous = load(2)?;
    let metrics_file = records_dir.join(METRICS_FILE);
    let metrics: BTreeMap<String, EvalMetrics> = if metrics_file.exists() {
        let text = std::fs::read_to_string(&metrics_file).map_err(|source| HarnessError::Io {
            path: metrics_file.clone(),
            source,
        })?;
        serde_json::from_str(&text)?
    } else {
        BTreeMap::new()
    };
    let report = build_report(&translator, &autonomous, &metrics)?;
    std::fs::create_dir_all(out_dir).map_err(|source| HarnessError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let json = out_dir.join("report.json");
    let md = out_dir.join("report.md");
    write_atomic(&json, report.to_json()?.as_bytes())?;
    write_atomic(&md, report.to_markdown().as_bytes())?;
    Ok((report, json, md))
}

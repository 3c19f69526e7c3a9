//! Prompt construction for the three protocols and parsing of the replies.
//!
//! Prompts name original features with human-readable values, print the
//! predicted probability to four decimals, and end with an output contract
//! asking for exactly `k_out` numbered feature names from the vocabulary.
//! Rendering is a pure function of its inputs.

mod parse;
pub mod template;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::RankedExplanation;
use crate::data::EncodedDataset;

pub use parse::{parse_ranking, render_numbered_list, ParsedRanking, Violation, ViolationKind};
pub use template::TEMPLATE_VERSION;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("k_out = {k_out} exceeds the {m} available features")]
    KOutTooLarge { k_out: usize, m: usize },
    #[error("k_out must be at least 1")]
    KOutZero,
    #[error("reference ranking does not cover the instance's features: {0}")]
    ReferenceMismatch(String),
    #[error("few-shot prompts need exactly 2 demonstrations, got {0}")]
    WrongDemoCount(usize),
    #[error("demonstration {0} is the instance being explained")]
    DemoCollision(usize),
    #[error("demonstration pool has no instance with outcome {0}")]
    MissingClass(u8),
    #[error("invalid instance context: {0}")]
    InvalidContext(String),
    #[error("template: {0}")]
    Template(String),
    #[error("reply contains no usable ranked feature line")]
    UnparseableReply,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Translator,
    ZeroShot,
    FewShot,
}

impl PromptMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::Translator => "translator",
            PromptMode::ZeroShot => "zero_shot",
            PromptMode::FewShot => "few_shot",
        }
    }
}

impl std::fmt::Display for PromptMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceContext {
    pub instance_id: usize,
    /// `(original feature, display value)` in schema order.
    pub feature_values: Vec<(String, String)>,
    pub observed: u8,
    pub predicted: f64,
    pub base_model: String,
}

impl InstanceContext {
    pub fn from_dataset(ds: &EncodedDataset, row: usize, predicted: f64, base_model: &str) -> Self {
        Self {
            instance_id: ds.row_ids()[row],
            feature_values: ds.display_row(row),
            observed: ds.labels()[row],
            predicted,
            base_model: base_model.to_string(),
        }
    }

    pub fn vocabulary(&self) -> Vec<String> {
        self.feature_values.iter().map(|(n, _)| n.clone()).collect()
    }

    fn validate(&self) -> Result<(), PromptError> {
        if self.feature_values.is_empty() {
            return Err(PromptError::InvalidContext("no features".into()));
        }
        let mut names: Vec<&str> = self.feature_values.iter().map(|(n, _)| n.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(PromptError::InvalidContext(format!("feature `{}` repeated", w[0])));
        }
        if !(self.predicted > 0.0 && self.predicted < 1.0) {
            return Err(PromptError::InvalidContext(format!(
                "probability {} is outside (0, 1)",
                self.predicted
            )));
        }
        if self.observed > 1 {
            return Err(PromptError::InvalidContext(format!("outcome {}", self.observed)));
        }
        Ok(())
    }

    fn feature_table(&self) -> String {
        self.feature_values
            .iter()
            .map(|(n, v)| format!("- {n}: {v}"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn observed_text(&self) -> &'static str {
        if self.observed == 1 {
            "1 (defaulted)"
        } else {
            "0 (repaid)"
        }
    }

    fn probability_text(&self) -> String {
        format!("{:.4}", self.predicted)
    }
}

/// A training-split instance shown with its reference ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub context: InstanceContext,
    pub ranking: RankedExplanation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub mode: PromptMode,
    pub k_out: usize,
    /// Full reference ranking shown to the model (translator only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub demo_ids: Vec<usize>,
    pub template_version: u32,
    pub rendered_text: String,
}

fn check_k_out(ctx: &InstanceContext, k_out: usize) -> Result<(), PromptError> {
    ctx.validate()?;
    if k_out == 0 {
        return Err(PromptError::KOutZero);
    }
    let m = ctx.feature_values.len();
    if k_out > m {
        return Err(PromptError::KOutTooLarge { k_out, m });
    }
    Ok(())
}

fn contract(ctx: &InstanceContext, k_out: usize) -> Result<String, PromptError> {
    let vocabulary = ctx.vocabulary().join(", ");
    template::render(
        template::CONTRACT,
        &[("k_out", &k_out.to_string()), ("vocabulary", &vocabulary)],
    )
    .map(|s| s.trim_end().to_string())
}

fn check_ranking_covers(ctx: &InstanceContext, ranking: &RankedExplanation) -> Result<(), PromptError> {
    let mut expected = ctx.vocabulary();
    expected.sort();
    let mut got: Vec<String> = ranking.names().iter().map(|s| s.to_string()).collect();
    got.sort();
    if expected != got {
        return Err(PromptError::ReferenceMismatch(format!(
            "{} ranked names for {} features",
            got.len(),
            expected.len()
        )));
    }
    Ok(())
}

pub fn build_translator_prompt(
    ctx: &InstanceContext,
    reference: &RankedExplanation,
    k_out: usize,
) -> Result<PromptSpec, PromptError> {
    check_k_out(ctx, k_out)?;
    check_ranking_covers(ctx, reference)?;
    let names = reference.names();
    let list = render_numbered_list(&names);
    let text = template::render(
        template::TRANSLATOR,
        &[
            ("model", &ctx.base_model),
            ("instance_id", &ctx.instance_id.to_string()),
            ("feature_table", &ctx.feature_table()),
            ("observed", ctx.observed_text()),
            ("probability", &ctx.probability_text()),
            ("reference_ranking", list.trim_end()),
            ("contract", &contract(ctx, k_out)?),
        ],
    )?;
    Ok(PromptSpec {
        mode: PromptMode::Translator,
        k_out,
        reference: Some(names.iter().map(|s| s.to_string()).collect()),
        demo_ids: Vec::new(),
        template_version: TEMPLATE_VERSION,
        rendered_text: text,
    })
}

pub fn build_zero_shot_prompt(ctx: &InstanceContext, k_out: usize) -> Result<PromptSpec, PromptError> {
    check_k_out(ctx, k_out)?;
    let text = template::render(
        template::ZERO_SHOT,
        &[
            ("model", &ctx.base_model),
            ("instance_id", &ctx.instance_id.to_string()),
            ("feature_table", &ctx.feature_table()),
            ("observed", ctx.observed_text()),
            ("probability", &ctx.probability_text()),
            ("contract", &contract(ctx, k_out)?),
        ],
    )?;
    Ok(PromptSpec {
        mode: PromptMode::ZeroShot,
        k_out,
        reference: None,
        demo_ids: Vec::new(),
        template_version: TEMPLATE_VERSION,
        rendered_text: text,
    })
}

/// Each demonstration is followed by the top `k_out` of its reference
/// ranking, the same shape the answer must take.
pub fn build_few_shot_prompt(
    ctx: &InstanceContext,
    demos: &[Demonstration],
    k_out: usize,
) -> Result<PromptSpec, PromptError> {
    check_k_out(ctx, k_out)?;
    if demos.len() != 2 {
        return Err(PromptError::WrongDemoCount(demos.len()));
    }
    let mut blocks = String::new();
    for (i, d) in demos.iter().enumerate() {
        if d.context.instance_id == ctx.instance_id {
            return Err(PromptError::DemoCollision(d.context.instance_id));
        }
        d.context.validate()?;
        check_ranking_covers(&d.context, &d.ranking)?;
        let ranking = render_numbered_list(&d.ranking.top(k_out));
        blocks.push_str(&template::render(
            template::DEMONSTRATION,
            &[
                ("index", &(i + 1).to_string()),
                ("instance_id", &d.context.instance_id.to_string()),
                ("feature_table", &d.context.feature_table()),
                ("observed", d.context.observed_text()),
                ("probability", &d.context.probability_text()),
                ("ranking", ranking.trim_end()),
            ],
        )?);
        blocks.push('\n');
    }
    let text = template::render(
        template::FEW_SHOT,
        &[
            ("demonstrations", &blocks),
            ("model", &ctx.base_model),
            ("instance_id", &ctx.instance_id.to_string()),
            ("feature_table", &ctx.feature_table()),
            ("observed", ctx.observed_text()),
            ("probability", &ctx.probability_text()),
            ("contract", &contract(ctx, k_out)?),
        ],
    )?;
    Ok(PromptSpec {
        mode: PromptMode::FewShot,
        k_out,
        reference: None,
        demo_ids: demos.iter().map(|d| d.context.instance_id).collect(),
        template_version: TEMPLATE_VERSION,
        rendered_text: text,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemoCandidate {
    pub instance_id: usize,
    pub observed: u8,
    pub predicted: f64,
}

/// `[defaulted, repaid]` demonstration ids: the observed default with the
/// highest predicted probability and the observed repayment with the lowest,
/// ties by smaller instance id.
pub fn select_demonstrations(pool: &[DemoCandidate]) -> Result<[usize; 2], PromptError> {
    let pick = |class: u8| {
        pool.iter()
            .filter(|c| c.observed == class)
            .max_by(|a, b| {
                let conf = |c: &DemoCandidate| if class == 1 { c.predicted } else { -c.predicted };
                conf(a).total_cmp(&conf(b)).then(b.instance_id.cmp(&a.instance_id))
            })
            .map(|c| c.instance_id)
            .ok_or(PromptError::MissingClass(class))
    };
    Ok([pick(1)?, pick(0)?])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(id: usize) -> InstanceContext {
        InstanceContext {
            instance_id: id,
            feature_values: vec![
                ("loan_amnt".into(), "12,000".into()),
                ("grade".into(), "C".into()),
                ("dti".into(), "18.2".into()),
                ("purpose".into(), "debt".into()),
            ],
            observed: 1,
            predicted: 0.123456,
            base_model: "gbdt".into(),
        }
    }

    fn ranking() -> RankedExplanation {
        RankedExplanation {
            entries: vec![
                ("grade".into(), 0.9),
                ("dti".into(), -0.4),
                ("purpose".into(), 0.2),
                ("loan_amnt".into(), 0.01),
            ],
        }
    }

    fn reference_block(text: &str) -> &str {
        let start = text.find("Reference ranking").unwrap();
        let rest = &text[start..];
        &rest[..rest.find("\n\n").unwrap()]
    }

    #[test]
    fn translator_contents() {
        let p = build_translator_prompt(&ctx(7), &ranking(), 3).unwrap();
        let block = reference_block(&p.rendered_text);
        let items: Vec<&str> = block.lines().skip(1).map(|l| l.split_once(". ").unwrap().1).collect();
        for name in ["grade", "dti", "purpose", "loan_amnt"] {
            assert_eq!(items.iter().filter(|i| **i == name).count(), 1);
        }
        assert_eq!(items, vec!["grade", "dti", "purpose", "loan_amnt"]);
        assert!(p.rendered_text.contains("exactly 3 lines"));
        assert!(p.rendered_text.contains("0.1235"));
        assert!(p.rendered_text.contains("- loan_amnt: 12,000"));
        assert_eq!(p.reference.as_deref().unwrap().len(), 4);
        assert_eq!(
            build_translator_prompt(&ctx(7), &ranking(), 5),
            Err(PromptError::KOutTooLarge { k_out: 5, m: 4 })
        );
    }

    #[test]
    fn translator_rejects_partial_reference() {
        let mut r = ranking();
        r.entries.pop();
        assert!(matches!(
            build_translator_prompt(&ctx(1), &r, 2),
            Err(PromptError::ReferenceMismatch(_))
        ));
    }

    #[test]
    fn zero_shot_has_no_reference() {
        let p = build_zero_shot_prompt(&ctx(3), 4).unwrap();
        assert!(!p.rendered_text.contains("Reference ranking"));
        assert!(!p.rendered_text.contains("Example"));
        for name in ["loan_amnt", "grade", "dti", "purpose"] {
            assert!(p.rendered_text.contains(&format!("- {name}: ")));
        }
        assert!(p.rendered_text.contains("exactly 4 lines"));
    }

    #[test]
    fn few_shot_blocks_and_errors() {
        let demos = vec![
            Demonstration {
                context: ctx(10),
                ranking: ranking(),
            },
            Demonstration {
                context: InstanceContext { observed: 0, ..ctx(11) },
                ranking: ranking(),
            },
        ];
        let p = build_few_shot_prompt(&ctx(3), &demos, 2).unwrap();
        assert_eq!(p.rendered_text.lines().filter(|l| l.starts_with("Example ")).count(), 2);
        assert_eq!(p.demo_ids, vec![10, 11]);
        assert!(p.rendered_text.contains("1. grade\n2. dti\n"));
        assert!(!p.rendered_text.contains("3. purpose"));
        assert_eq!(
            build_few_shot_prompt(&ctx(3), &demos[..1], 2),
            Err(PromptError::WrongDemoCount(1))
        );
        assert_eq!(
            build_few_shot_prompt(&ctx(10), &demos, 2),
            Err(PromptError::DemoCollision(10))
        );
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = build_translator_prompt(&ctx(5), &ranking(), 4).unwrap();
        let b = build_translator_prompt(&ctx(5), &ranking(), 4).unwrap();
        assert_eq!(a.rendered_text, b.rendered_text);
    }

    #[test]
    fn invalid_context() {
        let mut c = ctx(1);
        c.predicted = 1.0;
        assert!(matches!(
            build_zero_shot_prompt(&c, 2),
            Err(PromptError::InvalidContext(_))
        ));
        let mut c = ctx(1);
        c.feature_values.push(("dti".into(), "1".into()));
        assert!(build_zero_shot_prompt(&c, 2).is_err());
    }

    #[test]
    fn demonstration_policy() {
        let pool = [
            DemoCandidate {
                instance_id: 4,
                observed: 1,
                predicted: 0.9,
            },
            DemoCandidate {
                instance_id: 2,
                observed: 1,
                predicted: 0.9,
            },
            DemoCandidate {
                instance_id: 3,
                observed: 1,
                predicted: 0.6,
            },
            DemoCandidate {
                instance_id: 8,
                observed: 0,
                predicted: 0.02,
            },
            DemoCandidate {
                instance_id: 9,
                observed: 0,
                predicted: 0.01,
            },
        ];
        assert_eq!(select_demonstrations(&pool).unwrap(), [2, 9]);
        assert_eq!(
            select_demonstrations(&pool).unwrap(),
            select_demonstrations(&pool).unwrap()
        );
        assert_eq!(select_demonstrations(&pool[..3]), Err(PromptError::MissingClass(0)));
    }
}

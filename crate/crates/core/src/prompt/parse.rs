//! Recovering a ranked feature list from free-form model output.
//!
//! The list is the first run of `<rank>. <name>` lines (a `)` after the rank
//! is also accepted). Prose before the run and everything after it is
//! ignored; blank lines inside the run are skipped, any other line ends it.
//! Markdown emphasis, list bullets and trailing annotations such as
//! `dti (debt-to-income)` or `grade: C` are tolerated.

use serde::{Deserialize, Serialize};

use super::PromptError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    UnknownFeature,
    Duplicate,
    MalformedLine,
    /// Fewer names were accepted than requested.
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// 1-based line of the reply; 0 for whole-reply findings.
    pub line: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedRanking {
    /// Accepted names, at most `k_out`, no duplicates.
    pub names: Vec<String>,
    pub violations: Vec<Violation>,
}

/// The item text of a numbered line; `None` if the line has no leading rank,
/// `Some(Err)` if it has one but no well-formed item.
fn split_numbered(line: &str) -> Option<Result<&str, ()>> {
    let t = line.trim_start();
    let t = t.strip_prefix("- ").or_else(|| t.strip_prefix("* ")).unwrap_or(t);
    let t = t.trim_start_matches("**");
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let after = &t[digits..];
    let after = after.strip_prefix("**").unwrap_or(after);
    match after.strip_prefix('.').or_else(|| after.strip_prefix(')')) {
        Some(rest) if rest.starts_with(char::is_whitespace) && !rest.trim().is_empty() => Some(Ok(rest.trim())),
        _ => Some(Err(())),
    }
}

fn strip_decoration(s: &str) -> &str {
    let mut s = s.trim();
    loop {
        let before = s;
        for wrap in ["**", "__", "`", "\"", "'", "*"] {
            if s.len() >= 2 * wrap.len() && s.starts_with(wrap) && s.ends_with(wrap) {
                s = s[wrap.len()..s.len() - wrap.len()].trim();
            } else if let Some(inner) = s.strip_prefix(wrap) {
                // opening emphasis closed before an annotation: **dti** (..)
                if let Some(close) = inner.find(wrap) {
                    s = inner[..close].trim();
                }
            }
        }
        if s == before {
            return s;
        }
    }
}

fn is_name_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Canonical vocabulary name for a list item, if any.
fn match_name<'v>(item: &str, vocabulary: &'v [String]) -> Option<&'v str> {
    let item = strip_decoration(item);
    if let Some(v) = vocabulary.iter().find(|v| v.as_str() == item) {
        return Some(v);
    }
    let lower = item.to_lowercase();
    // longest vocabulary name that the item starts with, at a word boundary
    vocabulary
        .iter()
        .filter(|v| {
            let v = v.to_lowercase();
            lower.starts_with(&v) && !lower[v.len()..].starts_with(is_name_char)
        })
        .max_by_key(|v| v.len())
        .map(String::as_str)
}

pub fn parse_ranking(text: &str, vocabulary: &[String], k_out: usize) -> Result<ParsedRanking, PromptError> {
    let mut names: Vec<String> = Vec::new();
    let mut violations = Vec::new();
    let mut in_block = false;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = split_numbered(line);
        // numbered-looking prose before the list is still prose
        if !in_block && !matches!(parsed, Some(Ok(_))) {
            continue;
        }
        match parsed {
            None => break,
            Some(Err(())) => {
                violations.push(Violation {
                    kind: ViolationKind::MalformedLine,
                    line: line_no,
                    text: line.trim().to_string(),
                });
            }
            Some(Ok(item)) => {
                in_block = true;
                match match_name(item, vocabulary) {
                    None => violations.push(Violation {
                        kind: ViolationKind::UnknownFeature,
                        line: line_no,
                        text: item.to_string(),
                    }),
                    Some(name) if names.iter().any(|n| n == name) => violations.push(Violation {
                        kind: ViolationKind::Duplicate,
                        line: line_no,
                        text: name.to_string(),
                    }),
                    Some(name) => names.push(name.to_string()),
                }
            }
        }
    }
    if names.is_empty() {
        return Err(PromptError::UnparseableReply);
    }
    names.truncate(k_out);
    if names.len() < k_out {
        violations.push(Violation {
            kind: ViolationKind::Truncated,
            line: 0,
            text: format!("{} of {k_out} names", names.len()),
        });
    }
    Ok(ParsedRanking { names, violations })
}

/// `1. a\n2. b\n...`, the format the parser reads.
pub fn render_numbered_list<S: AsRef<str>>(names: &[S]) -> String {
    let mut out = String::new();
    for (i, n) in names.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, n.as_ref()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab() -> Vec<String> {
        [
            "dti",
            "grade",
            "annual_inc",
            "int_rate",
            "term",
            "revol_util",
            "inq_last_6mths",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }

    #[test]
    fn plain_list() {
        let p = parse_ranking("1. dti\n2. grade\n3. annual_inc", &vocab(), 3).unwrap();
        assert_eq!(p.names, vec!["dti", "grade", "annual_inc"]);
        assert!(p.violations.is_empty());
    }

    #[test]
    fn unknown_and_duplicate_names() {
        let text = "1. dti\n2. credit_karma_score\n3. grade\n4. dti\n5. term";
        let p = parse_ranking(text, &vocab(), 3).unwrap();
        assert_eq!(p.names, vec!["dti", "grade", "term"]);
        let kinds: Vec<_> = p.violations.iter().map(|v| (v.kind, v.line)).collect();
        assert_eq!(
            kinds,
            vec![(ViolationKind::UnknownFeature, 2), (ViolationKind::Duplicate, 4)]
        );
    }

    #[test]
    fn prose_around_the_block_is_ignored() {
        let text = "Sure! Here is the ranking:\n\n1. **grade**\n2) `dti` (debt-to-income ratio)\n\n3. Int_Rate: 13.5%\nThat's all. 4. term";
        let p = parse_ranking(text, &vocab(), 3).unwrap();
        assert_eq!(p.names, vec!["grade", "dti", "int_rate"]);
        assert!(p.violations.is_empty());
    }

    #[test]
    fn block_ends_at_prose() {
        let text = "1. dti\nnote: also consider\n2. grade";
        let p = parse_ranking(text, &vocab(), 2).unwrap();
        assert_eq!(p.names, vec!["dti"]);
        assert_eq!(p.violations[0].kind, ViolationKind::Truncated);
    }

    #[test]
    fn malformed_numbered_lines() {
        let p = parse_ranking("1. dti\n2.grade\n3.\n4. term", &vocab(), 2).unwrap();
        assert_eq!(p.names, vec!["dti", "term"]);
        assert_eq!(
            p.violations
                .iter()
                .filter(|v| v.kind == ViolationKind::MalformedLine)
                .count(),
            2
        );
    }

    #[test]
    fn prefix_match_respects_word_boundary() {
        let mut v = vocab();
        v.push("dti_joint".into());
        let p = parse_ranking("1. dti_joint - high\n2. dti", &v, 2).unwrap();
        assert_eq!(p.names, vec!["dti_joint", "dti"]);
        assert!(parse_ranking("1. dtix", &v, 1).is_err());
    }

    #[test]
    fn nothing_usable() {
        assert!(matches!(
            parse_ranking("I cannot rank these.", &vocab(), 3),
            Err(PromptError::UnparseableReply)
        ));
        assert!(parse_ranking("1. foo\n2. bar", &vocab(), 3).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(order in Just((0..7usize).collect::<Vec<_>>()).prop_shuffle(), k in 1usize..=7) {
            let v = vocab();
            let names: Vec<&str> = order.iter().take(k).map(|&i| v[i].as_str()).collect();
            let p = parse_ranking(&render_numbered_list(&names), &v, k).unwrap();
            prop_assert_eq!(p.names, names);
            prop_assert!(p.violations.is_empty());
        }
    }
}

//! `{{slot}}` substitution over the bundled text templates.

use super::PromptError;

/// Bumped whenever any template's wording changes.
pub const TEMPLATE_VERSION: u32 = 1;

pub const CONTRACT: &str = include_str!("../../assets/templates/contract.txt");
pub const TRANSLATOR: &str = include_str!("../../assets/templates/translator.txt");
pub const ZERO_SHOT: &str = include_str!("../../assets/templates/zero_shot.txt");
pub const FEW_SHOT: &str = include_str!("../../assets/templates/few_shot.txt");
pub const DEMONSTRATION: &str = include_str!("../../assets/templates/demonstration.txt");

/// Replaces every `{{name}}`. Every slot in the template must be supplied and
/// every supplied slot must occur. Substituted text is not rescanned.
pub fn render(template: &str, slots: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() * 2);
    let mut used = vec![false; slots.len()];
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or_else(|| PromptError::Template("unclosed `{{`".into()))?;
        let name = &after[..end];
        let i = slots
            .iter()
            .position(|(n, _)| *n == name)
            .ok_or_else(|| PromptError::Template(format!("no value for slot `{name}`")))?;
        used[i] = true;
        out.push_str(slots[i].1);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    if let Some(i) = used.iter().position(|u| !u) {
        return Err(PromptError::Template(format!(
            "slot `{}` is not in the template",
            slots[i].0
        )));
    }
    Ok(out)
}

//! Offline responders used as controls and for end-to-end testing.
//!
//! One [`BotTransport`] serves every bot; the request's model id picks the
//! behaviour. All bots except the reference leak read only the prompt text.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{ChatRequest, ChatResponse, GatewayError, Transport};
use crate::prompt::render_numbered_list;

pub const ECHO: &str = "echo";
pub const SCRAMBLER: &str = "scrambler";
pub const RANDOM_PERMUTATION: &str = "random-permutation";
pub const CONSTANT_LIST: &str = "constant-list";
pub const REFERENCE_LEAK: &str = "reference-leak";

pub const BOT_MODELS: [&str; 5] = [ECHO, SCRAMBLER, RANDOM_PERMUTATION, CONSTANT_LIST, REFERENCE_LEAK];

const REFERENCE_HEADER: &str = "Reference ranking, most influential first:";
const VOCAB_PREFIX: &str = "Use only these feature names: ";
const VOCAB_SUFFIX: &str = ". Write nothing else.";

/// Reference rankings keyed by `(base model, instance id)`.
pub type ReferenceTable = BTreeMap<(String, usize), Vec<String>>;

pub struct BotTransport {
    seed: u64,
    references: Option<Arc<ReferenceTable>>,
}

impl BotTransport {
    pub fn new(seed: u64) -> Self {
        Self { seed, references: None }
    }

    /// Enables the reference-leak bot.
    pub fn with_references(mut self, table: Arc<ReferenceTable>) -> Self {
        self.references = Some(table);
        self
    }
}

/// Numbered lines under the reference header, verbatim.
pub fn reference_block(prompt: &str) -> Option<Vec<&str>> {
    let start = prompt.find(REFERENCE_HEADER)? + REFERENCE_HEADER.len();
    let lines: Vec<&str> = prompt[start..]
        .lines()
        .skip_while(|l| l.trim().is_empty())
        .take_while(|l| !l.trim().is_empty())
        .collect();
    (!lines.is_empty()).then_some(lines)
}

fn block_names<'a>(lines: &[&'a str]) -> Vec<&'a str> {
    lines
        .iter()
        .filter_map(|l| l.split_once(". ").map(|(_, n)| n.trim()))
        .collect()
}

/// `N` from the "exactly N lines" instruction.
pub fn requested_k_out(prompt: &str) -> Option<usize> {
    let rest = &prompt[prompt.rfind("exactly ")? + "exactly ".len()..];
    rest.split_whitespace().next()?.parse().ok()
}

pub fn prompt_vocabulary(prompt: &str) -> Option<Vec<String>> {
    let rest = &prompt[prompt.rfind(VOCAB_PREFIX)? + VOCAB_PREFIX.len()..];
    let list = &rest[..rest.find(VOCAB_SUFFIX)?];
    Some(list.split(", ").map(str::to_string).collect())
}

/// Base model and applicant id of the instance being asked about; with
/// demonstrations present the target comes last.
fn target_instance(prompt: &str) -> Option<(String, usize)> {
    let last_value = |prefix: &str| {
        prompt
            .lines()
            .rev()
            .find_map(|l| l.strip_prefix(prefix))
            .map(|v| v.trim().to_string())
    };
    let model = last_value("Base model: ")?;
    let id = last_value("Applicant: ")?.parse().ok()?;
    Some((model, id))
}

fn unusable(what: &str) -> GatewayError {
    GatewayError::InvalidResponse(format!("bot could not read the {what} from the prompt"))
}

impl BotTransport {
    fn reply(&self, model: &str, prompt: &str) -> Result<String, GatewayError> {
        match model {
            ECHO => Ok(match reference_block(prompt) {
                Some(lines) => lines.join("\n"),
                None => "No reference ranking was provided.".to_string(),
            }),
            SCRAMBLER => {
                let k = requested_k_out(prompt).ok_or_else(|| unusable("requested length"))?;
                let block = reference_block(prompt).ok_or_else(|| unusable("reference ranking"))?;
                let mut names = block_names(&block);
                names.truncate(k);
                names.reverse();
                Ok(render_numbered_list(&names))
            }
            RANDOM_PERMUTATION => {
                let k = requested_k_out(prompt).ok_or_else(|| unusable("requested length"))?;
                let mut vocab = prompt_vocabulary(prompt).ok_or_else(|| unusable("vocabulary"))?;
                let digest = Sha256::digest(prompt.as_bytes());
                let head = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ head);
                vocab.shuffle(&mut rng);
                vocab.truncate(k);
                Ok(render_numbered_list(&vocab))
            }
            CONSTANT_LIST => {
                let k = requested_k_out(prompt).ok_or_else(|| unusable("requested length"))?;
                let mut vocab = prompt_vocabulary(prompt).ok_or_else(|| unusable("vocabulary"))?;
                vocab.truncate(k);
                Ok(render_numbered_list(&vocab))
            }
            REFERENCE_LEAK => {
                let table = self
                    .references
                    .as_ref()
                    .ok_or_else(|| GatewayError::Config("reference-leak bot has no reference table".into()))?;
                let k = requested_k_out(prompt).ok_or_else(|| unusable("requested length"))?;
                let key = target_instance(prompt).ok_or_else(|| unusable("applicant"))?;
                let names = table
                    .get(&key)
                    .ok_or_else(|| GatewayError::Config(format!("no reference for {} applicant {}", key.0, key.1)))?;
                Ok(render_numbered_list(&names[..k.min(names.len())]))
            }
            other => Err(GatewayError::Config(format!("unknown bot `{other}`"))),
        }
    }
}

impl Transport for BotTransport {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let text = self.reply(&req.model, &req.prompt_text())?;
        Ok(ChatResponse {
            text,
            status: 200,
            latency_ms: 0,
            provider: req.provider.clone(),
            model: req.model.clone(),
        })
    }
}

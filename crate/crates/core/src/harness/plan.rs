//! The evaluation plan: what to run, against which models and LLMs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::gateway::{bots, fingerprint_value, ProviderConfig, RetryPolicy, TransportMode};
use crate::prompt::PromptMode;

/// Provider name served by the built-in offline bots.
pub const BOT_PROVIDER: &str = "bot";

/// Autonomous-mode answers are always cut to ten features.
pub const RQ2_K_OUT: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseModelRef {
    /// Label used in prompts, records and reports.
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmTarget {
    pub provider: String,
    pub model: String,
}

impl LlmTarget {
    pub fn id(&self) -> String {
        format!("{}/{}", self.provider, self.model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    #[serde(default = "default_per_cell")]
    pub per_cell: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            per_cell: default_per_cell(),
            threshold: default_threshold(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub k_out: usize,
    pub k_grid: Vec<usize>,
}

fn default_per_cell() -> usize {
    50
}

fn default_threshold() -> f64 {
    0.5
}

fn default_rq1() -> GridSpec {
    GridSpec {
        k_out: 20,
        k_grid: vec![5, 10, 15, 20],
    }
}

fn default_rq2() -> GridSpec {
    GridSpec {
        k_out: RQ2_K_OUT,
        k_grid: vec![3, 5, 10],
    }
}

fn default_modes() -> Vec<PromptMode> {
    vec![PromptMode::Translator, PromptMode::ZeroShot, PromptMode::FewShot]
}

fn default_max_tokens() -> u32 {
    512
}

fn default_workers() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalPlan {
    /// Prepared dataset directory with a saved split.
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Required in record and replay mode.
    #[serde(default)]
    pub cassette: Option<PathBuf>,
    pub transport: TransportMode,
    pub seed: u64,
    #[serde(default)]
    pub bot_seed: u64,
    #[serde(default)]
    pub sample: SampleSpec,
    pub base_models: Vec<BaseModelRef>,
    pub llms: Vec<LlmTarget>,
    #[serde(default = "default_modes")]
    pub modes: Vec<PromptMode>,
    #[serde(default = "default_rq1")]
    pub rq1: GridSpec,
    #[serde(default = "default_rq2")]
    pub rq2: GridSpec,
    /// HTTP providers; the `bot` provider is always available.
    #[serde(default)]
    pub providers: Vec<ProviderConfig>,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Concurrent calls in flight across all providers.
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl EvalPlan {
    /// Parses and validates; relative paths are taken from the plan's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut plan = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        plan.resolve_paths(base);
        Ok(plan)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let plan: EvalPlan = toml::from_str(text).map_err(|e| HarnessError::Plan(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.data_dir);
        resolve(base, &mut self.output_dir);
        if let Some(c) = self.cassette.as_mut() {
            resolve(base, c);
        }
        for m in &mut self.base_models {
            resolve(base, &mut m.path);
        }
    }

    /// SHA-256 of the plan's canonical JSON form.
    pub fn config_hash(&self) -> String {
        fingerprint_value(&serde_json::to_value(self).expect("plan serializes"))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: String| Err(HarnessError::Plan(m));
        if self.base_models.is_empty() || self.llms.is_empty() || self.modes.is_empty() {
            return fail("base_models, llms and modes must all be non-empty".into());
        }
        let mut names: Vec<&str> = self.base_models.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return fail("base model names must be unique".into());
        }
        let mut llms = self.llms.clone();
        llms.sort();
        if llms.windows(2).any(|w| w[0] == w[1]) {
            return fail("llm targets must be unique".into());
        }
        for l in &self.llms {
            if l.provider == BOT_PROVIDER {
                if !bots::BOT_MODELS.contains(&l.model.as_str()) {
                    return fail(format!(
                        "unknown bot `{}`; expected one of {:?}",
                        l.model,
                        bots::BOT_MODELS
                    ));
                }
            } else if !self.providers.iter().any(|p| p.name == l.provider) {
                return fail(format!("llm `{}` names an unconfigured provider", l.id()));
            }
        }
        if self.providers.iter().any(|p| p.name == BOT_PROVIDER) {
            return fail(format!("provider name `{BOT_PROVIDER}` is reserved"));
        }
        if self.rq2.k_out != RQ2_K_OUT {
            return fail(format!("rq2.k_out must be {RQ2_K_OUT}"));
        }
        for (label, g) in [("rq1", &self.rq1), ("rq2", &self.rq2)] {
            if g.k_grid.is_empty() {
                return fail(format!("{label}.k_grid is empty"));
            }
            if let Some(k) = g.k_grid.iter().find(|&&k| k < 2 || k > g.k_out) {
                return fail(format!("{label}.k_grid entry {k} is outside [2, k_out = {}]", g.k_out));
            }
        }
        if self.sample.per_cell == 0 {
            return fail("sample.per_cell must be positive".into());
        }
        if !(self.sample.threshold > 0.0 && self.sample.threshold < 1.0) {
            return fail(format!("sample.threshold {} is outside (0, 1)", self.sample.threshold));
        }
        if self.transport != TransportMode::Live && self.cassette.is_none() {
            return fail(format!("{:?} transport needs a cassette path", self.transport));
        }
        if self.workers == 0 {
            return fail("workers must be positive".into());
        }
        Ok(())
    }
}

//! Semantic mutation and crossover as prompt-template invocations against a
//! pluggable language-model provider, with bounded retry and seed-bank
//! fallback.

mod mock;
mod provider;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::glsl::{self, CompileBackend, Stage, ValidationLimits, ValidationReport};
use crate::seed;

pub use mock::{MockFailure, ScriptStep, ScriptedProvider, SeededMockProvider};
pub use provider::{
    Completion, OpenAiProvider, PromptRequest, Provider, ProviderError, RecordingProvider,
    ReplayProvider, TranscriptEntry,
};

pub const MUTATION_TEMPLATE: &str = include_str!("../../templates/mutation.txt");
pub const CROSSOVER_TEMPLATE: &str = include_str!("../../templates/crossover.txt");

/// Default retry budget per offspring.
pub const DEFAULT_MAX_ATTEMPTS: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Mutation,
    Crossover,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub text: &'static str,
}

impl PromptTemplate {
    pub fn get(id: TemplateId) -> Self {
        let text = match id {
            TemplateId::Mutation => MUTATION_TEMPLATE,
            TemplateId::Crossover => CROSSOVER_TEMPLATE,
        };
        PromptTemplate {
            id,
            text: text.trim_end(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("parent code is empty")]
    EmptyParent,
    #[error("crossover requires ≥ 2 parents")]
    TooFewParents,
    #[error("prompt needs ~{estimated} tokens; budget is {budget}")]
    OverBudget { estimated: usize, budget: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("temperature {0} outside [0, 2]")]
    Temperature(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Name of the environment variable holding the credential.
    pub credential_env: String,
    pub endpoint: String,
    /// Prompt budget in estimated tokens (characters / 4).
    pub prompt_token_budget: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            model: "gpt-4".into(),
            temperature: 0.9,
            max_tokens: 2048,
            credential_env: "API_KEY".into(),
            endpoint: "https://api.openai.com/v1".into(),
            prompt_token_budget: 6000,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ConfigError::Temperature(self.temperature));
        }
        Ok(())
    }
}

/// Which provider a session talks to. Stored with the session so a reload
/// reconnects to the same source; never holds a credential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSpec {
    Mock { seed: u64, failure_rate: f64 },
    OpenAi,
    Replay { path: PathBuf },
}

impl Default for ProviderSpec {
    fn default() -> Self {
        ProviderSpec::Mock {
            seed: 0,
            failure_rate: 0.0,
        }
    }
}

impl ProviderSpec {
    pub fn build(&self) -> Result<Arc<dyn Provider>, ProviderError> {
        Ok(match self {
            ProviderSpec::Mock { seed, failure_rate } => {
                Arc::new(SeededMockProvider::new(*seed, *failure_rate))
            }
            ProviderSpec::OpenAi => Arc::new(OpenAiProvider::default()),
            ProviderSpec::Replay { path } => Arc::new(ReplayProvider::open(path)?),
        })
    }
}

pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

fn code_block(code: &str) -> String {
    format!("```glsl\n{}\n```", code.trim_end())
}

/// The mutation template followed by the parent in a fenced code block.
pub fn build_mutation_prompt(parent_code: &str) -> Result<String, PromptError> {
    if parent_code.trim().is_empty() {
        return Err(PromptError::EmptyParent);
    }
    Ok(format!(
        "{}\n\n{}\n",
        PromptTemplate::get(TemplateId::Mutation).text,
        code_block(parent_code)
    ))
}

/// The crossover template followed by each parent in its own numbered block,
/// in the given order. `budget` is in estimated tokens.
pub fn build_crossover_prompt(
    parent_codes: &[&str],
    budget: Option<usize>,
) -> Result<String, PromptError> {
    if parent_codes.len() < 2 {
        return Err(PromptError::TooFewParents);
    }
    if parent_codes.iter().any(|c| c.trim().is_empty()) {
        return Err(PromptError::EmptyParent);
    }
    let mut prompt = PromptTemplate::get(TemplateId::Crossover).text.to_owned();
    for (i, code) in parent_codes.iter().enumerate() {
        prompt.push_str(&format!("\n\nShader {}:\n{}", i + 1, code_block(code)));
    }
    prompt.push('\n');
    if let Some(budget) = budget {
        let estimated = estimate_tokens(&prompt);
        if estimated > budget {
            return Err(PromptError::OverBudget { estimated, budget });
        }
    }
    Ok(prompt)
}

/// Crossover prompt over the longest prefix of `parent_codes` that fits the
/// budget. Returns the prompt and how many parents it holds.
pub fn fit_crossover_prompt(
    parent_codes: &[&str],
    budget: usize,
) -> Result<(String, usize), PromptError> {
    let mut last_err = PromptError::TooFewParents;
    for n in (2..=parent_codes.len()).rev() {
        match build_crossover_prompt(&parent_codes[..n], Some(budget)) {
            Ok(p) => return Ok((p, n)),
            Err(e @ PromptError::OverBudget { .. }) => last_err = e,
            Err(e) => return Err(e),
        }
    }
    Err(last_err)
}

/// One provider answer with timing.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub text: String,
    pub latency_ms: u64,
    pub total_tokens: Option<u64>,
}

/// One completion call. Empty replies count as failures.
pub fn request_variant(
    provider: &dyn Provider,
    request: &PromptRequest,
    cfg: &ProviderConfig,
) -> Result<Variant, ProviderError> {
    let started = Instant::now();
    let completion = provider.complete(request, cfg)?;
    let latency_ms = started.elapsed().as_millis() as u64;
    if completion.text.trim().is_empty() {
        return Err(ProviderError::Empty);
    }
    Ok(Variant {
        text: completion.text,
        latency_ms,
        total_tokens: completion.total_tokens,
    })
}

/// Everything an offspring generation needs besides the prompt.
#[derive(Clone, Copy)]
pub struct OffspringContext<'a> {
    pub provider: &'a dyn Provider,
    pub config: &'a ProviderConfig,
    pub limits: &'a ValidationLimits,
    pub backend: &'a dyn CompileBackend,
    pub max_attempts: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffspringResult {
    pub genome_code: String,
    pub attempts_used: u32,
    pub fell_back: bool,
    /// One report per attempt, in order.
    pub reports: Vec<ValidationReport>,
    pub latency_ms: u64,
    pub total_tokens: Option<u64>,
}

impl OffspringResult {
    /// Report of the admitted code.
    pub fn final_report(&self, limits: &ValidationLimits) -> ValidationReport {
        match self.reports.last() {
            Some(r) if r.ok => r.clone(),
            _ => glsl::check_source(&self.genome_code, limits),
        }
    }
}

/// Requests a variant up to `max_attempts` times, running each reply through
/// the validation pipeline. The first valid candidate wins; if none passes,
/// `fallback_code` is returned with `fell_back` set. Failures never escape.
pub fn generate_valid_offspring(
    ctx: &OffspringContext<'_>,
    template: TemplateId,
    prompt: &str,
    request_seed: u64,
    fallback_code: &str,
) -> OffspringResult {
    debug_assert!(glsl::check_source(fallback_code, ctx.limits).ok);
    let max_attempts = ctx.max_attempts.max(1);
    let mut reports = Vec::with_capacity(max_attempts as usize);
    let mut latency_ms = 0;
    let mut total_tokens: Option<u64> = None;

    for attempt in 1..=max_attempts {
        let request = PromptRequest {
            template,
            prompt: prompt.to_owned(),
            temperature: ctx.config.temperature,
            seed: seed::derive(request_seed, &[attempt as u64]),
        };
        let variant = match request_variant(ctx.provider, &request, ctx.config) {
            Ok(v) => v,
            Err(e) => {
                log::debug!("attempt {attempt}: provider failure: {e}");
                reports.push(ValidationReport::failed(Stage::Provider, vec![e.to_string()], 0));
                continue;
            }
        };
        latency_ms += variant.latency_ms;
        if let Some(t) = variant.total_tokens {
            *total_tokens.get_or_insert(0) += t;
        }
        match glsl::validate_candidate(&variant.text, ctx.limits, ctx.backend) {
            Ok(valid) => {
                reports.push(valid.report);
                return OffspringResult {
                    genome_code: valid.shader.user_code,
                    attempts_used: attempt,
                    fell_back: false,
                    reports,
                    latency_ms,
                    total_tokens,
                };
            }
            Err(report) => {
                log::debug!("attempt {attempt}: rejected at {:?}", report.stage_failed);
                reports.push(report);
            }
        }
    }

    OffspringResult {
        genome_code: fallback_code.to_owned(),
        attempts_used: max_attempts,
        fell_back: true,
        reports,
        latency_ms,
        total_tokens,
    }
}

//! Offline providers for tests and headless runs.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{LazyLock, Mutex};

use regex::Regex;

use super::provider::{Completion, PromptRequest, Provider, ProviderError};
use super::{ProviderConfig, TemplateId};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub enum ScriptStep {
    Respond(String),
    Fail(ProviderError),
}

/// Replays a fixed list of answers in order and records each request.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    script: Mutex<VecDeque<ScriptStep>>,
    requests: Mutex<Vec<PromptRequest>>,
}

impl ScriptedProvider {
    pub fn new(script: Vec<ScriptStep>) -> Self {
        ScriptedProvider {
            script: Mutex::new(script.into()),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.requests.lock().unwrap().len()
    }

    pub fn requests(&self) -> Vec<PromptRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, req: &PromptRequest, _cfg: &ProviderConfig) -> Result<Completion, ProviderError> {
        self.requests.lock().unwrap().push(req.clone());
        match self.script.lock().unwrap().pop_front() {
            Some(ScriptStep::Respond(text)) => Ok(Completion {
                text,
                total_tokens: None,
            }),
            Some(ScriptStep::Fail(e)) => Err(e),
            None => Err(ProviderError::Transport("script exhausted".into())),
        }
    }
}

/// Kinds of bad answer the seeded mock produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockFailure {
    Transport,
    ProseOnly,
    UnbalancedBrace,
    Sampler,
    Empty,
}

const FAILURES: [MockFailure; 5] = [
    MockFailure::Transport,
    MockFailure::ProseOnly,
    MockFailure::UnbalancedBrace,
    MockFailure::Sampler,
    MockFailure::Empty,
];

static CODE_BLOCK: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)```glsl\n(.*?)\n```").unwrap());
static FLOAT_LITERAL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b\d+\.\d+\b").unwrap());

/// Deterministic stand-in for a language model. Each answer is a pure
/// function of the mock seed, the request seed and the prompt: a fraction
/// `failure_rate` of requests get a bad answer, the rest get one of the
/// prompt's shaders with a tagged header line and one nudged constant.
#[derive(Debug)]
pub struct SeededMockProvider {
    seed: u64,
    failure_rate: f64,
    mutation_calls: AtomicUsize,
    crossover_calls: AtomicUsize,
}

impl SeededMockProvider {
    pub fn new(seed: u64, failure_rate: f64) -> Self {
        SeededMockProvider {
            seed,
            failure_rate: failure_rate.clamp(0.0, 1.0),
            mutation_calls: AtomicUsize::new(0),
            crossover_calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self, template: TemplateId) -> usize {
        match template {
            TemplateId::Mutation => self.mutation_calls.load(Ordering::Relaxed),
            TemplateId::Crossover => self.crossover_calls.load(Ordering::Relaxed),
        }
    }

    /// The failure this mock will produce for `request_seed`, if any.
    pub fn failure_for(&self, request_seed: u64) -> Option<MockFailure> {
        let s = seed::derive(self.seed, &[request_seed]);
        if seed::unit_f64(seed::derive(s, &[1])) < self.failure_rate {
            Some(FAILURES[(seed::derive(s, &[2]) % FAILURES.len() as u64) as usize])
        } else {
            None
        }
    }

    fn variant(&self, s: u64, prompt: &str) -> Option<String> {
        let blocks: Vec<&str> = CODE_BLOCK
            .captures_iter(prompt)
            .map(|c| c.get(1).unwrap().as_str())
            .collect();
        if blocks.is_empty() {
            return None;
        }
        let base = blocks[(seed::derive(s, &[3]) % blocks.len() as u64) as usize];
        let body = match base.split_once('\n') {
            Some((first, rest)) if first.starts_with("// variant ") => rest,
            _ => base,
        };
        let floats: Vec<_> = FLOAT_LITERAL.find_iter(body).collect();
        let mut code = String::with_capacity(body.len() + 32);
        code.push_str(&format!("// variant {:016x}\n", seed::derive(s, &[4])));
        if floats.is_empty() {
            code.push_str(body);
        } else {
            let m = floats[(seed::derive(s, &[5]) % floats.len() as u64) as usize];
            let v: f64 = m.as_str().parse().unwrap_or(1.0);
            let factor = 0.8 + 0.4 * seed::unit_f64(seed::derive(s, &[6]));
            code.push_str(&body[..m.start()]);
            code.push_str(&format!("{:.3}", v * factor));
            code.push_str(&body[m.end()..]);
        }
        Some(code)
    }
}

impl Provider for SeededMockProvider {
    fn complete(&self, req: &PromptRequest, _cfg: &ProviderConfig) -> Result<Completion, ProviderError> {
        match req.template {
            TemplateId::Mutation => self.mutation_calls.fetch_add(1, Ordering::Relaxed),
            TemplateId::Crossover => self.crossover_calls.fetch_add(1, Ordering::Relaxed),
        };
        let s = seed::derive(self.seed, &[req.seed]);
        let failure = self.failure_for(req.seed);
        if failure == Some(MockFailure::Transport) {
            return Err(ProviderError::Transport("mock connection reset".into()));
        }
        let Some(mut code) = self.variant(s, &req.prompt) else {
            return Ok(Completion {
                text: "I could not find a shader in your message.".into(),
                total_tokens: Some(12),
            });
        };
        let text = match failure {
            Some(MockFailure::ProseOnly) => {
                "I'm sorry, but I can't help with that request.".to_owned()
            }
            Some(MockFailure::Empty) => String::new(),
            Some(MockFailure::UnbalancedBrace) => {
                if let Some(i) = code.rfind('}') {
                    code.remove(i);
                }
                code
            }
            Some(MockFailure::Sampler) => format!("uniform sampler2D iChannel0;\n{code}"),
            _ => match seed::derive(s, &[7]) % 3 {
                0 => code,
                1 => format!("```glsl\n{code}```\n"),
                _ => format!(
                    "Here is an improved variant:\n\n```glsl\n{code}```\n\nThe new version adds motion."
                ),
            },
        };
        Ok(Completion {
            total_tokens: Some((req.prompt.len() + text.len()) as u64 / 4),
            text,
        })
    }
}

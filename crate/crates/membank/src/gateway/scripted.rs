//! Deterministic scripted backend.
//!
//! A scripted backend holds an ordered rule list. Each rule pairs a matcher
//! (predicate over tag and request text) with a response source. The first
//! matching rule wins; an unmatched request is an error, never fabricated
//! output. Rule counters are serialized internally so a fixed request sequence
//! yields a fixed response sequence.

use super::{check_budget, Backend, GatewayError, GenerationRequest, PromptTag};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Mutex;

type MatcherFn = Box<dyn Fn(&GenerationRequest) -> bool + Send + Sync>;
type GeneratorFn = Box<dyn Fn(&GenerationRequest, u64, u64) -> String + Send + Sync>;

/// Where a matched rule's response text comes from.
pub enum ScriptedResponse {
    /// Same text on every match.
    Fixed(String),
    /// Indexed by the rule's match counter; the last entry repeats once the
    /// sequence is exhausted.
    Sequence(Vec<String>),
    /// Closure receiving (request, match counter, backend seed).
    Generator(GeneratorFn),
}

/// One matcher/response pair.
pub struct ScriptedRule {
    matcher: MatcherFn,
    response: ScriptedResponse,
}

impl ScriptedRule {
    pub fn new(
        matcher: impl Fn(&GenerationRequest) -> bool + Send + Sync + 'static,
        response: ScriptedResponse,
    ) -> Self {
        ScriptedRule { matcher: Box::new(matcher), response }
    }

    /// Match any request carrying `tag`.
    pub fn on_tag(tag: PromptTag, response: impl Into<String>) -> Self {
        Self::new(move |req| req.tag == tag, ScriptedResponse::Fixed(response.into()))
    }

    /// Match requests carrying `tag` whose flattened text contains every
    /// `needles` entry.
    pub fn on_tag_containing<S: Into<String>>(
        tag: PromptTag,
        needles: impl IntoIterator<Item = S>,
        response: ScriptedResponse,
    ) -> Self {
        let needles: Vec<String> = needles.into_iter().map(Into::into).collect();
        Self::new(
            move |req| {
                if req.tag != tag {
                    return false;
                }
                let text = req.full_text();
                needles.iter().all(|n| text.contains(n.as_str()))
            },
            response,
        )
    }
}

/// Deterministic rule-driven backend for tests and offline runs.
pub struct ScriptedBackend {
    rules: Vec<ScriptedRule>,
    seed: u64,
    // One counter per rule, bumped under the lock on each match.
    counters: Mutex<Vec<u64>>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptedRule>) -> Self {
        Self::with_seed(rules, 0)
    }

    pub fn with_seed(rules: Vec<ScriptedRule>, seed: u64) -> Self {
        let counters = Mutex::new(vec![0; rules.len()]);
        ScriptedBackend { rules, seed, counters }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Load from a declarative script file (see [`ScriptFile`]).
    pub fn from_script_file(path: &Path) -> Result<Self, ScriptError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScriptError::Io { path: path.display().to_string(), source: e })?;
        let file: ScriptFile = serde_json::from_str(&text)
            .map_err(|e| ScriptError::Parse { path: path.display().to_string(), source: e })?;
        Ok(file.into_backend())
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &GenerationRequest) -> Result<String, GatewayError> {
        let mut counters = self.counters.lock().unwrap();
        for (idx, rule) in self.rules.iter().enumerate() {
            if !(rule.matcher)(request) {
                continue;
            }
            let n = counters[idx];
            counters[idx] += 1;
            let text = match &rule.response {
                ScriptedResponse::Fixed(text) => text.clone(),
                ScriptedResponse::Sequence(seq) => {
                    let i = (n as usize).min(seq.len().saturating_sub(1));
                    seq.get(i).cloned().unwrap_or_default()
                }
                ScriptedResponse::Generator(f) => f(request, n, self.seed),
            };
            return check_budget(text, request);
        }
        let full = request.full_text();
        let excerpt: String = full.chars().take(160).collect();
        Err(GatewayError::UnscriptedRequest { tag: request.tag.as_str(), excerpt })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("cannot read script {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse script {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
}

/// Declarative on-disk form of a scripted backend.
///
/// ```json
/// {
///   "seed": 0,
///   "rules": [
///     {"tag": "judge", "contains": ["Answer: 42"], "response": {"fixed": "Success"}},
///     {"tag": "act", "response": {"sequence": ["ACTION: stop"]}}
///   ]
/// }
/// ```
///
/// A rule matches when the tag (if given) equals the request tag, every
/// `contains` entry appears in the flattened request text, and no
/// `not_contains` entry does.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptFile {
    #[serde(default)]
    pub seed: u64,
    pub rules: Vec<ScriptRuleDef>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRuleDef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<PromptTag>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub not_contains: Vec<String>,
    pub response: ScriptResponseDef,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptResponseDef {
    Fixed(String),
    Sequence(Vec<String>),
}

impl ScriptFile {
    pub fn into_backend(self) -> ScriptedBackend {
        let rules = self
            .rules
            .into_iter()
            .map(|def| {
                let ScriptRuleDef { tag, contains, not_contains, response } = def;
                let response = match response {
                    ScriptResponseDef::Fixed(text) => ScriptedResponse::Fixed(text),
                    ScriptResponseDef::Sequence(seq) => ScriptedResponse::Sequence(seq),
                };
                ScriptedRule::new(
                    move |req: &GenerationRequest| {
                        if let Some(tag) = tag {
                            if req.tag != tag {
                                return false;
                            }
                        }
                        let text = req.full_text();
                        contains.iter().all(|n| text.contains(n.as_str()))
                            && !not_contains.iter().any(|n| text.contains(n.as_str()))
                    },
                    response,
                )
            })
            .collect();
        ScriptedBackend::with_seed(rules, self.seed)
    }
}

//! Uniform contract for text-generation backends.
//!
//! A [`Backend`] turns a [`GenerationRequest`] into text. Two implementations
//! ship here: a deterministic [`scripted::ScriptedBackend`] for tests and
//! offline experiments, and a generic JSON-over-HTTP [`http::HttpBackend`] for
//! real models. [`RecordingBackend`] wraps any backend and keeps the full
//! request/response log for audits.

mod http;
mod scripted;
mod templates;

pub use http::{HttpBackend, HttpBackendConfig};
pub use scripted::{
    ScriptError, ScriptFile, ScriptResponseDef, ScriptRuleDef, ScriptedBackend, ScriptedResponse,
    ScriptedRule,
};
pub use templates::{build_prompt, tag_for_template, TemplateStore, TEMPLATE_TAGS};

use serde::{Deserialize, Serialize};
use std::sync::Mutex;
use thiserror::Error;

/// Routing/logging label carried by every generation request. Each tag has a
/// default sampling temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptTag {
    /// Next-action requests inside an episode.
    Act,
    /// Memory extraction from a finished trajectory.
    Extract,
    /// Binary success/failure judging.
    Judge,
    /// Self-contrast extraction over multiple rollouts.
    Contrast,
    /// Sequential-scaling refinement rounds.
    Refine,
    /// Best-of-N trajectory selection.
    Select,
}

impl PromptTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptTag::Act => "act",
            PromptTag::Extract => "extract",
            PromptTag::Judge => "judge",
            PromptTag::Contrast => "contrast",
            PromptTag::Refine => "refine",
            PromptTag::Select => "select",
        }
    }
}

/// Per-tag sampling temperatures. Defaults: act 0.7, extract 1.0, judge 0.0,
/// select 0.0, contrast 1.0, refine 0.7. All overridable via configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Temperatures {
    pub act: f64,
    pub extract: f64,
    pub judge: f64,
    pub select: f64,
    pub contrast: f64,
    pub refine: f64,
}

impl Default for Temperatures {
    fn default() -> Self {
        Temperatures {
            act: 0.7,
            extract: 1.0,
            judge: 0.0,
            select: 0.0,
            contrast: 1.0,
            refine: 0.7,
        }
    }
}

impl Temperatures {
    pub fn for_tag(&self, tag: PromptTag) -> f64 {
        match tag {
            PromptTag::Act => self.act,
            PromptTag::Extract => self.extract,
            PromptTag::Judge => self.judge,
            PromptTag::Select => self.select,
            PromptTag::Contrast => self.contrast,
            PromptTag::Refine => self.refine,
        }
    }
}

/// Message role in a chat-shaped request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

impl Message {
    pub fn user(text: impl Into<String>) -> Self {
        Message { role: Role::User, text: text.into() }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Message { role: Role::Assistant, text: text.into() }
    }
}

/// Default character budget for a single completion.
pub const DEFAULT_MAX_OUTPUT: usize = 16_384;

/// One text-generation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub system_instruction: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    /// Output budget in characters; a longer backend response is an error.
    pub max_output: usize,
    pub tag: PromptTag,
}

impl GenerationRequest {
    /// Single-shot request: the filled template is the system instruction and
    /// the message list is empty. Temperature comes from the tag defaults.
    pub fn single_shot(tag: PromptTag, system: impl Into<String>, temps: &Temperatures) -> Self {
        GenerationRequest {
            system_instruction: system.into(),
            messages: Vec::new(),
            temperature: temps.for_tag(tag),
            max_output: DEFAULT_MAX_OUTPUT,
            tag,
        }
    }

    /// Flattened view of the whole request, used by scripted matchers and
    /// request logs.
    pub fn full_text(&self) -> String {
        let mut out = self.system_instruction.clone();
        for msg in &self.messages {
            out.push('\n');
            out.push_str(match msg.role {
                Role::User => "user: ",
                Role::Assistant => "assistant: ",
            });
            out.push_str(&msg.text);
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    /// Scripted backend received a request no rule matches. Fails closed so
    /// tests cannot pass on accidental garbage.
    #[error("unscripted request (tag={tag}): {excerpt}")]
    UnscriptedRequest { tag: &'static str, excerpt: String },

    /// Transport failed after the configured number of retries.
    #[error("transport failure after {attempts} attempt(s): {detail}")]
    Transport { attempts: u32, detail: String },

    /// Backend produced more output than the request budget allows.
    #[error("output budget exceeded: {got} chars > {budget}")]
    BudgetExceeded { got: usize, budget: usize },

    #[error("unknown template id: {0}")]
    UnknownTemplate(String),

    #[error("template {template}: missing slot {{{{{slot}}}}}")]
    MissingSlot { template: String, slot: String },

    #[error("template directory error: {0}")]
    TemplateIo(#[from] std::io::Error),
}

/// A text-generation backend. Implementations must be shareable across
/// concurrent rollouts.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &GenerationRequest) -> Result<String, GatewayError>;
}

/// Wraps a backend and records every request/response pair. The log doubles as
/// the prompt audit trail for scaling artifacts and tests.
pub struct RecordingBackend<B> {
    inner: B,
    log: Mutex<Vec<(GenerationRequest, Result<String, String>)>>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend { inner, log: Mutex::new(Vec::new()) }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    /// Snapshot of the request log in arrival order.
    pub fn requests(&self) -> Vec<GenerationRequest> {
        self.log.lock().unwrap().iter().map(|(req, _)| req.clone()).collect()
    }

    /// Snapshot of successful exchanges in arrival order.
    pub fn exchanges(&self) -> Vec<(GenerationRequest, String)> {
        self.log
            .lock()
            .unwrap()
            .iter()
            .filter_map(|(req, res)| res.as_ref().ok().map(|r| (req.clone(), r.clone())))
            .collect()
    }

    pub fn clear(&self) {
        self.log.lock().unwrap().clear();
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn complete(&self, request: &GenerationRequest) -> Result<String, GatewayError> {
        let result = self.inner.complete(request);
        let logged = match &result {
            Ok(text) => Ok(text.clone()),
            Err(err) => Err(err.to_string()),
        };
        self.log.lock().unwrap().push((request.clone(), logged));
        result
    }
}

impl<B: Backend> Backend for &B {
    fn complete(&self, request: &GenerationRequest) -> Result<String, GatewayError> {
        (*self).complete(request)
    }
}

impl Backend for Box<dyn Backend> {
    fn complete(&self, request: &GenerationRequest) -> Result<String, GatewayError> {
        self.as_ref().complete(request)
    }
}

/// Enforce the request's output budget on a backend response.
pub(crate) fn check_budget(text: String, request: &GenerationRequest) -> Result<String, GatewayError> {
    let got = text.chars().count();
    if got > request.max_output {
        return Err(GatewayError::BudgetExceeded { got, budget: request.max_output });
    }
    Ok(text)
}

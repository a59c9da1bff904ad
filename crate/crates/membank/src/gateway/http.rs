//! Generic JSON-over-HTTP chat backend.
//!
//! One request shape for any model server: POST to the configured endpoint
//! with `{model, system, messages, temperature, max_output}`, expect
//! `{"text": ...}` back. Auth token (if any) is read from the environment
//! variable named in the config, never from the config file itself.

use super::{check_budget, Backend, GatewayError, GenerationRequest, Role};
use serde::{Deserialize, Serialize};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: Option<String>,
    pub timeout_secs: u64,
    /// Retries after the first attempt, on transport errors and 5xx only.
    pub max_retries: u32,
    /// Base backoff, doubled per retry.
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        HttpBackendConfig {
            endpoint: String::new(),
            model: String::new(),
            auth_env: None,
            timeout_secs: 120,
            max_retries: 2,
            backoff_ms: 200,
            max_in_flight: 4,
        }
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    text: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    system: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_output: usize,
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
    token: Option<String>,
    gate: InFlightGate,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .expect("client builder with static options");
        let token = config.auth_env.as_ref().and_then(|name| std::env::var(name).ok());
        let gate = InFlightGate::new(config.max_in_flight.max(1));
        HttpBackend { config, client, token, gate }
    }

    fn send_once(&self, request: &GenerationRequest) -> Result<String, SendError> {
        let body = WireRequest {
            model: &self.config.model,
            system: &request.system_instruction,
            messages: request
                .messages
                .iter()
                .map(|m| WireMessage {
                    role: match m.role {
                        Role::User => "user",
                        Role::Assistant => "assistant",
                    },
                    text: &m.text,
                })
                .collect(),
            temperature: request.temperature,
            max_output: request.max_output,
        };
        let mut builder = self.client.post(&self.config.endpoint).json(&body);
        if let Some(token) = &self.token {
            builder = builder.bearer_auth(token);
        }
        let response = builder.send().map_err(|e| SendError::Retryable(e.to_string()))?;
        let status = response.status();
        if status.is_server_error() {
            return Err(SendError::Retryable(format!("server status {status}")));
        }
        if !status.is_success() {
            return Err(SendError::Fatal(format!("status {status}")));
        }
        let parsed: WireResponse = response
            .json()
            .map_err(|e| SendError::Fatal(format!("malformed response body: {e}")))?;
        Ok(parsed.text)
    }
}

enum SendError {
    Retryable(String),
    Fatal(String),
}

impl Backend for HttpBackend {
    fn complete(&self, request: &GenerationRequest) -> Result<String, GatewayError> {
        let _permit = self.gate.acquire();
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            match self.send_once(request) {
                Ok(text) => return check_budget(text, request),
                Err(SendError::Fatal(detail)) => {
                    return Err(GatewayError::Transport { attempts, detail })
                }
                Err(SendError::Retryable(detail)) => {
                    if attempts > self.config.max_retries {
                        return Err(GatewayError::Transport { attempts, detail });
                    }
                    let wait = self.config.backoff_ms << (attempts - 1).min(16);
                    log::warn!(
                        "transport failure (attempt {attempts}), retrying in {wait}ms: {detail}"
                    );
                    std::thread::sleep(Duration::from_millis(wait));
                }
            }
        }
    }
}

/// Counting gate bounding concurrent requests.
struct InFlightGate {
    state: Mutex<usize>,
    cond: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a InFlightGate);

impl InFlightGate {
    fn new(limit: usize) -> Self {
        InFlightGate { state: Mutex::new(0), cond: Condvar::new(), limit }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut in_flight = self.state.lock().unwrap();
        while *in_flight >= self.limit {
            in_flight = self.cond.wait(in_flight).unwrap();
        }
        *in_flight += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut in_flight = self.0.state.lock().unwrap();
        *in_flight -= 1;
        self.0.cond.notify_one();
    }
}

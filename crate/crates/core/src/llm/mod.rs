//! Text-generation backend contract, prompt templates and the bounded
//! retry harness shared by every agent role.

mod http;
mod mock;
mod protocol;
mod template;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpBackend;
pub use mock::{word_count, CountingBackend, FnBackend};
pub use protocol::{protocol_mock, protocol_reply, PROTOCOL_MOCK_ID};
pub use template::{Template, TemplateError, TemplateSet};

/// Attempts per call: the first try plus two retries.
pub const DEFAULT_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub prompt: String,
    pub temperature: f32,
    pub max_tokens: u32,
}

impl LlmRequest {
    /// Pipeline calls always decode greedily.
    pub fn new(prompt: impl Into<String>, max_tokens: u32) -> Self {
        LlmRequest {
            prompt: prompt.into(),
            temperature: 0.0,
            max_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmReply {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("could not decode backend reply: {0}")]
    Decode(String),
    #[error("environment variable `{0}` is not set")]
    MissingCredential(String),
    #[error("{0}")]
    Other(String),
}

pub trait LlmBackend: Send + Sync {
    fn identity(&self) -> &str;
    fn complete(&self, request: &LlmRequest) -> Result<LlmReply, BackendError>;
}

impl<T: LlmBackend + ?Sized> LlmBackend for &T {
    fn identity(&self) -> &str {
        (**self).identity()
    }
    fn complete(&self, request: &LlmRequest) -> Result<LlmReply, BackendError> {
        (**self).complete(request)
    }
}

impl<T: LlmBackend + ?Sized> LlmBackend for std::sync::Arc<T> {
    fn identity(&self) -> &str {
        (**self).identity()
    }
    fn complete(&self, request: &LlmRequest) -> Result<LlmReply, BackendError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }

    pub fn add(&mut self, other: TokenUsage) {
        self.calls += other.calls;
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
    }
}

impl std::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> Self {
        let mut total = TokenUsage::default();
        for u in iter {
            total.add(u);
        }
        total
    }
}

/// One backend invocation as recorded in traces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub attempt: usize,
    pub input_tokens: u64,
    pub output_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn usage_of(calls: &[CallRecord]) -> TokenUsage {
    TokenUsage {
        calls: calls.len() as u64,
        input_tokens: calls.iter().map(|c| c.input_tokens).sum(),
        output_tokens: calls.iter().map(|c| c.output_tokens).sum(),
    }
}

/// Outcome of a retried call: the parsed value or the last error, plus
/// every attempt made.
#[derive(Debug, Clone)]
pub struct Attempted<T> {
    pub result: Result<T, String>,
    pub calls: Vec<CallRecord>,
}

/// Sends the same request up to `attempts` times until `parse` accepts the
/// reply. Transport failures and parse failures both consume an attempt.
pub fn call_with_retry<T, B, F>(
    backend: &B,
    request: &LlmRequest,
    attempts: usize,
    mut parse: F,
) -> Attempted<T>
where
    B: LlmBackend + ?Sized,
    F: FnMut(&str) -> Result<T, String>,
{
    let mut calls = Vec::new();
    let mut last = String::from("no attempts made");
    for attempt in 1..=attempts.max(1) {
        match backend.complete(request) {
            Ok(reply) => {
                let parsed = parse(&reply.text);
                calls.push(CallRecord {
                    attempt,
                    input_tokens: reply.input_tokens,
                    output_tokens: reply.output_tokens,
                    reply: Some(reply.text),
                    error: parsed.as_ref().err().cloned(),
                });
                match parsed {
                    Ok(v) => return Attempted { result: Ok(v), calls },
                    Err(e) => last = e,
                }
            }
            Err(e) => {
                last = e.to_string();
                calls.push(CallRecord {
                    attempt,
                    input_tokens: 0,
                    output_tokens: 0,
                    reply: None,
                    error: Some(last.clone()),
                });
            }
        }
        log::debug!("{} attempt {attempt} failed: {last}", backend.identity());
    }
    Attempted {
        result: Err(last),
        calls,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retry_stops_on_success() {
        let backend = CountingBackend::new(FnBackend::new("m", |p: &str| p.to_uppercase()));
        let out = call_with_retry(&backend, &LlmRequest::new("ok now", 10), 3, |t| {
            if t == "OK NOW" {
                Ok(1)
            } else {
                Err("bad".into())
            }
        });
        assert_eq!(out.result, Ok(1));
        assert_eq!(out.calls.len(), 1);
        assert_eq!(backend.calls(), 1);
        assert_eq!(usage_of(&out.calls), TokenUsage { calls: 1, input_tokens: 2, output_tokens: 2 });
    }

    #[test]
    fn retry_exhausts() {
        let backend = FnBackend::new("m", |_: &str| "prose".to_string());
        let out: Attempted<()> =
            call_with_retry(&backend, &LlmRequest::new("x", 10), DEFAULT_ATTEMPTS, |_| Err("nope".into()));
        assert_eq!(out.result, Err("nope".into()));
        assert_eq!(out.calls.len(), 3);
    }

    #[test]
    fn requests_are_greedy() {
        assert_eq!(LlmRequest::new("p", 5).temperature, 0.0);
    }
}

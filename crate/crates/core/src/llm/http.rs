use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, LlmBackend, LlmReply, LlmRequest};

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f32,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireReply {
    text: String,
    #[serde(default)]
    input_tokens: u64,
    #[serde(default)]
    output_tokens: u64,
}

/// Remote generation backend speaking the JSON completion protocol.
///
/// The bearer token, if any, is read from the named environment variable
/// at construction time.
pub struct HttpBackend {
    identity: String,
    model: String,
    endpoint: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        token_env: Option<&str>,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        let token = match token_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| BackendError::MissingCredential(var.to_string()))?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let model = model.into();
        Ok(HttpBackend {
            identity: format!("http:{model}"),
            model,
            endpoint: endpoint.into(),
            token,
            client,
        })
    }
}

impl LlmBackend for HttpBackend {
    fn identity(&self) -> &str {
        &self.identity
    }

    fn complete(&self, request: &LlmRequest) -> Result<LlmReply, BackendError> {
        let body = WireRequest {
            model: &self.model,
            prompt: &request.prompt,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: resp.text().unwrap_or_default(),
            });
        }
        let wire: WireReply = resp.json().map_err(|e| BackendError::Decode(e.to_string()))?;
        Ok(LlmReply {
            text: wire.text,
            input_tokens: wire.input_tokens,
            output_tokens: wire.output_tokens,
        })
    }
}

//! HTTP clients for the model server's `/info`, `/embed` and `/topics`
//! endpoints.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::embed::{check_vectors, Embedding, EmbeddingProvider};
use super::topic::TopicClassifier;
use super::RetrievalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoReply {
    pub embed_model: String,
    pub embed_dimension: usize,
    pub topic_model: String,
    pub domain_order: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedReply {
    pub vectors: Vec<Vec<f32>>,
    pub dimension: usize,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicReply {
    pub logits: Vec<f64>,
    pub domain_order: Vec<String>,
    pub model_id: String,
}

fn client(timeout: Duration) -> Result<reqwest::blocking::Client, RetrievalError> {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| RetrievalError::Backend(e.to_string()))
}

fn post<Req: Serialize, Rep: for<'de> Deserialize<'de>>(
    client: &reqwest::blocking::Client,
    url: &str,
    body: &Req,
) -> Result<Rep, RetrievalError> {
    let resp = client
        .post(url)
        .json(body)
        .send()
        .map_err(|e| RetrievalError::Backend(format!("{url}: {e}")))?;
    let status = resp.status();
    if !status.is_success() {
        return Err(RetrievalError::Backend(format!(
            "{url}: HTTP {} {}",
            status.as_u16(),
            resp.text().unwrap_or_default()
        )));
    }
    resp.json().map_err(|e| RetrievalError::Backend(format!("{url}: {e}")))
}

pub fn fetch_info(base_url: &str, timeout: Duration) -> Result<InfoReply, RetrievalError> {
    let url = format!("{}/info", base_url.trim_end_matches('/'));
    let resp = client(timeout)?
        .get(&url)
        .send()
        .map_err(|e| RetrievalError::Backend(format!("{url}: {e}")))?;
    if !resp.status().is_success() {
        return Err(RetrievalError::Backend(format!("{url}: HTTP {}", resp.status().as_u16())));
    }
    resp.json().map_err(|e| RetrievalError::Backend(format!("{url}: {e}")))
}

/// Embedding provider backed by a model server.
pub struct RemoteEmbedder {
    base_url: String,
    identity: String,
    dimension: usize,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    /// Queries `/info` once to learn the model identity and dimension.
    pub fn connect(base_url: &str, timeout: Duration) -> Result<Self, RetrievalError> {
        let info = fetch_info(base_url, timeout)?;
        Ok(RemoteEmbedder {
            base_url: base_url.trim_end_matches('/').to_string(),
            identity: info.embed_model,
            dimension: info.embed_dimension,
            client: client(timeout)?,
        })
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn identity(&self) -> &str {
        &self.identity
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, RetrievalError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let req = EmbedRequest {
            texts: texts.iter().map(|s| s.to_string()).collect(),
        };
        let reply: EmbedReply = post(&self.client, &format!("{}/embed", self.base_url), &req)?;
        if reply.model_id != self.identity {
            return Err(RetrievalError::Backend(format!(
                "server model changed from `{}` to `{}`",
                self.identity, reply.model_id
            )));
        }
        if reply.dimension != self.dimension {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dimension,
                got: reply.dimension,
            });
        }
        check_vectors(&reply.vectors, texts.len(), self.dimension)?;
        Ok(reply.vectors)
    }
}

/// Topic classifier backed by a model server.
pub struct RemoteTopicClassifier {
    base_url: String,
    identity: String,
    domains: Vec<String>,
    client: reqwest::blocking::Client,
}

impl RemoteTopicClassifier {
    pub fn connect(base_url: &str, timeout: Duration) -> Result<Self, RetrievalError> {
        let info = fetch_info(base_url, timeout)?;
        Ok(RemoteTopicClassifier {
            base_url: base_url.trim_end_matches('/').to_string(),
            identity: info.topic_model,
            domains: info.domain_order,
            client: client(timeout)?,
        })
    }
}

impl TopicClassifier for RemoteTopicClassifier {
    fn identity(&self) -> &str {
        &self.identity
    }

    fn domains(&self) -> Vec<String> {
        self.domains.clone()
    }

    fn logits(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
        let reply: TopicReply = post(
            &self.client,
            &format!("{}/topics", self.base_url),
            &TopicRequest { text: text.to_string() },
        )?;
        if reply.domain_order != self.domains {
            return Err(RetrievalError::Classifier("domain order differs from /info".into()));
        }
        if reply.logits.len() != self.domains.len() {
            return Err(RetrievalError::Classifier(format!(
                "expected {} logits, got {}",
                self.domains.len(),
                reply.logits.len()
            )));
        }
        Ok(reply.logits)
    }
}

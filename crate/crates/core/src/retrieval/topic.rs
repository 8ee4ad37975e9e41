//! Domain classifiers: the contract and the embedding-similarity scorer
//! that also serves as the fallback.

use super::embed::{cosine, Embedding, EmbeddingProvider};
use super::RetrievalError;
use crate::ontology::Taxonomy;

/// Scores a query against a fixed list of domains.
pub trait TopicClassifier: Send + Sync {
    fn identity(&self) -> &str;
    /// Domain names in the order logits are returned.
    fn domains(&self) -> Vec<String>;
    fn logits(&self, text: &str) -> Result<Vec<f64>, RetrievalError>;
}

/// Scores each domain by cosine similarity between the query and the
/// domain's description text.
pub struct SimilarityTopicScorer<P> {
    identity: String,
    provider: P,
    domains: Vec<String>,
    vectors: Vec<Embedding>,
}

impl<P: EmbeddingProvider> SimilarityTopicScorer<P> {
    pub fn new(provider: P, tax: &Taxonomy) -> Result<Self, RetrievalError> {
        let texts: Vec<String> = tax.domains().iter().map(|d| tax.domain_text(d)).collect();
        let refs: Vec<&str> = texts.iter().map(|s| s.as_str()).collect();
        let vectors = provider.embed_batch(&refs)?;
        Ok(SimilarityTopicScorer {
            identity: format!("similarity:{}", provider.identity()),
            domains: tax.domains().iter().map(|d| d.name.clone()).collect(),
            provider,
            vectors,
        })
    }
}

impl<P: EmbeddingProvider> TopicClassifier for SimilarityTopicScorer<P> {
    fn identity(&self) -> &str {
        &self.identity
    }

    fn domains(&self) -> Vec<String> {
        self.domains.clone()
    }

    fn logits(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
        let q = self.provider.embed(text)?;
        Ok(self.vectors.iter().map(|v| cosine(&q, v)).collect())
    }
}

/// Classifier returning fixed logits; handy for tests and replays.
pub struct FixedLogits {
    pub domains: Vec<String>,
    pub logits: Vec<f64>,
}

impl TopicClassifier for FixedLogits {
    fn identity(&self) -> &str {
        "fixed-logits"
    }

    fn domains(&self) -> Vec<String> {
        self.domains.clone()
    }

    fn logits(&self, _text: &str) -> Result<Vec<f64>, RetrievalError> {
        Ok(self.logits.clone())
    }
}

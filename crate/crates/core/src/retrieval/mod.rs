//! Query-time retrieval: domain selection, category selection, ontology
//! triple scoring and similar-individual lookup.

mod embed;
mod remote;
mod topic;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, ValueProfile};
use crate::ontology::{normalize_name, Ontology, OntologyTriple, Taxonomy};

pub use embed::{
    check_vectors, cosine, decode_vector, embed_cached, encode_vector, Embedding, EmbeddingCache,
    EmbeddingProvider, HashEmbedder,
};
pub use remote::{
    fetch_info, EmbedReply, EmbedRequest, InfoReply, RemoteEmbedder, RemoteTopicClassifier,
    TopicReply, TopicRequest,
};
pub use topic::{FixedLogits, SimilarityTopicScorer, TopicClassifier};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RetrievalError {
    #[error("retrieval backend error: {0}")]
    Backend(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding contains non-finite values")]
    NonFinite,
    #[error("topic classifier error: {0}")]
    Classifier(String),
    #[error("embedding cache error: {0}")]
    Cache(String),
    #[error("{what} must be at least 1")]
    InvalidSize { what: &'static str },
    #[error("nothing to retrieve from: {0}")]
    Empty(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredName {
    pub name: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTriple {
    pub triple: OntologyTriple,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRespondent {
    pub respondent_id: String,
    pub score: f64,
}

/// Indices of the `k` largest scores, highest first; equal scores keep
/// their input order.
pub fn top_k_stable(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx.truncate(k);
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSelection {
    pub domains: Vec<ScoredName>,
    pub fallback_used: bool,
    pub warnings: Vec<String>,
}

fn aligned_logits(
    clf: &dyn TopicClassifier,
    q: &str,
    tax: &Taxonomy,
) -> Result<Vec<f64>, RetrievalError> {
    let logits = clf.logits(q)?;
    let order = clf.domains();
    if logits.len() != order.len() {
        return Err(RetrievalError::Classifier(format!(
            "{} logits for {} domains",
            logits.len(),
            order.len()
        )));
    }
    let by_name: HashMap<String, f64> = order.iter().map(|d| normalize_name(d)).zip(logits).collect();
    tax.domains()
        .iter()
        .map(|d| match by_name.get(&normalize_name(&d.name)) {
            Some(v) if v.is_finite() => Ok(*v),
            Some(_) => Err(RetrievalError::Classifier(format!("non-finite logit for `{}`", d.name))),
            None => Err(RetrievalError::Classifier(format!("no logit for `{}`", d.name))),
        })
        .collect()
}

/// The `k` highest-scoring domains, ties broken by taxonomy order. Falls
/// back to `fallback` when the classifier fails or returns bad logits.
pub fn select_domains(
    q: &str,
    clf: &dyn TopicClassifier,
    fallback: &dyn TopicClassifier,
    tax: &Taxonomy,
    k: usize,
) -> Result<DomainSelection, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidSize { what: "k" });
    }
    let mut warnings = Vec::new();
    let n = tax.domains().len();
    let k = if k > n {
        warnings.push(format!("k={k} exceeds {n} domains; clamped"));
        n
    } else {
        k
    };
    let (scores, fallback_used) = match aligned_logits(clf, q, tax) {
        Ok(s) => (s, false),
        Err(e) => {
            warnings.push(format!("topic classifier failed ({e}); using similarity fallback"));
            (aligned_logits(fallback, q, tax)?, true)
        }
    };
    let domains = top_k_stable(&scores, k)
        .into_iter()
        .map(|i| ScoredName {
            name: tax.domains()[i].name.clone(),
            score: scores[i],
        })
        .collect();
    Ok(DomainSelection {
        domains,
        fallback_used,
        warnings,
    })
}

/// Embeddings of every category's `name: description` text, in taxonomy
/// order.
#[derive(Debug, Clone)]
pub struct CategoryIndex {
    pub names: Vec<String>,
    pub parents: Vec<String>,
    pub vectors: Vec<Embedding>,
}

impl CategoryIndex {
    pub fn build(
        tax: &Taxonomy,
        provider: &dyn EmbeddingProvider,
        cache: &EmbeddingCache,
    ) -> Result<Self, RetrievalError> {
        let texts: Vec<String> = tax.categories().iter().map(|c| tax.category_text(c)).collect();
        let refs: Vec<&str> = texts.iter().map(|s| s.as_str()).collect();
        Ok(CategoryIndex {
            names: tax.categories().iter().map(|c| c.name.clone()).collect(),
            parents: tax.categories().iter().map(|c| c.parent.clone()).collect(),
            vectors: cache.embed_many(&refs, provider)?,
        })
    }
}

/// Top `p` categories under the selected domains by similarity to the
/// query, ties broken by taxonomy order.
pub fn select_categories(
    query: &[f32],
    index: &CategoryIndex,
    domains: &[String],
    p: usize,
) -> Vec<ScoredName> {
    let wanted: BTreeSet<String> = domains.iter().map(|d| normalize_name(d)).collect();
    let pool: Vec<usize> = (0..index.names.len())
        .filter(|&i| wanted.contains(&normalize_name(&index.parents[i])))
        .collect();
    let scores: Vec<f64> = pool.iter().map(|&i| cosine(query, &index.vectors[i])).collect();
    top_k_stable(&scores, p)
        .into_iter()
        .map(|j| ScoredName {
            name: index.names[pool[j]].clone(),
            score: scores[j],
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripleMode {
    /// Up to `per_category_cap` triples incident to each selected category.
    #[default]
    PerCategory,
    /// Top `max_triples` among triples with both endpoints selected.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TripleSelection {
    pub mode: TripleMode,
    pub per_category_cap: usize,
    pub max_triples: usize,
}

impl Default for TripleSelection {
    fn default() -> Self {
        TripleSelection {
            mode: TripleMode::PerCategory,
            per_category_cap: 3,
            max_triples: 3,
        }
    }
}

/// Relevance of a triple: the larger of its endpoints' relevance, taken
/// over the endpoints that have one.
pub fn triple_score(subject: Option<f64>, object: Option<f64>) -> Option<f64> {
    match (subject, object) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, b) => a.or(b),
    }
}

fn by_score_then_key(a: &ScoredTriple, b: &ScoredTriple) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.triple.key().cmp(&b.triple.key()))
}

/// Scores ontology triples against the selected categories and selects
/// them per `cfg`. Output is ordered by score, then triple key.
pub fn score_and_select_triples(
    triples: &[OntologyTriple],
    categories: &[ScoredName],
    cfg: &TripleSelection,
) -> Vec<ScoredTriple> {
    let alpha: HashMap<&str, f64> = categories.iter().map(|c| (c.name.as_str(), c.score)).collect();
    let endpoint = |name: &str| alpha.get(name).copied();
    let mut out: Vec<ScoredTriple> = match cfg.mode {
        TripleMode::Global => {
            let mut eligible: Vec<ScoredTriple> = triples
                .iter()
                .filter_map(|t| {
                    let (a, b) = (endpoint(&t.subject_class)?, endpoint(&t.object_class)?);
                    Some(ScoredTriple {
                        triple: t.clone(),
                        score: a.max(b),
                    })
                })
                .collect();
            eligible.sort_by(by_score_then_key);
            eligible.truncate(cfg.max_triples);
            eligible
        }
        TripleMode::PerCategory => {
            let mut chosen: BTreeMap<_, ScoredTriple> = BTreeMap::new();
            for c in categories {
                let mut incident: Vec<ScoredTriple> = triples
                    .iter()
                    .filter(|t| t.subject_class == c.name || t.object_class == c.name)
                    .filter_map(|t| {
                        Some(ScoredTriple {
                            triple: t.clone(),
                            score: triple_score(endpoint(&t.subject_class), endpoint(&t.object_class))?,
                        })
                    })
                    .collect();
                incident.sort_by(by_score_then_key);
                for st in incident.into_iter().take(cfg.per_category_cap) {
                    chosen.entry(st.triple.key()).or_insert(st);
                }
            }
            chosen.into_values().collect()
        }
    };
    out.sort_by(by_score_then_key);
    out
}

/// `key: value; ...` in key order.
pub fn render_demographic_description(demographics: &BTreeMap<String, String>) -> String {
    demographics
        .iter()
        .map(|(k, v)| format!("{k}: {v}"))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Demographic embeddings of every respondent, sorted by respondent id.
#[derive(Debug, Clone)]
pub struct DemographicIndex {
    pub ids: Vec<String>,
    pub vectors: Vec<Embedding>,
}

impl DemographicIndex {
    pub fn build(
        corpus: &Corpus,
        provider: &dyn EmbeddingProvider,
        cache: &EmbeddingCache,
    ) -> Result<Self, RetrievalError> {
        let mut recs: Vec<_> = corpus.records().iter().collect();
        recs.sort_by(|a, b| a.respondent_id.cmp(&b.respondent_id));
        let texts: Vec<String> = recs.iter().map(|r| render_demographic_description(&r.demographics)).collect();
        let refs: Vec<&str> = texts.iter().map(|s| s.as_str()).collect();
        Ok(DemographicIndex {
            ids: recs.iter().map(|r| r.respondent_id.clone()).collect(),
            vectors: cache.embed_many(&refs, provider)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarIndividuals {
    pub hits: Vec<ScoredRespondent>,
    pub warnings: Vec<String>,
}

/// Top `k` respondents by demographic similarity, ties by respondent id.
pub fn retrieve_similar_individuals(
    target: &[f32],
    index: &DemographicIndex,
    k: usize,
) -> Result<SimilarIndividuals, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidSize { what: "K" });
    }
    if index.ids.is_empty() {
        return Err(RetrievalError::Empty("corpus"));
    }
    let mut warnings = Vec::new();
    if k > index.ids.len() {
        warnings.push(format!("K={k} exceeds corpus size {}; returning all", index.ids.len()));
    }
    let scores: Vec<f64> = index.vectors.iter().map(|v| cosine(target, v)).collect();
    let hits = top_k_stable(&scores, k)
        .into_iter()
        .map(|i| ScoredRespondent {
            respondent_id: index.ids[i].clone(),
            score: scores[i],
        })
        .collect();
    Ok(SimilarIndividuals { hits, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalSizes {
    pub k: usize,
    pub p: usize,
    pub triples: TripleSelection,
    #[serde(rename = "K")]
    pub individuals: usize,
}

impl Default for RetrievalSizes {
    fn default() -> Self {
        RetrievalSizes {
            k: 1,
            p: 3,
            triples: TripleSelection::default(),
            individuals: 5,
        }
    }
}

/// Everything retrieved for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalContext {
    pub query: String,
    pub target_demographics: BTreeMap<String, String>,
    pub domains: Vec<ScoredName>,
    pub categories: Vec<ScoredName>,
    pub triples: Vec<ScoredTriple>,
    pub individuals: Vec<ScoredRespondent>,
    pub profiles: Vec<ValueProfile>,
    pub sizes: RetrievalSizes,
    pub domain_fallback: bool,
    pub warnings: Vec<String>,
}

/// Bundles the stores and providers needed to build a
/// [`RetrievalContext`].
pub struct Retriever {
    pub taxonomy: Taxonomy,
    pub ontology: Ontology,
    pub corpus: Corpus,
    pub profiles: BTreeMap<String, ValueProfile>,
    pub provider: Arc<dyn EmbeddingProvider>,
    pub classifier: Arc<dyn TopicClassifier>,
    pub fallback: Arc<dyn TopicClassifier>,
    pub cache: Arc<EmbeddingCache>,
    categories: CategoryIndex,
    demographics: DemographicIndex,
}

impl Retriever {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        taxonomy: Taxonomy,
        ontology: Ontology,
        corpus: Corpus,
        profiles: BTreeMap<String, ValueProfile>,
        provider: Arc<dyn EmbeddingProvider>,
        classifier: Arc<dyn TopicClassifier>,
        fallback: Arc<dyn TopicClassifier>,
        cache: Arc<EmbeddingCache>,
    ) -> Result<Self, RetrievalError> {
        let categories = CategoryIndex::build(&taxonomy, provider.as_ref(), &cache)?;
        let demographics = DemographicIndex::build(&corpus, provider.as_ref(), &cache)?;
        Ok(Retriever {
            taxonomy,
            ontology,
            corpus,
            profiles,
            provider,
            classifier,
            fallback,
            cache,
            categories,
            demographics,
        })
    }

    pub fn retrieve(
        &self,
        query: &str,
        target: &BTreeMap<String, String>,
        sizes: &RetrievalSizes,
    ) -> Result<RetrievalContext, RetrievalError> {
        if sizes.p == 0 {
            return Err(RetrievalError::InvalidSize { what: "p" });
        }
        let sel = select_domains(
            query,
            self.classifier.as_ref(),
            self.fallback.as_ref(),
            &self.taxonomy,
            sizes.k,
        )?;
        let mut warnings = sel.warnings;
        let e_q = embed_cached(query, self.provider.as_ref(), &self.cache)?;
        let domain_names: Vec<String> = sel.domains.iter().map(|d| d.name.clone()).collect();
        let categories = select_categories(&e_q, &self.categories, &domain_names, sizes.p);
        let triples = score_and_select_triples(self.ontology.triples(), &categories, &sizes.triples);
        let e_d = embed_cached(&render_demographic_description(target), self.provider.as_ref(), &self.cache)?;
        let similar = retrieve_similar_individuals(&e_d, &self.demographics, sizes.individuals)?;
        warnings.extend(similar.warnings);
        let profiles = similar
            .hits
            .iter()
            .map(|h| {
                self.profiles.get(&h.respondent_id).cloned().unwrap_or_else(|| {
                    warnings.push(format!("no value profile for `{}`", h.respondent_id));
                    ValueProfile {
                        respondent_id: h.respondent_id.clone(),
                        ..Default::default()
                    }
                })
            })
            .collect();
        Ok(RetrievalContext {
            query: query.to_string(),
            target_demographics: target.clone(),
            domains: sel.domains,
            categories,
            triples,
            individuals: similar.hits,
            profiles,
            sizes: *sizes,
            domain_fallback: sel.fallback_used,
            warnings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(tax: &Taxonomy) -> Vec<String> {
        tax.domains().iter().map(|d| d.name.clone()).collect()
    }

    #[test]
    fn argmax_domain() {
        let tax = Taxonomy::default_wvs();
        let mut logits = vec![0.0; 12];
        logits[0] = 0.9;
        logits[1] = 0.1;
        let clf = FixedLogits { domains: names(&tax), logits };
        let sel = select_domains("q", &clf, &clf, &tax, 1).unwrap();
        assert_eq!(sel.domains[0].name, tax.domains()[0].name);
        let all = select_domains("q", &clf, &clf, &tax, 12).unwrap();
        assert_eq!(all.domains.len(), 12);
        let clamped = select_domains("q", &clf, &clf, &tax, 20).unwrap();
        assert_eq!(clamped.domains.len(), 12);
        assert_eq!(clamped.warnings.len(), 1);
    }

    #[test]
    fn tie_prefers_lower_index() {
        let tax = Taxonomy::default_wvs();
        let mut logits = vec![0.0; 12];
        logits[3] = 0.5;
        logits[7] = 0.5;
        let clf = FixedLogits { domains: names(&tax), logits };
        let sel = select_domains("q", &clf, &clf, &tax, 1).unwrap();
        assert_eq!(sel.domains[0].name, tax.domains()[3].name);
    }

    #[test]
    fn classifier_failure_falls_back() {
        let tax = Taxonomy::default_wvs();
        let bad = FixedLogits {
            domains: names(&tax),
            logits: vec![f64::NAN; 12],
        };
        let mut good_logits = vec![0.0; 12];
        good_logits[5] = 1.0;
        let good = FixedLogits {
            domains: names(&tax),
            logits: good_logits,
        };
        let sel = select_domains("q", &bad, &good, &tax, 1).unwrap();
        assert!(sel.fallback_used);
        assert_eq!(sel.domains[0].name, tax.domains()[5].name);
    }

    #[test]
    fn category_self_similarity_ranks_first() {
        let tax = Taxonomy::default_wvs();
        let e = HashEmbedder::new(256);
        let idx = CategoryIndex::build(&tax, &e, &EmbeddingCache::in_memory()).unwrap();
        let domain = tax.domains()[2].name.clone();
        let target = tax.categories_of(&domain).nth(1).unwrap();
        let q = e.embed_one(&tax.category_text(target));
        let got = select_categories(&q, &idx, &[domain], 3);
        assert_eq!(got[0].name, target.name);
        assert!((got[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn triple_law_and_empty_selection() {
        assert_eq!(triple_score(Some(0.2), Some(0.7)), Some(0.7));
        assert_eq!(triple_score(None, Some(0.3)), Some(0.3));
        assert_eq!(triple_score(None, None), None);
        let t = OntologyTriple::new("A", "r", "A r B", "B");
        let f = vec![ScoredName { name: "C".into(), score: 1.0 }];
        assert!(score_and_select_triples(&[t], &f, &TripleSelection::default()).is_empty());
    }

    #[test]
    fn demographic_rendering() {
        let mut m = BTreeMap::new();
        m.insert("country".to_string(), "KR".to_string());
        m.insert("age".to_string(), "34".to_string());
        assert_eq!(render_demographic_description(&m), "age: 34; country: KR");
        assert_eq!(render_demographic_description(&BTreeMap::new()), "");
    }

    #[test]
    fn k_larger_than_corpus_warns() {
        let e = HashEmbedder::new(32);
        let idx = DemographicIndex {
            ids: vec!["a".into(), "b".into(), "c".into()],
            vectors: vec![e.embed_one("age: 30"), e.embed_one("age: 40"), e.embed_one("age: 30")],
        };
        let got = retrieve_similar_individuals(&e.embed_one("age: 30"), &idx, 5).unwrap();
        assert_eq!(got.hits.len(), 3);
        assert_eq!(got.warnings.len(), 1);
        assert_eq!(got.hits[0].respondent_id, "a");
        assert_eq!(got.hits[1].respondent_id, "c");
    }
}

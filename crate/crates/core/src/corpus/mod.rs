//! Respondent records, value profiles and the profile store.

mod profile;
mod store;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::ontology::Taxonomy;

pub use profile::{
    build_profile, filter_profile, parse_profile_reply, CoverageFlag, DomainFailure, DroppedKey,
    ProfileDiagnostics, ProfileError, ProfileOptions, ValueProfile,
};
pub use store::{ProfileStore, StoreError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("duplicate respondent id `{0}`")]
    DuplicateRespondent(String),
    #[error("respondent `{respondent_id}` answer `{question_id}` names unknown domain `{domain}`")]
    UnknownDomain {
        respondent_id: String,
        question_id: String,
        domain: String,
    },
    #[error("corpus line {line}: {message}")]
    BadRecord { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    /// Value domain the question belongs to.
    pub category: String,
    pub question: String,
    #[serde(deserialize_with = "scalar_string")]
    pub response: String,
    /// Optional fine-grained category tag used for coverage checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subcategory: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RespondentRecord {
    pub respondent_id: String,
    #[serde(default)]
    pub region: String,
    #[serde(default, deserialize_with = "scalar_map")]
    pub demographics: BTreeMap<String, String>,
    #[serde(default)]
    pub answers: BTreeMap<String, Answer>,
}

impl RespondentRecord {
    /// Answers grouped by domain, in domain then question-id order.
    pub fn answers_by_domain(&self) -> BTreeMap<&str, Vec<(&str, &Answer)>> {
        let mut out: BTreeMap<&str, Vec<(&str, &Answer)>> = BTreeMap::new();
        for (qid, a) in &self.answers {
            out.entry(a.category.as_str()).or_default().push((qid.as_str(), a));
        }
        out
    }
}

fn scalar_to_string(v: serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn scalar_string<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    let v = serde_json::Value::deserialize(d)?;
    scalar_to_string(v).ok_or_else(|| serde::de::Error::custom("expected a string, number or boolean"))
}

fn scalar_map<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, String>, D::Error> {
    let m = BTreeMap::<String, serde_json::Value>::deserialize(d)?;
    let mut out = BTreeMap::new();
    for (k, v) in m {
        match v {
            serde_json::Value::Null => {}
            v => {
                let s = scalar_to_string(v)
                    .ok_or_else(|| serde::de::Error::custom(format!("demographic `{k}` is not a scalar")))?;
                out.insert(k, s);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestMode {
    /// Records with unknown domains are skipped with a warning.
    #[default]
    Lenient,
    Strict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedRecord {
    pub respondent_id: String,
    pub reason: String,
}

/// Respondent records indexed by id and region.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    records: Vec<RespondentRecord>,
    by_id: HashMap<String, usize>,
    by_region: BTreeMap<String, Vec<usize>>,
    skipped: Vec<SkippedRecord>,
}

pub fn parse_records_jsonl(text: &str) -> Result<Vec<RespondentRecord>, CorpusError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CorpusError::BadRecord {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Indexes records, canonicalizing each answer's domain name.
pub fn ingest_corpus(
    records: impl IntoIterator<Item = RespondentRecord>,
    tax: &Taxonomy,
    mode: IngestMode,
) -> Result<Corpus, CorpusError> {
    let mut corpus = Corpus::default();
    'records: for mut rec in records {
        if corpus.by_id.contains_key(&rec.respondent_id) {
            return Err(CorpusError::DuplicateRespondent(rec.respondent_id));
        }
        for (qid, a) in rec.answers.iter_mut() {
            match tax.domain(&a.category) {
                Some(d) => a.category = d.name.clone(),
                None => {
                    let err = CorpusError::UnknownDomain {
                        respondent_id: rec.respondent_id.clone(),
                        question_id: qid.clone(),
                        domain: a.category.clone(),
                    };
                    if mode == IngestMode::Strict {
                        return Err(err);
                    }
                    log::warn!("skipping record: {err}");
                    corpus.skipped.push(SkippedRecord {
                        respondent_id: rec.respondent_id.clone(),
                        reason: err.to_string(),
                    });
                    continue 'records;
                }
            }
        }
        let idx = corpus.records.len();
        corpus.by_id.insert(rec.respondent_id.clone(), idx);
        corpus.by_region.entry(rec.region.clone()).or_default().push(idx);
        corpus.records.push(rec);
    }
    Ok(corpus)
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in ingestion order.
    pub fn records(&self) -> &[RespondentRecord] {
        &self.records
    }

    pub fn get(&self, respondent_id: &str) -> Option<&RespondentRecord> {
        self.by_id.get(respondent_id).map(|&i| &self.records[i])
    }

    pub fn regions(&self) -> impl Iterator<Item = &str> {
        self.by_region.keys().map(|s| s.as_str())
    }

    pub fn in_region<'a>(&'a self, region: &str) -> impl Iterator<Item = &'a RespondentRecord> + 'a {
        self.by_region
            .get(region)
            .into_iter()
            .flatten()
            .map(move |&i| &self.records[i])
    }

    pub fn region_counts(&self) -> BTreeMap<String, usize> {
        self.by_region.iter().map(|(k, v)| (k.clone(), v.len())).collect()
    }

    pub fn skipped(&self) -> &[SkippedRecord] {
        &self.skipped
    }
}

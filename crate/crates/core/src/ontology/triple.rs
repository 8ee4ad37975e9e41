use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::taxonomy::normalize_name;

/// Where a triple came from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Generated {
        cq_id: String,
        respondent_id: String,
        region: String,
    },
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripleStatus {
    Candidate,
    Approved,
    Edited,
    Rejected,
}

impl TripleStatus {
    pub fn is_curated(self) -> bool {
        matches!(self, TripleStatus::Approved | TripleStatus::Edited)
    }
}

/// An ordered relation between two taxonomy classes, carried both as a
/// snake_case relation name and as an English sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologyTriple {
    pub subject_class: String,
    pub relation: String,
    pub label_sentence: String,
    pub object_class: String,
    #[serde(default)]
    pub provenance: Vec<Provenance>,
    pub status: TripleStatus,
}

impl OntologyTriple {
    pub fn new(
        subject_class: impl Into<String>,
        relation: impl Into<String>,
        label_sentence: impl Into<String>,
        object_class: impl Into<String>,
    ) -> Self {
        OntologyTriple {
            subject_class: subject_class.into(),
            relation: relation.into(),
            label_sentence: label_sentence.into(),
            object_class: object_class.into(),
            provenance: Vec::new(),
            status: TripleStatus::Candidate,
        }
    }

    pub fn key(&self) -> TripleKey {
        TripleKey::new(&self.subject_class, &self.relation, &self.object_class)
    }

    pub fn with_provenance(mut self, p: Provenance) -> Self {
        self.provenance.push(p);
        self
    }

    pub fn with_status(mut self, status: TripleStatus) -> Self {
        self.status = status;
        self
    }
}

/// Normalized `(subject, relation, object)` identity of a triple.
///
/// Rendered as `subject|relation|object` in decision files.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TripleKey {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl TripleKey {
    pub fn new(subject: &str, relation: &str, object: &str) -> Self {
        TripleKey {
            subject: normalize_name(subject),
            relation: normalize_name(relation),
            object: normalize_name(object),
        }
    }
}

impl fmt::Display for TripleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}|{}", self.subject, self.relation, self.object)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("triple key must have the form `subject|relation|object`, got `{0}`")]
pub struct BadTripleKey(pub String);

impl FromStr for TripleKey {
    type Err = BadTripleKey;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('|').collect();
        match parts.as_slice() {
            [a, b, c] if !a.trim().is_empty() && !b.trim().is_empty() && !c.trim().is_empty() => {
                Ok(TripleKey::new(a, b, c))
            }
            _ => Err(BadTripleKey(s.to_string())),
        }
    }
}

impl Serialize for TripleKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TripleKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_normalizes_case_and_whitespace() {
        let a = TripleKey::new("Generalized  Trust", "fundamentally_underpin", "Outgroup Tolerance");
        let b: TripleKey = "generalized trust|fundamentally_underpin|outgroup tolerance"
            .parse()
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_string(), "generalized trust|fundamentally_underpin|outgroup tolerance");
    }

    #[test]
    fn bad_keys_rejected() {
        assert!("a|b".parse::<TripleKey>().is_err());
        assert!("a||c".parse::<TripleKey>().is_err());
    }
}

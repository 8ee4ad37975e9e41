//! Deduplication of candidate triples and application of review decisions.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::taxonomy::Taxonomy;
use super::triple::{OntologyTriple, TripleKey, TripleStatus};
use super::validate::{validate_triple, ValidationReport};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConsolidateError {
    #[error("decision references unknown candidate `{0}`")]
    UnknownCandidate(TripleKey),
    #[error("conflicting decisions for `{0}`")]
    ConflictingDecisions(TripleKey),
    #[error("edit decision for `{0}` changes neither relation nor label")]
    EmptyEdit(TripleKey),
    #[error("decisions line {line}: {message}")]
    BadDecisionLine { line: usize, message: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OntologyError {
    #[error("triple endpoint `{0}` is not a taxonomy class")]
    UnknownClass(String),
    #[error("duplicate curated triple `{0}`")]
    DuplicateTriple(TripleKey),
    #[error("triple `{0}` is not curated")]
    NotCurated(TripleKey),
    #[error("ontology line {line}: {message}")]
    BadLine { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewAction {
    Accept,
    Reject,
    Edit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub key: TripleKey,
    pub action: ReviewAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_relation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_label: Option<String>,
}

impl ReviewDecision {
    pub fn accept(key: TripleKey) -> Self {
        ReviewDecision {
            key,
            action: ReviewAction::Accept,
            new_relation: None,
            new_label: None,
        }
    }

    pub fn reject(key: TripleKey) -> Self {
        ReviewDecision {
            key,
            action: ReviewAction::Reject,
            new_relation: None,
            new_label: None,
        }
    }

    pub fn edit(key: TripleKey, new_relation: Option<String>, new_label: Option<String>) -> Self {
        ReviewDecision {
            key,
            action: ReviewAction::Edit,
            new_relation,
            new_label,
        }
    }
}

/// Ordered list of review decisions, stored one JSON object per line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReviewDecisions(pub Vec<ReviewDecision>);

impl ReviewDecisions {
    pub fn parse_jsonl(text: &str) -> Result<Self, ConsolidateError> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let d = serde_json::from_str(line).map_err(|e| ConsolidateError::BadDecisionLine {
                line: i + 1,
                message: e.to_string(),
            })?;
            out.push(d);
        }
        Ok(ReviewDecisions(out))
    }

    pub fn to_jsonl(&self) -> String {
        self.0
            .iter()
            .map(|d| serde_json::to_string(d).expect("decision serializes") + "\n")
            .collect()
    }
}

/// A curated triple set bound to its taxonomy.
#[derive(Debug, Clone, PartialEq)]
pub struct Ontology {
    taxonomy: Taxonomy,
    triples: Vec<OntologyTriple>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologyStats {
    pub triples: usize,
    pub directed_pairs: usize,
    pub unordered_pairs: usize,
    pub classes_used: usize,
}

impl Ontology {
    /// Builds an ontology from curated triples, canonicalizing endpoint names
    /// and ordering triples by key.
    pub fn new(taxonomy: Taxonomy, triples: Vec<OntologyTriple>) -> Result<Self, OntologyError> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(triples.len());
        for mut t in triples {
            if !t.status.is_curated() {
                return Err(OntologyError::NotCurated(t.key()));
            }
            for end in [&mut t.subject_class, &mut t.object_class] {
                let (name, _) = taxonomy
                    .resolve_class(end)
                    .ok_or_else(|| OntologyError::UnknownClass(end.clone()))?;
                *end = name.to_string();
            }
            if !seen.insert(t.key()) {
                return Err(OntologyError::DuplicateTriple(t.key()));
            }
            out.push(t);
        }
        out.sort_by_key(|t| t.key());
        Ok(Ontology {
            taxonomy,
            triples: out,
        })
    }

    pub fn empty(taxonomy: Taxonomy) -> Self {
        Ontology {
            taxonomy,
            triples: Vec::new(),
        }
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    /// Curated triples in key order.
    pub fn triples(&self) -> &[OntologyTriple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn stats(&self) -> OntologyStats {
        let mut directed = BTreeSet::new();
        let mut unordered = BTreeSet::new();
        let mut classes = BTreeSet::new();
        for t in &self.triples {
            let (a, b) = (t.subject_class.as_str(), t.object_class.as_str());
            directed.insert((a, b));
            unordered.insert(if a <= b { (a, b) } else { (b, a) });
            classes.insert(a);
            classes.insert(b);
        }
        OntologyStats {
            triples: self.triples.len(),
            directed_pairs: directed.len(),
            unordered_pairs: unordered.len(),
            classes_used: classes.len(),
        }
    }

    pub fn to_jsonl(&self) -> String {
        self.triples
            .iter()
            .map(|t| serde_json::to_string(t).expect("triple serializes") + "\n")
            .collect()
    }

    pub fn from_jsonl(taxonomy: Taxonomy, text: &str) -> Result<Self, OntologyError> {
        let mut triples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let t = serde_json::from_str(line).map_err(|e| OntologyError::BadLine {
                line: i + 1,
                message: e.to_string(),
            })?;
            triples.push(t);
        }
        Ontology::new(taxonomy, triples)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditViolation {
    pub key: TripleKey,
    pub report: ValidationReport,
}

/// Outcome of applying review decisions to a candidate pool.
#[derive(Debug, Clone)]
pub struct Consolidation {
    pub ontology: Ontology,
    /// Deduplicated candidates with no decision, or whose decision produced an
    /// invalid triple.
    pub pending: Vec<OntologyTriple>,
    pub rejected: Vec<TripleKey>,
    pub edit_violations: Vec<EditViolation>,
    /// Number of input candidates folded into an earlier duplicate.
    pub duplicates_merged: usize,
}

/// Merges candidates sharing a normalized key.
///
/// The result is independent of input order: candidates are grouped by key,
/// the surviving label is the one belonging to the smallest
/// (provenance, label) pair, and provenance lists are merged in sorted order.
pub fn dedup_candidates(candidates: &[OntologyTriple]) -> (Vec<OntologyTriple>, usize) {
    let mut groups: BTreeMap<TripleKey, Vec<&OntologyTriple>> = BTreeMap::new();
    for c in candidates {
        groups.entry(c.key()).or_default().push(c);
    }
    let mut merged = 0;
    let pool = groups
        .into_values()
        .map(|mut group| {
            merged += group.len() - 1;
            group.sort_by(|a, b| {
                (&a.provenance, &a.label_sentence, &a.subject_class, &a.object_class, &a.relation)
                    .cmp(&(&b.provenance, &b.label_sentence, &b.subject_class, &b.object_class, &b.relation))
            });
            let mut out = group[0].clone();
            let provenance: BTreeSet<_> = group.iter().flat_map(|t| t.provenance.iter().cloned()).collect();
            out.provenance = provenance.into_iter().collect();
            out.status = TripleStatus::Candidate;
            out
        })
        .collect();
    (pool, merged)
}

pub fn consolidate(
    candidates: &[OntologyTriple],
    decisions: &ReviewDecisions,
    taxonomy: &Taxonomy,
) -> Result<Consolidation, ConsolidateError> {
    let (pool, duplicates_merged) = dedup_candidates(candidates);
    let index: HashMap<TripleKey, usize> = pool.iter().enumerate().map(|(i, t)| (t.key(), i)).collect();

    let mut by_key: HashMap<TripleKey, &ReviewDecision> = HashMap::new();
    for d in &decisions.0 {
        if !index.contains_key(&d.key) {
            return Err(ConsolidateError::UnknownCandidate(d.key.clone()));
        }
        if d.action == ReviewAction::Edit && d.new_relation.is_none() && d.new_label.is_none() {
            return Err(ConsolidateError::EmptyEdit(d.key.clone()));
        }
        if let Some(prev) = by_key.insert(d.key.clone(), d) {
            if prev != d {
                return Err(ConsolidateError::ConflictingDecisions(d.key.clone()));
            }
        }
    }

    let mut curated: BTreeMap<TripleKey, OntologyTriple> = BTreeMap::new();
    let mut pending = Vec::new();
    let mut rejected = Vec::new();
    let mut edit_violations = Vec::new();
    for cand in pool {
        let key = cand.key();
        let Some(d) = by_key.get(&key) else {
            pending.push(cand);
            continue;
        };
        let mut t = cand.clone();
        match d.action {
            ReviewAction::Reject => {
                rejected.push(key);
                continue;
            }
            ReviewAction::Accept => t.status = TripleStatus::Approved,
            ReviewAction::Edit => {
                if let Some(r) = &d.new_relation {
                    t.relation = r.clone();
                }
                if let Some(l) = &d.new_label {
                    t.label_sentence = l.clone();
                }
                t.status = TripleStatus::Edited;
            }
        }
        let report = validate_triple(&t, taxonomy);
        if !report.is_ok() {
            edit_violations.push(EditViolation { key, report });
            pending.push(cand);
            continue;
        }
        for end in [&mut t.subject_class, &mut t.object_class] {
            if let Some((name, _)) = taxonomy.resolve_class(end) {
                *end = name.to_string();
            }
        }
        match curated.get_mut(&t.key()) {
            Some(existing) => {
                let provenance: BTreeSet<_> = existing
                    .provenance
                    .drain(..)
                    .chain(t.provenance)
                    .collect();
                existing.provenance = provenance.into_iter().collect();
            }
            None => {
                curated.insert(t.key(), t);
            }
        }
    }

    let ontology = Ontology {
        taxonomy: taxonomy.clone(),
        triples: curated.into_values().collect(),
    };
    Ok(Consolidation {
        ontology,
        pending,
        rejected,
        edit_violations,
        duplicates_merged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::triple::Provenance;

    fn tax() -> Taxonomy {
        Taxonomy::default_wvs()
    }

    fn gen(resp: &str) -> Provenance {
        Provenance::Generated {
            cq_id: "CQ1".into(),
            respondent_id: resp.into(),
            region: "EU".into(),
        }
    }

    fn cand(rel: &str, verb: &str, resp: &str) -> OntologyTriple {
        OntologyTriple::new(
            "Generalized Trust",
            rel,
            format!("Generalized Trust {verb} Outgroup Tolerance"),
            "Outgroup Tolerance",
        )
        .with_provenance(gen(resp))
    }

    #[test]
    fn duplicates_merge_on_accept() {
        let cs = vec![cand("reduce", "reduces", "r1"), cand("reduce", "reduces", "r2")];
        let key = cs[0].key();
        let out = consolidate(&cs, &ReviewDecisions(vec![ReviewDecision::accept(key)]), &tax()).unwrap();
        assert_eq!(out.ontology.len(), 1);
        let t = &out.ontology.triples()[0];
        assert_eq!(t.status, TripleStatus::Approved);
        assert_eq!(t.provenance, vec![gen("r1"), gen("r2")]);
        assert_eq!(out.duplicates_merged, 1);
    }

    #[test]
    fn reject_and_pending() {
        let cs = vec![cand("reduce", "reduces", "r1"), cand("weaken", "weakens", "r1")];
        let out = consolidate(&cs, &ReviewDecisions(vec![ReviewDecision::reject(cs[0].key())]), &tax()).unwrap();
        assert!(out.ontology.is_empty());
        assert_eq!(out.rejected, vec![cs[0].key()]);
        assert_eq!(out.pending.len(), 1);
        assert_eq!(out.pending[0].relation, "weaken");
    }

    #[test]
    fn edit_replaces_relation() {
        let cs = vec![cand("reduce", "reduces", "r1")];
        let d = ReviewDecision::edit(
            cs[0].key(),
            Some("reduce_support".into()),
            Some("Generalized Trust reduces support for Outgroup Tolerance".into()),
        );
        let out = consolidate(&cs, &ReviewDecisions(vec![d]), &tax()).unwrap();
        let t = &out.ontology.triples()[0];
        assert_eq!(t.relation, "reduce_support");
        assert_eq!(t.status, TripleStatus::Edited);
    }

    #[test]
    fn invalid_edit_stays_pending() {
        let cs = vec![cand("reduce", "reduces", "r1")];
        let d = ReviewDecision::edit(cs[0].key(), Some("reduceSupport".into()), None);
        let out = consolidate(&cs, &ReviewDecisions(vec![d]), &tax()).unwrap();
        assert!(out.ontology.is_empty());
        assert_eq!(out.pending.len(), 1);
        assert_eq!(out.edit_violations.len(), 1);
    }

    #[test]
    fn unknown_and_conflicting() {
        let cs = vec![cand("reduce", "reduces", "r1")];
        let bogus: TripleKey = "a|b|c".parse().unwrap();
        assert_eq!(
            consolidate(&cs, &ReviewDecisions(vec![ReviewDecision::accept(bogus.clone())]), &tax()).unwrap_err(),
            ConsolidateError::UnknownCandidate(bogus)
        );
        let k = cs[0].key();
        let ds = ReviewDecisions(vec![ReviewDecision::accept(k.clone()), ReviewDecision::reject(k.clone())]);
        assert_eq!(
            consolidate(&cs, &ds, &tax()).unwrap_err(),
            ConsolidateError::ConflictingDecisions(k)
        );
    }

    #[test]
    fn decisions_round_trip() {
        let text = "{\"key\":\"generalized trust|reduce|outgroup tolerance\",\"action\":\"edit\",\"new_relation\":\"reduce_support\"}\n{\"key\":\"a|b|c\",\"action\":\"reject\"}\n";
        let ds = ReviewDecisions::parse_jsonl(text).unwrap();
        assert_eq!(ds.0.len(), 2);
        assert_eq!(ds.to_jsonl(), text);
        assert!(matches!(
            ReviewDecisions::parse_jsonl("{\"key\":\"x\"}"),
            Err(ConsolidateError::BadDecisionLine { line: 1, .. })
        ));
    }

    #[test]
    fn stats_count_both_pair_kinds() {
        let a = OntologyTriple::new("Generalized Trust", "reduce", "Generalized Trust reduces Outgroup Tolerance", "Outgroup Tolerance")
            .with_status(TripleStatus::Approved);
        let b = OntologyTriple::new("Outgroup Tolerance", "raise", "Outgroup Tolerance raises Generalized Trust", "Generalized Trust")
            .with_status(TripleStatus::Approved);
        let c = OntologyTriple::new("Generalized Trust", "weaken", "Generalized Trust weakens Outgroup Tolerance", "Outgroup Tolerance")
            .with_status(TripleStatus::Approved);
        let ont = Ontology::new(tax(), vec![a, b, c]).unwrap();
        let s = ont.stats();
        assert_eq!((s.triples, s.directed_pairs, s.unordered_pairs, s.classes_used), (3, 2, 1, 2));
        let back = Ontology::from_jsonl(tax(), &ont.to_jsonl()).unwrap();
        assert_eq!(back, ont);
    }
}

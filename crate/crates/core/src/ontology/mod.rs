//! Taxonomy, triples, candidate-document parsing, validation and
//! consolidation.

mod consolidate;
mod taxonomy;
mod triple;
mod turtle;
mod validate;

pub use consolidate::{
    consolidate, dedup_candidates, ConsolidateError, Consolidation, EditViolation, Ontology,
    OntologyError, OntologyStats, ReviewAction, ReviewDecision, ReviewDecisions,
};
pub use taxonomy::{
    load_taxonomy, normalize_name, Category, ClassKind, Domain, Taxonomy, TaxonomyDocument,
    TaxonomyError,
};
pub use triple::{BadTripleKey, OntologyTriple, Provenance, TripleKey, TripleStatus};
pub use turtle::{camel_case, parse_candidate_document, serialize_candidates, ParseError, HEADER};
pub use validate::{
    snake_case, validate_triple, validate_triple_with, ValidationReport, ValidatorConfig,
    Violation, ViolationCode,
};

/// Result of checking one candidate document end to end.
#[derive(Debug, Clone)]
pub struct DocumentCheck {
    pub admissible: Vec<OntologyTriple>,
    pub rejected: Vec<(OntologyTriple, ValidationReport)>,
}

/// Parses a candidate document and validates each triple it declares.
///
/// Document-level problems are returned as `Err`; per-triple rule
/// violations are split out into `rejected`.
pub fn check_candidate_document(text: &str, tax: &Taxonomy) -> Result<DocumentCheck, ParseError> {
    let mut check = DocumentCheck {
        admissible: Vec::new(),
        rejected: Vec::new(),
    };
    for t in parse_candidate_document(text, tax)? {
        let report = validate_triple(&t, tax);
        if report.is_ok() {
            check.admissible.push(t);
        } else {
            check.rejected.push((t, report));
        }
    }
    Ok(check)
}

/// Every error or violation code produced for a document, for fixture
/// comparisons.
pub fn document_codes(text: &str, tax: &Taxonomy) -> Vec<String> {
    match check_candidate_document(text, tax) {
        Err(e) => vec![e.code().to_string()],
        Ok(c) => c
            .rejected
            .iter()
            .flat_map(|(_, r)| r.codes())
            .map(|c| c.as_str().to_string())
            .collect(),
    }
}

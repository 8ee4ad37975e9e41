//! Admissibility rules for a single triple against a taxonomy.
//!
//! Violations are data: an empty report means the triple is admissible.

use serde::{Deserialize, Serialize};

use super::taxonomy::Taxonomy;
use super::triple::OntologyTriple;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    /// Subject or object is not a taxonomy class.
    NewClass,
    /// Relation contains uppercase letters.
    RelationCase,
    /// Relation contains characters other than lowercase letters and
    /// single interior underscores.
    RelationChars,
    /// Relation embeds the snake_case name of its domain or range class.
    RelationEmbedsClass,
    LabelEmpty,
    LabelCapital,
    LabelPeriod,
    LabelMissingSubject,
    LabelMissingObject,
    LabelCamelCase,
    SelfLoop,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::NewClass => "NEW_CLASS",
            ViolationCode::RelationCase => "RELATION_CASE",
            ViolationCode::RelationChars => "RELATION_CHARS",
            ViolationCode::RelationEmbedsClass => "RELATION_EMBEDS_CLASS",
            ViolationCode::LabelEmpty => "LABEL_EMPTY",
            ViolationCode::LabelCapital => "LABEL_CAPITAL",
            ViolationCode::LabelPeriod => "LABEL_PERIOD",
            ViolationCode::LabelMissingSubject => "LABEL_MISSING_SUBJECT",
            ViolationCode::LabelMissingObject => "LABEL_MISSING_OBJECT",
            ViolationCode::LabelCamelCase => "LABEL_CAMEL_CASE",
            ViolationCode::SelfLoop => "SELF_LOOP",
        }
    }
}

impl std::fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn codes(&self) -> Vec<ViolationCode> {
        self.violations.iter().map(|v| v.code).collect()
    }

    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    fn push(&mut self, code: ViolationCode, message: impl Into<String>) {
        self.violations.push(Violation {
            code,
            message: message.into(),
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidatorConfig {
    pub allow_self_loops: bool,
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        ValidatorConfig {
            allow_self_loops: true,
        }
    }
}

pub fn validate_triple(t: &OntologyTriple, tax: &Taxonomy) -> ValidationReport {
    validate_triple_with(t, tax, ValidatorConfig::default())
}

pub fn validate_triple_with(
    t: &OntologyTriple,
    tax: &Taxonomy,
    config: ValidatorConfig,
) -> ValidationReport {
    let mut report = ValidationReport::default();

    let subject = tax.resolve_class(&t.subject_class).map(|(n, _)| n);
    let object = tax.resolve_class(&t.object_class).map(|(n, _)| n);
    if subject.is_none() {
        report.push(
            ViolationCode::NewClass,
            format!("subject `{}` is not a taxonomy class", t.subject_class),
        );
    }
    if object.is_none() {
        report.push(
            ViolationCode::NewClass,
            format!("object `{}` is not a taxonomy class", t.object_class),
        );
    }
    let subject = subject.unwrap_or(t.subject_class.trim());
    let object = object.unwrap_or(t.object_class.trim());

    if !config.allow_self_loops && subject == object {
        report.push(ViolationCode::SelfLoop, "subject and object are the same class");
    }

    check_relation(&t.relation, subject, object, &mut report);
    check_label(&t.label_sentence, subject, object, &mut report);
    report
}

fn check_relation(relation: &str, subject: &str, object: &str, report: &mut ValidationReport) {
    if relation.chars().any(|c| c.is_uppercase()) {
        report.push(
            ViolationCode::RelationCase,
            format!("relation `{relation}` is not lowercase snake_case"),
        );
    }
    let well_formed = !relation.is_empty()
        && relation
            .split('_')
            .all(|w| !w.is_empty() && w.chars().all(|c| c.is_ascii_alphabetic()));
    if !well_formed {
        report.push(
            ViolationCode::RelationChars,
            format!("relation `{relation}` must use only letters and single interior underscores"),
        );
    }
    let lower = relation.to_lowercase();
    for class in [subject, object] {
        let snake = snake_case(class);
        if !snake.is_empty() && lower.contains(&snake) {
            report.push(
                ViolationCode::RelationEmbedsClass,
                format!("relation `{relation}` embeds class name `{snake}`"),
            );
        }
    }
}

fn check_label(label: &str, subject: &str, object: &str, report: &mut ValidationReport) {
    let label_trim = label.trim();
    if label_trim.is_empty() {
        report.push(ViolationCode::LabelEmpty, "label is empty");
        return;
    }
    if !label_trim.chars().next().is_some_and(|c| c.is_uppercase()) {
        report.push(ViolationCode::LabelCapital, "label must begin with a capital letter");
    }
    if label_trim.ends_with('.') {
        report.push(ViolationCode::LabelPeriod, "label must not end with a period");
    }
    if !label.contains(subject) {
        report.push(
            ViolationCode::LabelMissingSubject,
            format!("label does not contain subject class `{subject}`"),
        );
    }
    if !label.contains(object) {
        report.push(
            ViolationCode::LabelMissingObject,
            format!("label does not contain object class `{object}`"),
        );
    }
    if let Some(word) = label_trim.split_whitespace().find(|w| is_camel(w)) {
        report.push(
            ViolationCode::LabelCamelCase,
            format!("label contains CamelCase token `{word}`"),
        );
    }
}

/// A lowercase letter immediately followed by an uppercase one.
fn is_camel(word: &str) -> bool {
    let chars: Vec<char> = word.chars().collect();
    chars
        .windows(2)
        .any(|w| w[0].is_lowercase() && w[1].is_uppercase())
}

/// `Outgroup Tolerance` -> `outgroup_tolerance`.
pub fn snake_case(name: &str) -> String {
    name.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join("_")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tax() -> Taxonomy {
        Taxonomy::default_wvs()
    }

    #[test]
    fn table_row_is_admissible() {
        let t = OntologyTriple::new(
            "Work Success Beliefs",
            "reinforce",
            "Work Success Beliefs reinforces Work Obligation Attitudes",
            "Work Obligation Attitudes",
        );
        assert_eq!(validate_triple(&t, &tax()), ValidationReport::default());
    }

    #[test]
    fn unknown_object_is_new_class() {
        let t = OntologyTriple::new(
            "Generalized Trust",
            "increase",
            "Generalized Trust increases Crypto Enthusiasm",
            "Crypto Enthusiasm",
        );
        assert_eq!(validate_triple(&t, &tax()).codes(), vec![ViolationCode::NewClass]);
    }

    #[test]
    fn camel_relation_flagged() {
        let t = OntologyTriple::new(
            "Generalized Trust",
            "reduceSupport",
            "Generalized Trust reduces support for Outgroup Tolerance",
            "Outgroup Tolerance",
        );
        let r = validate_triple(&t, &tax());
        assert!(r.has(ViolationCode::RelationCase));
    }

    #[test]
    fn embedded_class_name_flagged() {
        let t = OntologyTriple::new(
            "Generalized Trust",
            "reduce_outgroup_tolerance",
            "Generalized Trust reduces Outgroup Tolerance",
            "Outgroup Tolerance",
        );
        assert_eq!(
            validate_triple(&t, &tax()).codes(),
            vec![ViolationCode::RelationEmbedsClass]
        );
    }

    #[test]
    fn label_rules() {
        let base = |label: &str| {
            OntologyTriple::new("Generalized Trust", "foster", label, "Outgroup Tolerance")
        };
        let r = validate_triple(&base("Generalized Trust fosters Outgroup Tolerance."), &tax());
        assert_eq!(r.codes(), vec![ViolationCode::LabelPeriod]);
        let r = validate_triple(&base("trust in Generalized Trust fosters Outgroup Tolerance"), &tax());
        assert_eq!(r.codes(), vec![ViolationCode::LabelCapital]);
        let r = validate_triple(&base("GeneralizedTrust fosters Outgroup Tolerance"), &tax());
        assert_eq!(
            r.codes(),
            vec![ViolationCode::LabelMissingSubject, ViolationCode::LabelCamelCase]
        );
        let r = validate_triple(&base(""), &tax());
        assert_eq!(r.codes(), vec![ViolationCode::LabelEmpty]);
    }

    #[test]
    fn self_loops_configurable() {
        let t = OntologyTriple::new(
            "Generalized Trust",
            "reinforce",
            "Generalized Trust reinforces Generalized Trust",
            "Generalized Trust",
        );
        assert!(validate_triple(&t, &tax()).is_ok());
        let strict = ValidatorConfig {
            allow_self_loops: false,
        };
        assert_eq!(
            validate_triple_with(&t, &tax(), strict).codes(),
            vec![ViolationCode::SelfLoop]
        );
    }

    #[test]
    fn relation_shape() {
        let t = |rel: &str| {
            OntologyTriple::new(
                "Generalized Trust",
                rel,
                "Generalized Trust shapes Outgroup Tolerance",
                "Outgroup Tolerance",
            )
        };
        for bad in ["", "_reduce", "reduce__support", "reduce-support", "reduce2"] {
            assert!(validate_triple(&t(bad), &tax()).has(ViolationCode::RelationChars), "{bad}");
        }
        assert!(validate_triple(&t("may_slightly_increase"), &tax()).is_ok());
    }
}

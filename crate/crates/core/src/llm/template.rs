use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template `{template}` needs a value for `{{{name}}}`")]
    MissingValue { template: String, name: String },
    #[error("template `{template}` has no placeholder `{{{name}}}`")]
    UnknownPlaceholder { template: String, name: String },
    #[error("template `{template}` does not contain declared placeholder `{{{name}}}`")]
    PlaceholderAbsent { template: String, name: String },
    #[error("could not read template `{path}`: {message}")]
    Io { path: String, message: String },
}

/// Prompt text with a declared set of `{name}` placeholders.
///
/// Only declared names are substituted, so literal braces such as JSON
/// examples pass through untouched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    name: String,
    text: String,
    placeholders: BTreeSet<String>,
}

impl Template {
    pub fn new(name: &str, text: impl Into<String>, placeholders: &[&str]) -> Result<Self, TemplateError> {
        let text = text.into();
        for p in placeholders {
            if !text.contains(&format!("{{{p}}}")) {
                return Err(TemplateError::PlaceholderAbsent {
                    template: name.to_string(),
                    name: p.to_string(),
                });
            }
        }
        Ok(Template {
            name: name.to_string(),
            text,
            placeholders: placeholders.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn placeholders(&self) -> impl Iterator<Item = &str> {
        self.placeholders.iter().map(|s| s.as_str())
    }

    /// Substitutes every declared placeholder in a single left-to-right pass.
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        let map: HashMap<&str, &str> = values.iter().copied().collect();
        for (k, _) in values {
            if !self.placeholders.contains(*k) {
                return Err(TemplateError::UnknownPlaceholder {
                    template: self.name.clone(),
                    name: k.to_string(),
                });
            }
        }
        for p in &self.placeholders {
            if !map.contains_key(p.as_str()) {
                return Err(TemplateError::MissingValue {
                    template: self.name.clone(),
                    name: p.clone(),
                });
            }
        }
        let mut out = String::with_capacity(self.text.len());
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let hit = after.find('}').and_then(|close| {
                let name = &after[..close];
                map.get(name).map(|v| (v, close))
            });
            match hit {
                Some((v, close)) => {
                    out.push_str(v);
                    rest = &after[close + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

const PERSONA: &str = include_str!("../../templates/persona.txt");
const JUDGMENT: &str = include_str!("../../templates/judgment.txt");
const VALUE_PROFILE: &str = include_str!("../../templates/value_profile.txt");
const OBJECT_PROPERTY: &str = include_str!("../../templates/object_property.txt");
const SINGLE_JUDGE: &str = include_str!("../../templates/single_judge.txt");
const VALUE_INFERENCE: &str = include_str!("../../templates/value_inference.txt");
const VALUE_INFERENCE_JUDGMENT: &str = include_str!("../../templates/value_inference_judgment.txt");

const SPECS: [(&str, &[&str]); 7] = [
    (
        "persona",
        &[
            "persona_id",
            "question",
            "options_text",
            "demographics_text",
            "value_summaries_text",
            "hyper_edges_text",
            "hyper_nodes_text",
        ],
    ),
    ("judgment", &["question_text", "options_text", "vote_summary", "persona_outputs"]),
    ("value_profile", &["domain_label", "domain_taxonomy_yaml", "value_input_yaml"]),
    ("object_property", &["ONTOLOGY_TTL", "CQS", "RESPONDENT_DATA_JSON"]),
    (
        "single_judge",
        &[
            "question_text",
            "options_text",
            "target_demographics_text",
            "individuals_text",
            "hyper_edges_text",
        ],
    ),
    (
        "value_inference",
        &[
            "target_demographics_text",
            "individuals_text",
            "hyper_edges_text",
            "categories_text",
        ],
    ),
    (
        "value_inference_judgment",
        &["inferred_profile_text", "options_text", "question_text"],
    ),
];

/// Every prompt the pipeline uses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub persona: Template,
    pub judgment: Template,
    pub value_profile: Template,
    pub object_property: Template,
    pub single_judge: Template,
    pub value_inference: Template,
    pub value_inference_judgment: Template,
}

impl Default for TemplateSet {
    fn default() -> Self {
        let texts = [
            PERSONA,
            JUDGMENT,
            VALUE_PROFILE,
            OBJECT_PROPERTY,
            SINGLE_JUDGE,
            VALUE_INFERENCE,
            VALUE_INFERENCE_JUDGMENT,
        ];
        let ts: Vec<Template> = SPECS
            .iter()
            .zip(texts)
            .map(|((name, ph), text)| Template::new(name, text, ph).expect("shipped template is valid"))
            .collect();
        TemplateSet::from_vec(ts)
    }
}

impl TemplateSet {
    fn from_vec(ts: Vec<Template>) -> Self {
        let mut it = ts.into_iter();
        let mut next = || it.next().expect("seven templates");
        TemplateSet {
            persona: next(),
            judgment: next(),
            value_profile: next(),
            object_property: next(),
            single_judge: next(),
            value_inference: next(),
            value_inference_judgment: next(),
        }
    }

    /// Loads `<name>.txt` overrides from a directory, falling back to the
    /// shipped text for files that are absent.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let defaults = TemplateSet::default();
        let base = [
            defaults.persona,
            defaults.judgment,
            defaults.value_profile,
            defaults.object_property,
            defaults.single_judge,
            defaults.value_inference,
            defaults.value_inference_judgment,
        ];
        let mut out = Vec::new();
        for ((name, ph), fallback) in SPECS.iter().zip(base) {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                out.push(Template::new(name, text, ph)?);
            } else {
                out.push(fallback);
            }
        }
        Ok(TemplateSet::from_vec(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_declared_names_substituted() {
        let t = Template::new("t", "a {x} {\"k\": {y}} {z}", &["x", "y"]).unwrap();
        assert_eq!(t.render(&[("x", "1"), ("y", "{x}")]).unwrap(), "a 1 {\"k\": {x}} {z}");
    }

    #[test]
    fn missing_and_unknown_values() {
        let t = Template::new("t", "{x}", &["x"]).unwrap();
        assert!(matches!(t.render(&[]), Err(TemplateError::MissingValue { .. })));
        assert!(matches!(
            t.render(&[("x", ""), ("q", "")]),
            Err(TemplateError::UnknownPlaceholder { .. })
        ));
        assert!(Template::new("t", "none", &["x"]).is_err());
    }

    #[test]
    fn shipped_templates_load() {
        let ts = TemplateSet::default();
        let r = ts
            .judgment
            .render(&[
                ("question_text", "Q?"),
                ("options_text", "1: Yes"),
                ("vote_summary", "1: 2"),
                ("persona_outputs", "[]"),
            ])
            .unwrap();
        assert!(r.contains("[USER QUESTION]: Q?"));
        assert!(r.contains("\"final_answer\": \"<value>: <text>\""));
        let p = ts
            .object_property
            .render(&[("ONTOLOGY_TTL", "TTL"), ("CQS", "CQ"), ("RESPONDENT_DATA_JSON", "{}")])
            .unwrap();
        assert!(p.contains("\"Q1\": {"));
    }
}

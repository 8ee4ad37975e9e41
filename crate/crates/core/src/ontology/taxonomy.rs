//! The fixed value taxonomy: top-level domains and their fine-grained
//! categories.
//!
//! Both domains and categories are ontology classes. Triples may use either
//! as an endpoint, although generated relations are expected to favour the
//! more specific categories.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::turtle::{camel_case, HEADER};

const DEFAULT_TAXONOMY: &str = include_str!("../../data/default_taxonomy.json");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("taxonomy document declares no domains")]
    EmptyTaxonomy,
    #[error("duplicate class name `{0}`")]
    DuplicateClass(String),
    #[error("category `{category}` names unknown parent domain `{parent}`")]
    OrphanCategory { category: String, parent: String },
    #[error("malformed taxonomy document: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    pub name: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub parent: String,
    #[serde(default)]
    pub description: String,
}

/// On-disk shape of a taxonomy file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TaxonomyDocument {
    #[serde(default)]
    pub version: String,
    #[serde(default)]
    pub domains: Vec<Domain>,
    #[serde(default)]
    pub categories: Vec<Category>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ClassRef {
    Domain(usize),
    Category(usize),
}

/// Identifies a resolved class by its canonical name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassKind {
    Domain,
    Category,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TaxonomyDocument", into = "TaxonomyDocument")]
pub struct Taxonomy {
    version: String,
    domains: Vec<Domain>,
    categories: Vec<Category>,
    by_name: HashMap<String, ClassRef>,
    by_iri: HashMap<String, ClassRef>,
}

/// Lowercases and collapses internal whitespace.
pub fn normalize_name(s: &str) -> String {
    s.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Alphanumeric-only lowercase form, used to match CamelCase IRI local names
/// against human-readable class labels.
fn iri_key(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(|c| c.to_lowercase())
        .collect()
}

pub fn load_taxonomy(document: &str) -> Result<Taxonomy, TaxonomyError> {
    if document.trim().is_empty() {
        return Err(TaxonomyError::EmptyTaxonomy);
    }
    let doc: TaxonomyDocument =
        serde_json::from_str(document).map_err(|e| TaxonomyError::Malformed(e.to_string()))?;
    Taxonomy::try_from(doc)
}

impl TryFrom<TaxonomyDocument> for Taxonomy {
    type Error = TaxonomyError;

    fn try_from(doc: TaxonomyDocument) -> Result<Self, Self::Error> {
        if doc.domains.is_empty() {
            return Err(TaxonomyError::EmptyTaxonomy);
        }
        let mut by_name = HashMap::new();
        let mut by_iri = HashMap::new();
        let mut insert = |name: &str, r: ClassRef| -> Result<(), TaxonomyError> {
            let n = normalize_name(name);
            if n.is_empty() {
                return Err(TaxonomyError::Malformed("empty class name".into()));
            }
            if by_name.insert(n, r).is_some() || by_iri.insert(iri_key(name), r).is_some() {
                return Err(TaxonomyError::DuplicateClass(name.trim().to_string()));
            }
            Ok(())
        };
        for (i, d) in doc.domains.iter().enumerate() {
            insert(&d.name, ClassRef::Domain(i))?;
        }
        let domain_names: HashMap<String, usize> = doc
            .domains
            .iter()
            .enumerate()
            .map(|(i, d)| (normalize_name(&d.name), i))
            .collect();
        let mut categories = Vec::with_capacity(doc.categories.len());
        for (i, c) in doc.categories.into_iter().enumerate() {
            insert(&c.name, ClassRef::Category(i))?;
            let Some(&pi) = domain_names.get(&normalize_name(&c.parent)) else {
                return Err(TaxonomyError::OrphanCategory {
                    category: c.name,
                    parent: c.parent,
                });
            };
            categories.push(Category {
                name: c.name.trim().to_string(),
                parent: doc.domains[pi].name.trim().to_string(),
                description: c.description,
            });
        }
        let domains = doc
            .domains
            .into_iter()
            .map(|d| Domain {
                name: d.name.trim().to_string(),
                description: d.description,
            })
            .collect();
        Ok(Taxonomy {
            version: doc.version,
            domains,
            categories,
            by_name,
            by_iri,
        })
    }
}

impl From<Taxonomy> for TaxonomyDocument {
    fn from(t: Taxonomy) -> Self {
        TaxonomyDocument {
            version: t.version,
            domains: t.domains,
            categories: t.categories,
        }
    }
}

impl Taxonomy {
    /// The shipped 12-domain value taxonomy.
    pub fn default_wvs() -> Taxonomy {
        load_taxonomy(DEFAULT_TAXONOMY).expect("shipped taxonomy is valid")
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn domains(&self) -> &[Domain] {
        &self.domains
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    /// Every class name: domains first, then categories, in document order.
    pub fn class_names(&self) -> impl Iterator<Item = &str> {
        self.domains
            .iter()
            .map(|d| d.name.as_str())
            .chain(self.categories.iter().map(|c| c.name.as_str()))
    }

    pub fn class_count(&self) -> usize {
        self.domains.len() + self.categories.len()
    }

    fn name_of(&self, r: ClassRef) -> (&str, ClassKind) {
        match r {
            ClassRef::Domain(i) => (&self.domains[i].name, ClassKind::Domain),
            ClassRef::Category(i) => (&self.categories[i].name, ClassKind::Category),
        }
    }

    /// Resolves a class label (case and whitespace insensitive) to its
    /// canonical name.
    pub fn resolve_class(&self, name: &str) -> Option<(&str, ClassKind)> {
        self.by_name
            .get(&normalize_name(name))
            .map(|&r| self.name_of(r))
    }

    /// Resolves a CamelCase IRI local name such as `GeneralizedTrust`.
    pub fn resolve_iri_local(&self, local: &str) -> Option<(&str, ClassKind)> {
        self.by_iri.get(&iri_key(local)).map(|&r| self.name_of(r))
    }

    pub fn is_category(&self, name: &str) -> bool {
        matches!(self.resolve_class(name), Some((_, ClassKind::Category)))
    }

    pub fn domain(&self, name: &str) -> Option<&Domain> {
        match self.by_name.get(&normalize_name(name)) {
            Some(&ClassRef::Domain(i)) => Some(&self.domains[i]),
            _ => None,
        }
    }

    pub fn category(&self, name: &str) -> Option<&Category> {
        match self.by_name.get(&normalize_name(name)) {
            Some(&ClassRef::Category(i)) => Some(&self.categories[i]),
            _ => None,
        }
    }

    /// Position of a category in document order.
    pub fn category_index(&self, name: &str) -> Option<usize> {
        match self.by_name.get(&normalize_name(name)) {
            Some(&ClassRef::Category(i)) => Some(i),
            _ => None,
        }
    }

    pub fn domain_index(&self, name: &str) -> Option<usize> {
        match self.by_name.get(&normalize_name(name)) {
            Some(&ClassRef::Domain(i)) => Some(i),
            _ => None,
        }
    }

    pub fn categories_of<'a>(&'a self, domain: &str) -> impl Iterator<Item = &'a Category> + 'a {
        let d = self.domain(domain).map(|d| d.name.clone());
        self.categories
            .iter()
            .filter(move |c| Some(&c.parent) == d.as_ref())
    }

    /// Parent domain of a class; a domain is its own parent.
    pub fn domain_of(&self, class: &str) -> Option<&str> {
        match self.by_name.get(&normalize_name(class))? {
            ClassRef::Domain(i) => Some(&self.domains[*i].name),
            ClassRef::Category(i) => Some(&self.categories[*i].parent),
        }
    }

    /// Text embedded to represent a category: `name: description`.
    pub fn category_text(&self, c: &Category) -> String {
        if c.description.is_empty() {
            c.name.clone()
        } else {
            format!("{}: {}", c.name, c.description)
        }
    }

    pub fn domain_text(&self, d: &Domain) -> String {
        let cats: Vec<&str> = self.categories_of(&d.name).map(|c| c.name.as_str()).collect();
        let mut text = d.name.clone();
        if !d.description.is_empty() {
            text.push_str(": ");
            text.push_str(&d.description);
        }
        if !cats.is_empty() {
            text.push_str(" Categories: ");
            text.push_str(&cats.join(", "));
        }
        text
    }

    /// Turtle rendering of the class hierarchy, used as the ontology
    /// snapshot in the object-property prompt.
    pub fn to_turtle_snapshot(&self) -> String {
        let mut out = String::from(HEADER);
        for d in &self.domains {
            out.push_str(&format!(
                "\nwvs:{} rdf:type owl:Class ;\n    rdfs:label \"{}\"@en .\n",
                camel_case(&d.name),
                escape(&d.name)
            ));
        }
        for c in &self.categories {
            out.push_str(&format!(
                "\nwvs:{} rdf:type owl:Class ;\n    rdfs:subClassOf wvs:{} ;\n    rdfs:label \"{}\"@en .\n",
                camel_case(&c.name),
                camel_case(&c.parent),
                escape(&c.name)
            ));
        }
        out
    }

    /// YAML-style listing of one domain and its categories, as shown to the
    /// summarization agent.
    pub fn domain_slice_yaml(&self, domain: &str) -> Option<String> {
        let d = self.domain(domain)?;
        let mut out = format!("{}:\n", d.name);
        for c in self.categories_of(&d.name) {
            out.push_str(&format!("  - {}: {}\n", c.name, c.description));
        }
        Some(out)
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_taxonomy_shape() {
        let t = Taxonomy::default_wvs();
        assert_eq!(t.domains().len(), 12);
        assert_eq!(t.categories().len(), 64);
        // domains are classes too: 12 + 64 = 76
        assert_eq!(t.class_count(), 76);
        assert!(t.domain("Economic Values").is_some());
        assert!(t.domain("Religious Values").is_some());
        assert_eq!(t.domain_of("Work Success Beliefs"), Some("Economic Values"));
    }

    #[test]
    fn duplicate_category_under_two_domains() {
        let doc = r#"{"domains":[{"name":"A"},{"name":"B"}],
            "categories":[{"name":"Generalized Trust","parent":"A"},
                          {"name":"Generalized Trust","parent":"B"}]}"#;
        assert_eq!(
            load_taxonomy(doc).unwrap_err(),
            TaxonomyError::DuplicateClass("Generalized Trust".into())
        );
    }

    #[test]
    fn duplicate_detected_after_normalization() {
        let doc = r#"{"domains":[{"name":"A"}],
            "categories":[{"name":"Generalized  Trust","parent":"A"},
                          {"name":"generalized trust","parent":"A"}]}"#;
        assert!(matches!(load_taxonomy(doc), Err(TaxonomyError::DuplicateClass(_))));
    }

    #[test]
    fn orphan_and_empty() {
        let doc = r#"{"domains":[{"name":"A"}],"categories":[{"name":"X","parent":"B"}]}"#;
        assert!(matches!(load_taxonomy(doc), Err(TaxonomyError::OrphanCategory { .. })));
        assert_eq!(load_taxonomy("").unwrap_err(), TaxonomyError::EmptyTaxonomy);
        assert_eq!(load_taxonomy("{}").unwrap_err(), TaxonomyError::EmptyTaxonomy);
    }

    #[test]
    fn iri_resolution() {
        let t = Taxonomy::default_wvs();
        assert_eq!(t.resolve_iri_local("GeneralizedTrust").unwrap().0, "Generalized Trust");
        assert_eq!(
            t.resolve_iri_local("SecurityRelatedBehavior").unwrap().0,
            "Security-related Behavior"
        );
        assert_eq!(
            t.resolve_iri_local("PerceptionsOfMigration").unwrap(),
            ("Perceptions of Migration", ClassKind::Domain)
        );
        assert!(t.resolve_iri_local("CryptoEnthusiasm").is_none());
    }

    #[test]
    fn document_order_preserved() {
        let t = Taxonomy::default_wvs();
        assert_eq!(t.domains()[0].name, "Social Values, Norms, Stereotypes");
        let econ: Vec<_> = t.categories_of("economic values").map(|c| c.name.as_str()).collect();
        assert_eq!(econ.first(), Some(&"Economic Equality Preference"));
        assert_eq!(econ.last(), Some(&"Work Success Beliefs"));
    }

    #[test]
    fn serde_round_trip() {
        let t = Taxonomy::default_wvs();
        let s = serde_json::to_string(&t).unwrap();
        let back: Taxonomy = serde_json::from_str(&s).unwrap();
        assert_eq!(t, back);
    }
}

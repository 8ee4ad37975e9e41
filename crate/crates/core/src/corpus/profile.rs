//! Category-conditioned value profiles built by the summarization agent.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::RespondentRecord;
use crate::llm::{call_with_retry, usage_of, LlmBackend, LlmRequest, Template, TokenUsage, DEFAULT_ATTEMPTS};
use crate::ontology::{normalize_name, Taxonomy};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProfileError {
    #[error("respondent `{0}` has no answers")]
    EmptyRecord(String),
    #[error("profile generation failed for domain `{domain}`: {cause}")]
    ProfileGenerationFailed { domain: String, cause: String },
    #[error("template error: {0}")]
    Template(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CoverageFlag {
    pub domain: String,
    /// The category the model skipped despite tagged answers, or `None`
    /// when the domain received no category summaries at all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub question_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedKey {
    pub domain: String,
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainFailure {
    pub domain: String,
    pub cause: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProfileDiagnostics {
    #[serde(default)]
    pub coverage_flags: Vec<CoverageFlag>,
    #[serde(default)]
    pub dropped_keys: Vec<DroppedKey>,
    #[serde(default)]
    pub failed_domains: Vec<DomainFailure>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValueProfile {
    pub respondent_id: String,
    /// Category name to synopsis.
    pub synopses: BTreeMap<String, String>,
    /// Domain name to high-level synthesis.
    pub domain_syntheses: BTreeMap<String, String>,
    #[serde(default)]
    pub diagnostics: ProfileDiagnostics,
    #[serde(default)]
    pub usage: TokenUsage,
}

#[derive(Debug, Clone)]
pub struct ProfileOptions {
    pub attempts: usize,
    pub max_tokens: u32,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        ProfileOptions {
            attempts: DEFAULT_ATTEMPTS,
            max_tokens: 1024,
        }
    }
}

/// Parsed reply for one domain.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DomainReply {
    pub synthesis: Option<String>,
    pub synopses: BTreeMap<String, String>,
    pub dropped: Vec<String>,
}

fn strip_fence(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest.split_once('\n').map_or("", |(_, body)| body);
    rest.trim_end().strip_suffix("```").unwrap_or(rest).trim()
}

/// Parses a summarization reply for `domain`, keeping only keys that are
/// the domain itself or one of its categories.
pub fn parse_profile_reply(text: &str, domain: &str, tax: &Taxonomy) -> Result<DomainReply, String> {
    let value: serde_yaml::Value =
        serde_yaml::from_str(strip_fence(text)).map_err(|e| format!("reply is not YAML: {e}"))?;
    let serde_yaml::Value::Mapping(map) = value else {
        return Err("reply is not a YAML mapping".into());
    };
    let domain_key = normalize_name(domain);
    let allowed: BTreeMap<String, &str> = tax
        .categories_of(domain)
        .map(|c| (normalize_name(&c.name), c.name.as_str()))
        .collect();
    let mut out = DomainReply::default();
    for (k, v) in map {
        let key = match k {
            serde_yaml::Value::String(s) => s,
            other => return Err(format!("non-string key {other:?}")),
        };
        let text = match v {
            serde_yaml::Value::String(s) => s.trim().to_string(),
            serde_yaml::Value::Null => String::new(),
            _ => return Err(format!("value for `{key}` is not text")),
        };
        let norm = normalize_name(&key);
        if norm == domain_key {
            if !text.is_empty() {
                out.synthesis = Some(text);
            }
        } else if let Some(name) = allowed.get(&norm) {
            if !text.is_empty() {
                out.synopses.insert(name.to_string(), text);
            }
        } else {
            out.dropped.push(key);
        }
    }
    if out.synthesis.is_none() && out.synopses.is_empty() {
        return Err("reply contains neither the domain synthesis nor any category summary".into());
    }
    Ok(out)
}

fn render_answers(answers: &[(&str, &super::Answer)]) -> String {
    answers
        .iter()
        .map(|(_, a)| format!("\n- Q: {} | R: {}", a.question.trim(), a.response.trim()))
        .collect()
}

/// Builds a value profile with one backend call per answered domain.
///
/// A domain whose reply stays unparseable after the allowed attempts is
/// recorded in the diagnostics; the call fails only when every domain does.
pub fn build_profile<B: LlmBackend + ?Sized>(
    rec: &RespondentRecord,
    tax: &Taxonomy,
    backend: &B,
    template: &Template,
    options: &ProfileOptions,
) -> Result<ValueProfile, ProfileError> {
    if rec.answers.is_empty() {
        return Err(ProfileError::EmptyRecord(rec.respondent_id.clone()));
    }
    let mut profile = ValueProfile {
        respondent_id: rec.respondent_id.clone(),
        ..Default::default()
    };
    let mut first_failure = None;
    let grouped = rec.answers_by_domain();
    for (domain, answers) in &grouped {
        let slice = tax
            .domain_slice_yaml(domain)
            .map(|y| format!("\n{}", y.trim_end()))
            .unwrap_or_default();
        let prompt = template
            .render(&[
                ("domain_label", domain),
                ("domain_taxonomy_yaml", &slice),
                ("value_input_yaml", &render_answers(answers)),
            ])
            .map_err(|e| ProfileError::Template(e.to_string()))?;
        let request = LlmRequest::new(prompt, options.max_tokens);
        let attempted = call_with_retry(backend, &request, options.attempts, |t| parse_profile_reply(t, domain, tax));
        profile.usage.add(usage_of(&attempted.calls));
        match attempted.result {
            Ok(reply) => {
                if let Some(s) = reply.synthesis {
                    profile.domain_syntheses.insert(domain.to_string(), s);
                }
                for key in reply.dropped {
                    profile.diagnostics.dropped_keys.push(DroppedKey {
                        domain: domain.to_string(),
                        key,
                    });
                }
                flag_coverage(domain, answers, &reply.synopses, &mut profile.diagnostics);
                profile.synopses.extend(reply.synopses);
            }
            Err(cause) => {
                log::warn!("profile for `{}` domain `{domain}` failed: {cause}", rec.respondent_id);
                first_failure.get_or_insert_with(|| (domain.to_string(), cause.clone()));
                profile.diagnostics.failed_domains.push(DomainFailure {
                    domain: domain.to_string(),
                    cause,
                });
            }
        }
    }
    if profile.diagnostics.failed_domains.len() == grouped.len() {
        let (domain, cause) = first_failure.expect("at least one domain");
        return Err(ProfileError::ProfileGenerationFailed { domain, cause });
    }
    Ok(profile)
}

fn flag_coverage(
    domain: &str,
    answers: &[(&str, &super::Answer)],
    synopses: &BTreeMap<String, String>,
    diag: &mut ProfileDiagnostics,
) {
    if synopses.is_empty() {
        diag.coverage_flags.push(CoverageFlag {
            domain: domain.to_string(),
            category: None,
            question_ids: answers.iter().map(|(q, _)| q.to_string()).collect(),
        });
        return;
    }
    let covered: BTreeSet<String> = synopses.keys().map(|k| normalize_name(k)).collect();
    let mut missing: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (qid, a) in answers {
        if let Some(sub) = &a.subcategory {
            if !covered.contains(&normalize_name(sub)) {
                missing.entry(sub.clone()).or_default().push(qid.to_string());
            }
        }
    }
    for (category, question_ids) in missing {
        diag.coverage_flags.push(CoverageFlag {
            domain: domain.to_string(),
            category: Some(category),
            question_ids,
        });
    }
}

/// The synopses whose category is in `classes`.
pub fn filter_profile<'a, I>(profile: &ValueProfile, classes: I) -> BTreeMap<String, String>
where
    I: IntoIterator<Item = &'a str>,
{
    let wanted: BTreeSet<String> = classes.into_iter().map(normalize_name).collect();
    profile
        .synopses
        .iter()
        .filter(|(k, _)| wanted.contains(&normalize_name(k)))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{CountingBackend, FnBackend, TemplateSet};

    fn record(domains: &[(&str, Option<&str>)]) -> RespondentRecord {
        let mut rec = RespondentRecord {
            respondent_id: "r1".into(),
            region: "EU".into(),
            demographics: Default::default(),
            answers: Default::default(),
        };
        for (i, (d, sub)) in domains.iter().enumerate() {
            rec.answers.insert(
                format!("Q{i}"),
                super::super::Answer {
                    category: d.to_string(),
                    question: "How important is God in your life?".into(),
                    response: "Very important".into(),
                    subcategory: sub.map(|s| s.to_string()),
                },
            );
        }
        rec
    }

    fn religious_categories(tax: &Taxonomy) -> Vec<String> {
        tax.categories_of("Religious Values").map(|c| c.name.clone()).collect()
    }

    #[test]
    fn keys_stay_inside_prompted_domain() {
        let tax = Taxonomy::default_wvs();
        let cats = religious_categories(&tax);
        let reply = format!(
            "Religious Values: >\n  Holds faith central.\n{}: >\n  Prays daily.\nGeneralized Trust: >\n  Trusts few.\n",
            cats[0]
        );
        let backend = FnBackend::new("m", move |_: &str| reply.clone());
        let p = build_profile(
            &record(&[("Religious Values", None)]),
            &tax,
            &backend,
            &TemplateSet::default().value_profile,
            &ProfileOptions::default(),
        )
        .unwrap();
        assert!(p.synopses.keys().all(|k| cats.contains(k)));
        assert_eq!(p.synopses.len(), 1);
        assert_eq!(p.domain_syntheses["Religious Values"], "Holds faith central.");
        assert_eq!(p.diagnostics.dropped_keys[0].key, "Generalized Trust");
        assert_eq!(p.usage.calls, 1);
    }

    #[test]
    fn empty_record() {
        let tax = Taxonomy::default_wvs();
        let backend = FnBackend::new("m", |_: &str| String::new());
        let err = build_profile(&record(&[]), &tax, &backend, &TemplateSet::default().value_profile, &ProfileOptions::default())
            .unwrap_err();
        assert_eq!(err, ProfileError::EmptyRecord("r1".into()));
    }

    #[test]
    fn prose_exhausts_retries() {
        let tax = Taxonomy::default_wvs();
        let backend = CountingBackend::new(FnBackend::new("m", |_: &str| {
            "The respondent seems quite religious overall.".to_string()
        }));
        let err = build_profile(
            &record(&[("Religious Values", None)]),
            &tax,
            &backend,
            &TemplateSet::default().value_profile,
            &ProfileOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ProfileError::ProfileGenerationFailed { ref domain, .. } if domain == "Religious Values"));
        assert_eq!(backend.calls(), 3);
    }

    #[test]
    fn one_call_per_domain_and_partial_failure() {
        let tax = Taxonomy::default_wvs();
        let econ: Vec<String> = tax.categories_of("Economic Values").map(|c| c.name.clone()).collect();
        let reply = format!("Economic Values: Favors markets.\n{}: Supports effort.\n", econ[0]);
        let backend = CountingBackend::new(FnBackend::new("m", move |p: &str| {
            if p.contains("values for Economic Values") {
                reply.clone()
            } else {
                "not yaml: [".to_string()
            }
        }));
        let p = build_profile(
            &record(&[("Economic Values", Some(&econ[1])), ("Religious Values", None)]),
            &tax,
            &backend,
            &TemplateSet::default().value_profile,
            &ProfileOptions::default(),
        )
        .unwrap();
        assert_eq!(backend.calls(), 1 + 3);
        assert_eq!(p.diagnostics.failed_domains.len(), 1);
        assert_eq!(p.diagnostics.coverage_flags[0].category.as_deref(), Some(econ[1].as_str()));
    }

    #[test]
    fn prompt_lists_answers() {
        let tax = Taxonomy::default_wvs();
        let backend = FnBackend::new("m", |p: &str| {
            assert!(p.contains("- Q: How important is God in your life? | R: Very important"));
            assert!(p.contains("Summarize the respondent's values for Religious Values"));
            "Religious Values: Devout.".to_string()
        });
        build_profile(
            &record(&[("Religious Values", None)]),
            &tax,
            &backend,
            &TemplateSet::default().value_profile,
            &ProfileOptions::default(),
        )
        .unwrap();
    }

    #[test]
    fn fenced_reply_accepted() {
        let tax = Taxonomy::default_wvs();
        let r = parse_profile_reply("```yaml\nReligious Values: >\n  Devout.\n```", "Religious Values", &tax).unwrap();
        assert_eq!(r.synthesis.as_deref(), Some("Devout."));
    }

    #[test]
    fn filter_cases() {
        let mut p = ValueProfile::default();
        for k in ["A", "B", "C", "D", "E"] {
            p.synopses.insert(k.into(), format!("s{k}"));
        }
        assert_eq!(filter_profile(&p, ["A", "C", "Z"]).len(), 2);
        assert!(filter_profile(&p, ["X"]).is_empty());
        assert_eq!(filter_profile(&p, p.synopses.keys().map(|s| s.as_str())), p.synopses);
    }
}

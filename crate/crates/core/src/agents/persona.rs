use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{parse_choice, parse_single_object, render_options, AgentError, ChosenAnswer, QueryOption};
use crate::corpus::{filter_profile, ValueProfile};
use crate::llm::{call_with_retry, CallRecord, LlmBackend, LlmRequest, Template};
use crate::retrieval::{render_demographic_description, ScoredTriple};

const MIN_REASONING_WORDS: usize = 250;

/// Conditioning inputs for one persona agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaContext {
    pub persona_id: String,
    pub respondent_id: String,
    /// Label sentences of the retrieved triples.
    pub ontology_context: Vec<String>,
    /// Classes touched by the retrieved triples.
    pub ontology_classes: Vec<String>,
    pub value_summaries: BTreeMap<String, String>,
    pub demographics: BTreeMap<String, String>,
}

pub fn build_persona_context(
    triples: &[ScoredTriple],
    profile: &ValueProfile,
    demographics: &BTreeMap<String, String>,
    persona_id: &str,
) -> PersonaContext {
    let classes: BTreeSet<&str> = triples
        .iter()
        .flat_map(|t| [t.triple.subject_class.as_str(), t.triple.object_class.as_str()])
        .collect();
    PersonaContext {
        persona_id: persona_id.to_string(),
        respondent_id: profile.respondent_id.clone(),
        ontology_context: triples.iter().map(|t| t.triple.label_sentence.clone()).collect(),
        value_summaries: filter_profile(profile, classes.iter().copied()),
        ontology_classes: classes.into_iter().map(|s| s.to_string()).collect(),
        demographics: demographics.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentFactors {
    pub demographic: String,
    pub value_summaries_used: Vec<String>,
    pub hyper_edges_used: Vec<String>,
    pub integration_rationale: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PersonaReply {
    persona_id: String,
    chosen_answer: String,
    reasoning: String,
    alignment_factors: AlignmentFactors,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonaStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaOutput {
    pub persona_id: String,
    pub status: PersonaStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_answer: Option<ChosenAnswer>,
    #[serde(default)]
    pub reasoning: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment_factors: Option<AlignmentFactors>,
    /// Demographics of the simulated individual, attached by the engine.
    #[serde(default)]
    pub demographics: BTreeMap<String, String>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(default)]
    pub calls: Vec<CallRecord>,
}

impl PersonaOutput {
    pub fn is_ok(&self) -> bool {
        self.status == PersonaStatus::Ok
    }

    /// The reply as the judge sees it.
    pub fn judge_view(&self) -> serde_json::Value {
        serde_json::json!({
            "persona_id": self.persona_id,
            "chosen_answer": self.chosen_answer.as_ref().map(|c| c.render()),
            "reasoning": self.reasoning,
            "alignment_factors": self.alignment_factors,
        })
    }
}

fn bullet_list<'a>(items: impl IntoIterator<Item = &'a str>) -> String {
    let lines: Vec<String> = items.into_iter().map(|s| format!("\n  - {s}")).collect();
    if lines.is_empty() {
        "(none)".to_string()
    } else {
        lines.concat()
    }
}

pub(crate) fn render_persona_prompt(
    template: &Template,
    question: &str,
    options: &[QueryOption],
    ctx: &PersonaContext,
) -> Result<String, AgentError> {
    let summaries: Vec<String> = ctx.value_summaries.iter().map(|(k, v)| format!("{k}: {v}")).collect();
    let nodes = if ctx.ontology_classes.is_empty() {
        "(none)".to_string()
    } else {
        ctx.ontology_classes.join(", ")
    };
    template
        .render(&[
            ("persona_id", &ctx.persona_id),
            ("question", question),
            ("options_text", &render_options(options)),
            ("demographics_text", &render_demographic_description(&ctx.demographics)),
            ("value_summaries_text", &bullet_list(summaries.iter().map(|s| s.as_str()))),
            ("hyper_edges_text", &bullet_list(ctx.ontology_context.iter().map(|s| s.as_str()))),
            ("hyper_nodes_text", &nodes),
        ])
        .map_err(|e| AgentError::Template(e.to_string()))
}

struct Parsed {
    choice: ChosenAnswer,
    reasoning: String,
    factors: AlignmentFactors,
}

fn parse_persona_reply(text: &str, persona_id: &str, options: &[QueryOption]) -> Result<Parsed, String> {
    let r: PersonaReply = parse_single_object(text)?;
    if r.persona_id.trim() != persona_id {
        return Err(format!("persona_id `{}` does not match `{persona_id}`", r.persona_id));
    }
    Ok(Parsed {
        choice: parse_choice(&r.chosen_answer, options)?,
        reasoning: r.reasoning,
        factors: r.alignment_factors,
    })
}

/// Runs one persona agent. Failures are returned as data.
pub fn run_persona<B: LlmBackend + ?Sized>(
    question: &str,
    options: &[QueryOption],
    ctx: &PersonaContext,
    backend: &B,
    template: &Template,
    attempts: usize,
    max_tokens: u32,
) -> PersonaOutput {
    let mut out = PersonaOutput {
        persona_id: ctx.persona_id.clone(),
        status: PersonaStatus::Failed,
        chosen_answer: None,
        reasoning: String::new(),
        alignment_factors: None,
        demographics: ctx.demographics.clone(),
        warnings: Vec::new(),
        failure: None,
        calls: Vec::new(),
    };
    let prompt = match render_persona_prompt(template, question, options, ctx) {
        Ok(p) => p,
        Err(e) => {
            out.failure = Some(e.to_string());
            return out;
        }
    };
    let attempted = call_with_retry(backend, &LlmRequest::new(prompt, max_tokens), attempts, |t| {
        parse_persona_reply(t, &ctx.persona_id, options)
    });
    out.calls = attempted.calls;
    match attempted.result {
        Ok(p) => {
            let words = p.reasoning.split_whitespace().count();
            if words < MIN_REASONING_WORDS {
                out.warnings.push(format!("reasoning has {words} words (< {MIN_REASONING_WORDS})"));
            }
            out.status = PersonaStatus::Ok;
            out.chosen_answer = Some(p.choice);
            out.reasoning = p.reasoning;
            out.alignment_factors = Some(p.factors);
        }
        Err(e) => out.failure = Some(e),
    }
    out
}

/// Runs every persona concurrently; output order follows `contexts`.
pub fn collect_persona_set<B: LlmBackend + ?Sized>(
    question: &str,
    options: &[QueryOption],
    contexts: &[PersonaContext],
    backend: &B,
    template: &Template,
    attempts: usize,
    max_tokens: u32,
) -> Vec<PersonaOutput> {
    contexts
        .par_iter()
        .map(|ctx| run_persona(question, options, ctx, backend, template, attempts, max_tokens))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{FnBackend, TemplateSet};
    use crate::ontology::OntologyTriple;

    fn st(a: &str, b: &str) -> ScoredTriple {
        ScoredTriple {
            triple: OntologyTriple::new(a, "shape", format!("{a} shapes {b}"), b),
            score: 0.5,
        }
    }

    fn profile(keys: &[&str]) -> ValueProfile {
        let mut p = ValueProfile {
            respondent_id: "r1".into(),
            ..Default::default()
        };
        for k in keys {
            p.synopses.insert(k.to_string(), format!("about {k}"));
        }
        p
    }

    fn reply(id: &str, answer: &str) -> String {
        serde_json::json!({
            "persona_id": id,
            "chosen_answer": answer,
            "reasoning": "word ".repeat(260),
            "alignment_factors": {
                "demographic": "age and country",
                "value_summaries_used": ["A"],
                "hyper_edges_used": [],
                "integration_rationale": "r"
            }
        })
        .to_string()
    }

    fn opts() -> Vec<QueryOption> {
        vec![QueryOption::new("1", "Yes"), QueryOption::new("2", "No")]
    }

    #[test]
    fn context_intersects_classes() {
        let ctx = build_persona_context(&[st("A", "B")], &profile(&["A", "C"]), &BTreeMap::new(), "P1");
        assert_eq!(ctx.value_summaries.keys().collect::<Vec<_>>(), vec!["A"]);
        let empty = build_persona_context(&[], &profile(&["A"]), &BTreeMap::new(), "P1");
        assert!(empty.ontology_context.is_empty() && empty.value_summaries.is_empty());
        let shared = build_persona_context(&[st("A", "B"), st("A", "C"), st("D", "A")], &profile(&[]), &BTreeMap::new(), "P1");
        assert_eq!(shared.ontology_classes, vec!["A", "B", "C", "D"]);
    }

    #[test]
    fn ok_and_membership_failure() {
        let ts = TemplateSet::default();
        let ctx = build_persona_context(&[st("A", "B")], &profile(&["A"]), &BTreeMap::new(), "P1");
        let good = FnBackend::new("m", |_: &str| reply("P1", "1: Yes"));
        let out = run_persona("Q?", &opts(), &ctx, &good, &ts.persona, 3, 100);
        assert!(out.is_ok());
        assert_eq!(out.chosen_answer.unwrap().option_value, "1");
        assert!(out.warnings.is_empty());

        let bad = FnBackend::new("m", |_: &str| reply("P1", "9: Maybe"));
        let out = run_persona("Q?", &opts(), &ctx, &bad, &ts.persona, 3, 100);
        assert_eq!(out.status, PersonaStatus::Failed);
        assert_eq!(out.calls.len(), 3);

        let two = FnBackend::new("m", |_: &str| format!("{}{}", reply("P1", "1: Yes"), reply("P1", "2: No")));
        assert_eq!(run_persona("Q?", &opts(), &ctx, &two, &ts.persona, 3, 100).status, PersonaStatus::Failed);
    }

    #[test]
    fn prompt_is_filled() {
        let ts = TemplateSet::default();
        let mut d = BTreeMap::new();
        d.insert("age".to_string(), "34".to_string());
        let ctx = build_persona_context(&[st("A", "B")], &profile(&["A"]), &d, "P7");
        let p = render_persona_prompt(&ts.persona, "Is God important?", &opts(), &ctx).unwrap();
        assert!(p.contains("You are Persona Agent P7."));
        assert!(p.contains("[DEMOGRAPHICS]: age: 34"));
        assert!(p.contains("- A shapes B"));
        assert!(p.contains("\"persona_id\": \"P7\""));
        assert!(!p.contains("{question}"));
    }

    #[test]
    fn short_reasoning_warns() {
        let ts = TemplateSet::default();
        let ctx = build_persona_context(&[], &profile(&[]), &BTreeMap::new(), "P1");
        let b = FnBackend::new("m", |_: &str| reply("P1", "2: No").replace(&"word ".repeat(260), "short"));
        let out = run_persona("Q?", &opts(), &ctx, &b, &ts.persona, 3, 100);
        assert!(out.is_ok());
        assert_eq!(out.warnings.len(), 1);
    }
}

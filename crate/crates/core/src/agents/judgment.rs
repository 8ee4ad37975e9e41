use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{parse_judge_reply, render_options, AgentError, DecisionPath, JudgmentOutput, PersonaOutput, QueryOption};
use crate::llm::{call_with_retry, LlmBackend, LlmRequest, Template};

/// Per-option counts over ok personas.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VoteSummary {
    pub counts: BTreeMap<String, usize>,
    pub total_ok: usize,
    pub total_failed: usize,
}

impl VoteSummary {
    pub fn count(&self, option_value: &str) -> usize {
        self.counts.get(option_value).copied().unwrap_or(0)
    }
}

pub fn compute_vote_summary(outputs: &[PersonaOutput]) -> VoteSummary {
    let mut v = VoteSummary::default();
    for o in outputs {
        match (&o.chosen_answer, o.is_ok()) {
            (Some(c), true) => {
                *v.counts.entry(c.option_value.clone()).or_default() += 1;
                v.total_ok += 1;
            }
            _ => v.total_failed += 1,
        }
    }
    v
}

/// Renders the summary in option order, listing zero-vote options too.
pub fn render_vote_summary(votes: &VoteSummary, options: &[QueryOption]) -> String {
    let mut parts: Vec<String> = options
        .iter()
        .map(|o| format!("{}: {} ({} votes)", o.value, o.text, votes.count(&o.value)))
        .collect();
    parts.push(format!("valid personas: {}", votes.total_ok));
    parts.push(format!("failed personas: {}", votes.total_failed));
    parts.join("; ")
}

pub(crate) fn render_persona_outputs(outputs: &[PersonaOutput]) -> String {
    let ok: Vec<serde_json::Value> = outputs.iter().filter(|o| o.is_ok()).map(|o| o.judge_view()).collect();
    serde_json::to_string_pretty(&ok).expect("persona outputs serialize")
}

/// Runs the judgment agent over the persona outputs and the vote summary.
#[allow(clippy::too_many_arguments)]
pub fn run_judgment<B: LlmBackend + ?Sized>(
    question: &str,
    options: &[QueryOption],
    outputs: &[PersonaOutput],
    votes: &VoteSummary,
    backend: &B,
    template: &Template,
    attempts: usize,
    max_tokens: u32,
) -> Result<JudgmentOutput, (AgentError, Vec<crate::llm::CallRecord>)> {
    if !outputs.iter().any(|o| o.is_ok()) {
        return Err((AgentError::NoEvidence, Vec::new()));
    }
    let prompt = template
        .render(&[
            ("question_text", question),
            ("options_text", &render_options(options)),
            ("vote_summary", &render_vote_summary(votes, options)),
            ("persona_outputs", &render_persona_outputs(outputs)),
        ])
        .map_err(|e| (AgentError::Template(e.to_string()), Vec::new()))?;
    let attempted = call_with_retry(backend, &LlmRequest::new(prompt, max_tokens), attempts, |t| {
        parse_judge_reply(t, options)
    });
    match attempted.result {
        Ok((final_answer, reasoning)) => Ok(JudgmentOutput {
            final_answer,
            reasoning,
            decision_path: DecisionPath::Model,
            calls: attempted.calls,
        }),
        Err(e) => Err((AgentError::JudgmentFailed(e), attempted.calls)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{ChosenAnswer, PersonaStatus};
    use crate::llm::{FnBackend, TemplateSet};

    pub(crate) fn out(id: &str, choice: Option<&str>) -> PersonaOutput {
        PersonaOutput {
            persona_id: id.into(),
            status: if choice.is_some() { PersonaStatus::Ok } else { PersonaStatus::Failed },
            chosen_answer: choice.map(|c| ChosenAnswer {
                option_value: c.into(),
                option_text: format!("text {c}"),
            }),
            reasoning: "because".into(),
            alignment_factors: None,
            demographics: BTreeMap::new(),
            warnings: vec![],
            failure: None,
            calls: vec![],
        }
    }

    fn opts() -> Vec<QueryOption> {
        vec![QueryOption::new("A", "text A"), QueryOption::new("B", "text B")]
    }

    #[test]
    fn vote_counts() {
        let v = compute_vote_summary(&[out("1", Some("A")), out("2", Some("A")), out("3", Some("B"))]);
        assert_eq!(v.count("A"), 2);
        assert_eq!(v.count("B"), 1);
        let v = compute_vote_summary(&[out("1", Some("A")), out("2", None), out("3", Some("B"))]);
        assert_eq!((v.count("A"), v.count("B"), v.total_failed), (1, 1, 1));
        let v = compute_vote_summary(&[]);
        assert!(v.counts.is_empty());
    }

    #[test]
    fn judge_echoes_majority() {
        let ts = TemplateSet::default();
        let a = [out("1", Some("A")), out("2", Some("A")), out("3", Some("B"))];
        let votes = compute_vote_summary(&a);
        let judge = FnBackend::new("j", |p: &str| {
            let pick = if p.contains("A: text A (2 votes)") { "A: text A" } else { "B: text B" };
            format!("{{\"final_answer\": \"{pick}\", \"reasoning\": \"majority\"}}")
        });
        let j = run_judgment("Q", &opts(), &a, &votes, &judge, &ts.judgment, 3, 100).unwrap();
        assert_eq!(j.final_answer.option_value, "A");
        assert_eq!(j.decision_path, DecisionPath::Model);
    }

    #[test]
    fn judge_failures() {
        let ts = TemplateSet::default();
        let a = [out("1", Some("A"))];
        let votes = compute_vote_summary(&a);
        let bad = FnBackend::new("j", |_: &str| "{\"final_answer\": \"Z: no\", \"reasoning\": \"x\"}".to_string());
        let err = run_judgment("Q", &opts(), &a, &votes, &bad, &ts.judgment, 3, 100).unwrap_err();
        assert!(matches!(err.0, AgentError::JudgmentFailed(_)));
        assert_eq!(err.1.len(), 3);
        let failed = [out("1", None), out("2", None)];
        let err = run_judgment("Q", &opts(), &failed, &compute_vote_summary(&failed), &bad, &ts.judgment, 3, 100)
            .unwrap_err();
        assert_eq!(err.0, AgentError::NoEvidence);
    }

    #[test]
    fn judge_prompt_excludes_failed_personas() {
        let a = [out("P1", Some("A")), out("P2", None)];
        let text = render_persona_outputs(&a);
        assert!(text.contains("P1") && !text.contains("P2"));
    }
}

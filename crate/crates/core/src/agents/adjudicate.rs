//! Deterministic reference adjudicator: evidence first, votes only under a
//! near tie, then demographic relevance, then the smallest option value.

use std::collections::{BTreeMap, BTreeSet};

use super::{AgentError, ChosenAnswer, DecisionPath, JudgmentOutput, PersonaOutput, VoteSummary};

pub const DEFAULT_DELTA: u32 = 1;

fn mentions(haystack: &str, attribute: &str) -> bool {
    let attr = attribute.trim().to_lowercase();
    if attr.is_empty() {
        return false;
    }
    haystack.contains(&attr) || haystack.contains(&attr.replace('_', " "))
}

/// Evidence score in `0..=3` for one ok persona. Attribute names are taken
/// from the persona's own demographics and the target's.
pub fn evidence_score(output: &PersonaOutput, target: &BTreeMap<String, String>) -> u32 {
    let Some(f) = &output.alignment_factors else {
        return 0;
    };
    let text = f.demographic.to_lowercase();
    let names: BTreeSet<&str> = output
        .demographics
        .keys()
        .chain(target.keys())
        .map(|k| k.as_str())
        .filter(|k| mentions(&text, k))
        .collect();
    u32::from(names.len() >= 2) + u32::from(!f.value_summaries_used.is_empty()) + u32::from(!f.hyper_edges_used.is_empty())
}

fn relevance(output: &PersonaOutput, target: &BTreeMap<String, String>) -> usize {
    target
        .iter()
        .filter(|(k, v)| output.demographics.get(*k) == Some(*v))
        .count()
}

#[derive(Default)]
struct Tally {
    evidence: u32,
    relevance: usize,
    text: String,
}

pub fn adjudicate_reference(
    outputs: &[PersonaOutput],
    votes: &VoteSummary,
    target: &BTreeMap<String, String>,
    delta: u32,
) -> Result<JudgmentOutput, AgentError> {
    let mut tally: BTreeMap<String, Tally> = BTreeMap::new();
    for o in outputs.iter().filter(|o| o.is_ok()) {
        let Some(c) = &o.chosen_answer else { continue };
        let t = tally.entry(c.option_value.clone()).or_default();
        t.evidence += evidence_score(o, target);
        t.relevance += relevance(o, target);
        if t.text.is_empty() {
            t.text = c.option_text.clone();
        }
    }
    let max_e = tally.values().map(|t| t.evidence).max().ok_or(AgentError::NoEvidence)?;
    let near: Vec<&String> = tally
        .iter()
        .filter(|(_, t)| t.evidence + delta >= max_e)
        .map(|(k, _)| k)
        .collect();
    let evidence_line = tally
        .iter()
        .map(|(k, t)| format!("{k}={}", t.evidence))
        .collect::<Vec<_>>()
        .join(", ");

    let (winner, path) = if near.len() == 1 {
        (near[0].clone(), DecisionPath::Evidence)
    } else {
        let max_v = near.iter().map(|k| votes.count(k)).max().unwrap_or(0);
        let by_vote: Vec<&String> = near.iter().copied().filter(|k| votes.count(k) == max_v).collect();
        if by_vote.len() == 1 {
            (by_vote[0].clone(), DecisionPath::Vote)
        } else {
            let max_r = by_vote.iter().map(|k| tally[*k].relevance).max().unwrap_or(0);
            let by_rel: Vec<&String> = by_vote.iter().copied().filter(|k| tally[*k].relevance == max_r).collect();
            if by_rel.len() == 1 {
                (by_rel[0].clone(), DecisionPath::Relevance)
            } else {
                // BTreeMap order makes the first entry the smallest value.
                (by_rel[0].clone(), DecisionPath::Fallback)
            }
        }
    };
    Ok(JudgmentOutput {
        final_answer: ChosenAnswer {
            option_text: tally[&winner].text.clone(),
            option_value: winner.clone(),
        },
        reasoning: format!("evidence: {evidence_line}; margin {delta}; resolved by {path:?} in favour of {winner}"),
        decision_path: path,
        calls: Vec::new(),
    })
}

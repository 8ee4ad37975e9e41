//! Persona simulation, vote summaries, judgment and the end-to-end
//! answering pipeline.

mod adjudicate;
mod judgment;
mod persona;
mod pipeline;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::CallRecord;
use crate::retrieval::RetrievalError;

pub use adjudicate::{adjudicate_reference, evidence_score, DEFAULT_DELTA};
pub use judgment::{compute_vote_summary, render_vote_summary, run_judgment, VoteSummary};
pub use persona::{
    build_persona_context, collect_persona_set, run_persona, AlignmentFactors, PersonaContext,
    PersonaOutput, PersonaStatus,
};
pub use pipeline::{
    AgentConfig, Answered, JudgeMode, Pipeline, PipelineError, PersonaFanout, PersonaTrace, RunTrace,
    Variant,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AgentError {
    #[error("no persona produced a valid answer")]
    NoEvidence,
    #[error("judgment failed: {0}")]
    JudgmentFailed(String),
    #[error("variant failed: {0}")]
    VariantFailed(String),
    #[error("retrieval returned no individuals")]
    EmptyRetrieval,
    #[error("query has no options")]
    EmptyOptions,
    #[error("template error: {0}")]
    Template(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryOption {
    pub value: String,
    pub text: String,
}

impl QueryOption {
    pub fn new(value: impl Into<String>, text: impl Into<String>) -> Self {
        QueryOption {
            value: value.into(),
            text: text.into(),
        }
    }
}

/// A chosen option as `value` plus its display text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChosenAnswer {
    pub option_value: String,
    pub option_text: String,
}

impl ChosenAnswer {
    pub fn render(&self) -> String {
        format!("{}: {}", self.option_value, self.option_text)
    }
}

pub fn render_options(options: &[QueryOption]) -> String {
    options
        .iter()
        .map(|o| format!("{}: {}", o.value, o.text))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Resolves a `"<value>: <text>"` answer against the option list. The
/// value decides; the text is taken from the option list.
pub fn parse_choice(answer: &str, options: &[QueryOption]) -> Result<ChosenAnswer, String> {
    let value = answer.split_once(':').map_or(answer, |(v, _)| v).trim();
    options
        .iter()
        .find(|o| o.value.trim() == value)
        .map(|o| ChosenAnswer {
            option_value: o.value.clone(),
            option_text: o.text.clone(),
        })
        .ok_or_else(|| format!("`{value}` is not one of the option values"))
}

fn strip_fence(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest.split_once('\n').map_or("", |(_, body)| body);
    rest.trim_end().strip_suffix("```").unwrap_or(rest).trim()
}

/// Parses a reply that must consist of exactly one JSON object.
pub fn parse_single_object<T: DeserializeOwned>(text: &str) -> Result<T, String> {
    let body = strip_fence(text);
    let mut stream = serde_json::Deserializer::from_str(body).into_iter::<serde_json::Value>();
    let first = match stream.next() {
        Some(Ok(v)) => v,
        Some(Err(e)) => return Err(format!("reply is not JSON: {e}")),
        None => return Err("reply is empty".into()),
    };
    if !first.is_object() {
        return Err("reply is not a JSON object".into());
    }
    match stream.next() {
        None => {}
        Some(Ok(_)) => return Err("reply contains more than one JSON value".into()),
        Some(Err(e)) => return Err(format!("trailing text after the JSON object: {e}")),
    }
    serde_json::from_value(first).map_err(|e| format!("reply does not match the schema: {e}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionPath {
    Evidence,
    Vote,
    Relevance,
    Fallback,
    Model,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentOutput {
    pub final_answer: ChosenAnswer,
    pub reasoning: String,
    pub decision_path: DecisionPath,
    #[serde(default)]
    pub calls: Vec<CallRecord>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JudgeReply {
    final_answer: String,
    reasoning: String,
}

/// Parses and validates a judge-style `{final_answer, reasoning}` reply.
pub(crate) fn parse_judge_reply(text: &str, options: &[QueryOption]) -> Result<(ChosenAnswer, String), String> {
    let r: JudgeReply = parse_single_object(text)?;
    Ok((parse_choice(&r.final_answer, options)?, r.reasoning))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> Vec<QueryOption> {
        vec![QueryOption::new("1", "Yes"), QueryOption::new("2", "No")]
    }

    #[test]
    fn choice_parsing() {
        assert_eq!(parse_choice("1: Yes", &opts()).unwrap().option_value, "1");
        assert_eq!(parse_choice(" 2 ", &opts()).unwrap().option_text, "No");
        assert!(parse_choice("9: Maybe", &opts()).is_err());
    }

    #[test]
    fn single_object_rule() {
        #[derive(Deserialize, Debug)]
        struct X {
            #[allow(dead_code)]
            a: u8,
        }
        assert!(parse_single_object::<X>("{\"a\":1}").is_ok());
        assert!(parse_single_object::<X>("```json\n{\"a\":1}\n```").is_ok());
        assert!(parse_single_object::<X>("{\"a\":1}{\"a\":2}").is_err());
        assert!(parse_single_object::<X>("{\"a\":1} thanks").is_err());
        assert!(parse_single_object::<X>("[1]").is_err());
        assert!(parse_single_object::<X>("Sure! {\"a\":1}").is_err());
    }

    #[test]
    fn judge_reply_rejects_extra_fields() {
        assert!(parse_judge_reply("{\"final_answer\":\"1: Yes\",\"reasoning\":\"r\"}", &opts()).is_ok());
        assert!(parse_judge_reply("{\"final_answer\":\"1: Yes\",\"reasoning\":\"r\",\"x\":1}", &opts()).is_err());
    }
}

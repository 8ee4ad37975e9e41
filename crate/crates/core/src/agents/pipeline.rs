use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::judgment::compute_vote_summary;
use super::persona::{build_persona_context, collect_persona_set, PersonaContext, PersonaOutput};
use super::{
    adjudicate_reference, parse_judge_reply, parse_single_object, render_options, run_judgment, AgentError,
    DecisionPath, JudgmentOutput, QueryOption, VoteSummary, DEFAULT_DELTA,
};
use crate::llm::{call_with_retry, usage_of, CallRecord, LlmBackend, LlmRequest, TemplateSet, TokenUsage, DEFAULT_ATTEMPTS};
use crate::retrieval::{render_demographic_description, RetrievalContext, RetrievalSizes, Retriever, ScoredTriple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonaFanout {
    /// One persona per retrieved individual, conditioned on every retrieved triple.
    #[default]
    PerIndividual,
    /// One persona per (individual, triple) pair.
    PerPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeMode {
    #[default]
    Model,
    /// Use the deterministic reference adjudicator instead of a model call.
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    SingleJudge,
    ValueInference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub fanout: PersonaFanout,
    pub judge: JudgeMode,
    pub delta: u32,
    pub attempts: usize,
    pub persona_max_tokens: u32,
    pub judge_max_tokens: u32,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            fanout: PersonaFanout::PerIndividual,
            judge: JudgeMode::Model,
            delta: DEFAULT_DELTA,
            attempts: DEFAULT_ATTEMPTS,
            persona_max_tokens: 2048,
            judge_max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaTrace {
    pub context: PersonaContext,
    pub output: PersonaOutput,
}

/// Every intermediate artifact of one answered query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub mode: Variant,
    pub question: String,
    pub options: Vec<QueryOption>,
    pub retrieval: RetrievalContext,
    #[serde(default)]
    pub personas: Vec<PersonaTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub votes: Option<VoteSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judgment: Option<JudgmentOutput>,
    /// Raw reply of the value inference stage, kept verbatim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inferred_profile_raw: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inferred_profile: Option<BTreeMap<String, String>>,
    /// Calls not attached to a persona or a successful judgment.
    #[serde(default)]
    pub stage_calls: Vec<CallRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub usage: TokenUsage,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl RunTrace {
    fn new(mode: Variant, question: &str, options: &[QueryOption], retrieval: RetrievalContext) -> Self {
        RunTrace {
            mode,
            question: question.to_string(),
            options: options.to_vec(),
            warnings: retrieval.warnings.clone(),
            retrieval,
            personas: Vec::new(),
            votes: None,
            judgment: None,
            inferred_profile_raw: None,
            inferred_profile: None,
            stage_calls: Vec::new(),
            error: None,
            usage: TokenUsage::default(),
        }
    }

    pub fn calls(&self) -> impl Iterator<Item = &CallRecord> {
        self.personas
            .iter()
            .flat_map(|p| p.output.calls.iter())
            .chain(self.judgment.iter().flat_map(|j| j.calls.iter()))
            .chain(self.stage_calls.iter())
    }

    /// Sums token counts over every recorded call.
    pub fn recompute_usage(&mut self) {
        let calls: Vec<CallRecord> = self.calls().cloned().collect();
        self.usage = usage_of(&calls);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answered {
    pub judgment: JudgmentOutput,
    pub trace: RunTrace,
}

/// An error together with whatever trace was built before it occurred.
#[derive(Debug, Clone, Error)]
#[error("{error}")]
pub struct PipelineError {
    pub error: AgentError,
    pub trace: Option<Box<RunTrace>>,
}

pub struct Pipeline {
    pub retriever: Retriever,
    pub backend: Arc<dyn LlmBackend>,
    pub templates: TemplateSet,
    pub sizes: RetrievalSizes,
    pub config: AgentConfig,
}

fn fail(error: AgentError, mut trace: RunTrace) -> PipelineError {
    trace.error = Some(error.to_string());
    trace.recompute_usage();
    PipelineError {
        error,
        trace: Some(Box::new(trace)),
    }
}

fn bullets(lines: impl IntoIterator<Item = String>) -> String {
    let lines: Vec<String> = lines.into_iter().map(|s| format!("\n  - {s}")).collect();
    if lines.is_empty() {
        "(none)".to_string()
    } else {
        lines.concat()
    }
}

fn render_individuals(contexts: &[PersonaContext]) -> String {
    bullets(contexts.iter().enumerate().map(|(i, c)| {
        let summaries = if c.value_summaries.is_empty() {
            "(none)".to_string()
        } else {
            c.value_summaries
                .iter()
                .map(|(k, v)| format!("{k}: {v}"))
                .collect::<Vec<_>>()
                .join(" | ")
        };
        format!(
            "Individual {}: demographics: {}; value summaries: {summaries}",
            i + 1,
            render_demographic_description(&c.demographics)
        )
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InferenceReply {
    inferred_profile: BTreeMap<String, String>,
}

impl Pipeline {
    pub fn new(retriever: Retriever, backend: Arc<dyn LlmBackend>, templates: TemplateSet) -> Self {
        Pipeline {
            retriever,
            backend,
            templates,
            sizes: RetrievalSizes::default(),
            config: AgentConfig::default(),
        }
    }

    fn demographics_of(&self, respondent_id: &str) -> BTreeMap<String, String> {
        self.retriever
            .corpus
            .get(respondent_id)
            .map(|r| r.demographics.clone())
            .unwrap_or_default()
    }

    /// Builds persona contexts for the retrieved individuals per the fanout mode.
    pub fn persona_contexts(&self, ctx: &RetrievalContext, warnings: &mut Vec<String>) -> Vec<PersonaContext> {
        let pairwise = self.config.fanout == PersonaFanout::PerPair;
        if pairwise && ctx.triples.is_empty() {
            warnings.push("no triples retrieved; per_pair fanout falls back to one persona per individual".into());
        }
        let mut out = Vec::new();
        for (i, profile) in ctx.profiles.iter().enumerate() {
            let demo = self.demographics_of(&profile.respondent_id);
            if pairwise && !ctx.triples.is_empty() {
                for (h, t) in ctx.triples.iter().enumerate() {
                    let id = format!("P{}.{}", i + 1, h + 1);
                    out.push(build_persona_context(std::slice::from_ref(t), profile, &demo, &id));
                }
            } else {
                out.push(build_persona_context(&ctx.triples, profile, &demo, &format!("P{}", i + 1)));
            }
        }
        out
    }

    fn retrieve(
        &self,
        mode: Variant,
        question: &str,
        options: &[QueryOption],
        target: &BTreeMap<String, String>,
    ) -> Result<RunTrace, PipelineError> {
        if options.is_empty() {
            return Err(PipelineError {
                error: AgentError::EmptyOptions,
                trace: None,
            });
        }
        let ctx = self.retriever.retrieve(question, target, &self.sizes).map_err(|e| PipelineError {
            error: e.into(),
            trace: None,
        })?;
        let trace = RunTrace::new(mode, question, options, ctx);
        if trace.retrieval.individuals.is_empty() {
            return Err(fail(AgentError::EmptyRetrieval, trace));
        }
        Ok(trace)
    }

    pub fn answer(
        &self,
        variant: Variant,
        question: &str,
        options: &[QueryOption],
        target: &BTreeMap<String, String>,
    ) -> Result<Answered, PipelineError> {
        match variant {
            Variant::Full => self.answer_query(question, options, target),
            Variant::SingleJudge => self.answer_query_single_judge(question, options, target),
            Variant::ValueInference => self.answer_query_value_inference(question, options, target),
        }
    }

    pub fn answer_query(
        &self,
        question: &str,
        options: &[QueryOption],
        target: &BTreeMap<String, String>,
    ) -> Result<Answered, PipelineError> {
        let mut trace = self.retrieve(Variant::Full, question, options, target)?;
        let contexts = self.persona_contexts(&trace.retrieval, &mut trace.warnings);
        let outputs = collect_persona_set(
            question,
            options,
            &contexts,
            self.backend.as_ref(),
            &self.templates.persona,
            self.config.attempts,
            self.config.persona_max_tokens,
        );
        let votes = compute_vote_summary(&outputs);
        trace.personas = contexts
            .into_iter()
            .zip(outputs)
            .map(|(context, output)| PersonaTrace { context, output })
            .collect();
        trace.votes = Some(votes.clone());
        let outputs: Vec<PersonaOutput> = trace.personas.iter().map(|p| p.output.clone()).collect();
        let judged = match self.config.judge {
            JudgeMode::Reference => adjudicate_reference(&outputs, &votes, target, self.config.delta).map_err(|e| (e, Vec::new())),
            JudgeMode::Model => run_judgment(
                question,
                options,
                &outputs,
                &votes,
                self.backend.as_ref(),
                &self.templates.judgment,
                self.config.attempts,
                self.config.judge_max_tokens,
            ),
        };
        match judged {
            Ok(j) => {
                trace.judgment = Some(j.clone());
                trace.recompute_usage();
                Ok(Answered { judgment: j, trace })
            }
            Err((e, calls)) => {
                trace.stage_calls.extend(calls);
                Err(fail(e, trace))
            }
        }
    }

    pub fn answer_query_single_judge(
        &self,
        question: &str,
        options: &[QueryOption],
        target: &BTreeMap<String, String>,
    ) -> Result<Answered, PipelineError> {
        let mut trace = self.retrieve(Variant::SingleJudge, question, options, target)?;
        let mut contexts = Vec::new();
        for (i, profile) in trace.retrieval.profiles.iter().enumerate() {
            let demo = self.demographics_of(&profile.respondent_id);
            contexts.push(build_persona_context(&trace.retrieval.triples, profile, &demo, &format!("I{}", i + 1)));
        }
        let prompt = match self.templates.single_judge.render(&[
            ("question_text", question),
            ("options_text", &render_options(options)),
            ("target_demographics_text", &render_demographic_description(target)),
            ("individuals_text", &render_individuals(&contexts)),
            ("hyper_edges_text", &edges_text(&trace.retrieval.triples)),
        ]) {
            Ok(p) => p,
            Err(e) => return Err(fail(AgentError::Template(e.to_string()), trace)),
        };
        let attempted = call_with_retry(
            self.backend.as_ref(),
            &LlmRequest::new(prompt, self.config.judge_max_tokens),
            self.config.attempts,
            |t| parse_judge_reply(t, options),
        );
        match attempted.result {
            Ok((final_answer, reasoning)) => {
                let j = JudgmentOutput {
                    final_answer,
                    reasoning,
                    decision_path: DecisionPath::Model,
                    calls: attempted.calls,
                };
                trace.judgment = Some(j.clone());
                trace.recompute_usage();
                Ok(Answered { judgment: j, trace })
            }
            Err(e) => {
                trace.stage_calls.extend(attempted.calls);
                Err(fail(AgentError::JudgmentFailed(e), trace))
            }
        }
    }

    pub fn answer_query_value_inference(
        &self,
        question: &str,
        options: &[QueryOption],
        target: &BTreeMap<String, String>,
    ) -> Result<Answered, PipelineError> {
        let mut trace = self.retrieve(Variant::ValueInference, question, options, target)?;
        let mut contexts = Vec::new();
        for (i, profile) in trace.retrieval.profiles.iter().enumerate() {
            let demo = self.demographics_of(&profile.respondent_id);
            contexts.push(build_persona_context(&trace.retrieval.triples, profile, &demo, &format!("I{}", i + 1)));
        }
        let mut categories: Vec<String> = trace.retrieval.categories.iter().map(|c| c.name.clone()).collect();
        let extra: BTreeSet<String> = contexts.iter().flat_map(|c| c.ontology_classes.iter().cloned()).collect();
        for c in extra {
            if !categories.contains(&c) {
                categories.push(c);
            }
        }
        let prompt = match self.templates.value_inference.render(&[
            ("target_demographics_text", &render_demographic_description(target)),
            ("individuals_text", &render_individuals(&contexts)),
            ("hyper_edges_text", &edges_text(&trace.retrieval.triples)),
            ("categories_text", &categories.join("; ")),
        ]) {
            Ok(p) => p,
            Err(e) => return Err(fail(AgentError::Template(e.to_string()), trace)),
        };
        let attempted = call_with_retry(
            self.backend.as_ref(),
            &LlmRequest::new(prompt, self.config.judge_max_tokens),
            self.config.attempts,
            |t| parse_single_object::<InferenceReply>(t).map(|r| (t.to_string(), r.inferred_profile)),
        );
        trace.stage_calls.extend(attempted.calls);
        let (raw, inferred) = match attempted.result {
            Ok(v) => v,
            Err(e) => return Err(fail(AgentError::VariantFailed(e), trace)),
        };
        let mut profile = BTreeMap::new();
        for (k, v) in inferred {
            match self.retriever.taxonomy.resolve_class(&k) {
                Some((name, _)) if categories.iter().any(|c| c == name) => {
                    profile.insert(name.to_string(), v);
                }
                _ => trace.warnings.push(format!("inferred profile key `{k}` is not a listed category; dropped")),
            }
        }
        trace.inferred_profile_raw = Some(raw);
        trace.inferred_profile = Some(profile.clone());
        let prompt = match self.templates.value_inference_judgment.render(&[
            ("inferred_profile_text", &bullets(profile.iter().map(|(k, v)| format!("{k}: {v}")))),
            ("options_text", &render_options(options)),
            ("question_text", question),
        ]) {
            Ok(p) => p,
            Err(e) => return Err(fail(AgentError::Template(e.to_string()), trace)),
        };
        let attempted = call_with_retry(
            self.backend.as_ref(),
            &LlmRequest::new(prompt, self.config.judge_max_tokens),
            self.config.attempts,
            |t| parse_judge_reply(t, options),
        );
        match attempted.result {
            Ok((final_answer, reasoning)) => {
                let j = JudgmentOutput {
                    final_answer,
                    reasoning,
                    decision_path: DecisionPath::Model,
                    calls: attempted.calls,
                };
                trace.judgment = Some(j.clone());
                trace.recompute_usage();
                Ok(Answered { judgment: j, trace })
            }
            Err(e) => {
                trace.stage_calls.extend(attempted.calls);
                Err(fail(AgentError::JudgmentFailed(e), trace))
            }
        }
    }
}

fn edges_text(triples: &[ScoredTriple]) -> String {
    bullets(triples.iter().map(|t| t.triple.label_sentence.clone()))
}

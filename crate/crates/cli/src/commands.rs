//! Command implementations. Each command reads its inputs from the config,
//! writes into a run directory and returns a small summary.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use valor_core::agents::{AgentError, Pipeline, RunTrace, Variant};
use valor_core::corpus::{
    build_profile, ingest_corpus, parse_records_jsonl, Corpus, CorpusError, IngestMode, ProfileError,
    ProfileOptions, ProfileStore, StoreError,
};
use valor_core::evaluation::{
    correctness, evaluate_run, paired_significance, parse_items_jsonl, EvalError, EvaluationReport, LabeledItem,
};
use valor_core::fsutil::{file_stem, write_atomic};
use valor_core::llm::{
    protocol_mock, BackendError, HttpBackend, LlmBackend, LlmReply, LlmRequest, TemplateError, TemplateSet,
    TokenUsage,
};
use valor_core::ontology::{
    load_taxonomy, ConsolidateError, Ontology, OntologyError, ReviewDecision, ReviewDecisions, Taxonomy,
    TaxonomyError,
};
use valor_core::ontology_builder::{
    default_competency_questions, load_competency_questions, review_apply, run_construction, stratified_sample,
    BuilderError, ConstructionRun, ConstructionStats, GenerationOptions,
};
use valor_core::retrieval::{
    CategoryIndex, DemographicIndex, EmbeddingCache, EmbeddingProvider, HashEmbedder, RemoteEmbedder,
    RemoteTopicClassifier, RetrievalError, Retriever, SimilarityTopicScorer, TopicClassifier,
};
use valor_core::sampling::{build_sample, DatasetSample, KMeansOptions, SamplePlan, SamplingError};

use crate::config::{ConfigError, LlmKind, ModelKind, PipelineConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("I/O error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Builder(#[from] BuilderError),
    #[error(transparent)]
    Consolidate(#[from] ConsolidateError),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("item {item_id}: {message}")]
    Item { item_id: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_text(path: &Path, what: &'static str) -> Result<String, CliError> {
    if !path.is_file() {
        return Err(ConfigError::MissingFile {
            what,
            path: path.to_path_buf(),
        }
        .into());
    }
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_file(path: &Path, body: &str) -> Result<(), CliError> {
    write_atomic(path, body.as_bytes()).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_file(path, &(serde_json::to_string_pretty(value).expect("value serializes") + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Malformed {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn snapshot(cfg: &PipelineConfig, dir: &Path) -> Result<(), CliError> {
    write_file(&dir.join("config.toml"), &cfg.to_toml())
}

/// Bounds the number of requests in flight across all threads.
pub struct LimitedBackend<B> {
    inner: B,
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl<B> LimitedBackend<B> {
    pub fn new(inner: B, limit: usize) -> Self {
        assert!(limit > 0, "limit must be positive");
        LimitedBackend {
            inner,
            limit,
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: LlmBackend> LlmBackend for LimitedBackend<B> {
    fn identity(&self) -> &str {
        self.inner.identity()
    }

    fn complete(&self, request: &LlmRequest) -> Result<LlmReply, BackendError> {
        {
            let mut n = self.in_flight.lock().expect("limiter lock");
            while *n >= self.limit {
                n = self.freed.wait(n).expect("limiter lock");
            }
            *n += 1;
        }
        let out = self.inner.complete(request);
        *self.in_flight.lock().expect("limiter lock") -= 1;
        self.freed.notify_one();
        out
    }
}

pub fn make_backend(cfg: &PipelineConfig) -> Result<Arc<dyn LlmBackend>, CliError> {
    let base: Arc<dyn LlmBackend> = match cfg.llm.kind {
        LlmKind::Mock => Arc::new(protocol_mock()),
        LlmKind::Http => Arc::new(HttpBackend::new(
            cfg.llm.endpoint.clone(),
            cfg.llm.model.clone(),
            cfg.llm.token_env.as_deref(),
            Duration::from_secs(cfg.llm.timeout_secs),
        )?),
    };
    Ok(if cfg.max_parallel > 0 {
        Arc::new(LimitedBackend::new(base, cfg.max_parallel))
    } else {
        base
    })
}

pub struct Models {
    pub provider: Arc<dyn EmbeddingProvider>,
    pub classifier: Arc<dyn TopicClassifier>,
    pub fallback: Arc<dyn TopicClassifier>,
}

pub fn make_models(cfg: &PipelineConfig, tax: &Taxonomy) -> Result<Models, CliError> {
    match cfg.models.kind {
        ModelKind::Hash => {
            let provider: Arc<dyn EmbeddingProvider> = Arc::new(HashEmbedder::new(cfg.models.dimension));
            let scorer: Arc<dyn TopicClassifier> = Arc::new(SimilarityTopicScorer::new(provider.clone(), tax)?);
            Ok(Models {
                provider,
                classifier: scorer.clone(),
                fallback: scorer,
            })
        }
        ModelKind::Remote => {
            let timeout = Duration::from_secs(cfg.models.timeout_secs);
            let provider: Arc<dyn EmbeddingProvider> = Arc::new(RemoteEmbedder::connect(&cfg.models.url, timeout)?);
            let classifier: Arc<dyn TopicClassifier> =
                Arc::new(RemoteTopicClassifier::connect(&cfg.models.url, timeout)?);
            let fallback: Arc<dyn TopicClassifier> = Arc::new(SimilarityTopicScorer::new(provider.clone(), tax)?);
            Ok(Models {
                provider,
                classifier,
                fallback,
            })
        }
    }
}

pub fn load_tax(cfg: &PipelineConfig) -> Result<Taxonomy, CliError> {
    match &cfg.paths.taxonomy {
        Some(p) => Ok(load_taxonomy(&read_text(p, "taxonomy")?)?),
        None => Ok(Taxonomy::default_wvs()),
    }
}

pub fn load_corpus(cfg: &PipelineConfig, tax: &Taxonomy) -> Result<Corpus, CliError> {
    let text = read_text(&cfg.paths.corpus, "corpus")?;
    Ok(ingest_corpus(parse_records_jsonl(&text)?, tax, IngestMode::Lenient)?)
}

pub fn load_templates(cfg: &PipelineConfig) -> Result<TemplateSet, CliError> {
    match &cfg.paths.templates {
        Some(d) => Ok(TemplateSet::load_dir(d)?),
        None => Ok(TemplateSet::default()),
    }
}

pub fn load_items(cfg: &PipelineConfig) -> Result<Vec<LabeledItem>, CliError> {
    let path = cfg.paths.items.as_ref().ok_or(ConfigError::Invalid {
        key: "paths.items",
        message: "an items file is required".into(),
    })?;
    Ok(parse_items_jsonl(&read_text(path, "items")?)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfilesSummary {
    pub built: usize,
    pub skipped: usize,
    pub usage: TokenUsage,
}

/// Builds a value profile for every respondent lacking one in the store.
pub fn cmd_build_profiles(cfg: &PipelineConfig) -> Result<ProfilesSummary, CliError> {
    let tax = load_tax(cfg)?;
    let corpus = load_corpus(cfg, &tax)?;
    let templates = load_templates(cfg)?;
    let backend = make_backend(cfg)?;
    let dir = cfg.profiles_dir();
    let store = ProfileStore::open(&dir)?;
    snapshot(cfg, &dir)?;
    let opts = ProfileOptions {
        attempts: cfg.profiles.attempts,
        max_tokens: cfg.profiles.max_tokens,
    };
    let todo: Vec<_> = corpus
        .records()
        .iter()
        .filter(|r| !store.contains(&r.respondent_id))
        .collect();
    let skipped = corpus.len() - todo.len();
    let results: Vec<Result<TokenUsage, CliError>> = todo
        .par_iter()
        .map(|rec| {
            let p = build_profile(rec, &tax, backend.as_ref(), &templates.value_profile, &opts)?;
            store.save(&p)?;
            Ok(p.usage)
        })
        .collect();
    let mut usage = TokenUsage::default();
    for r in results {
        usage.add(r?);
    }
    log::info!("built {} profiles, {skipped} already present", todo.len());
    Ok(ProfilesSummary {
        built: todo.len(),
        skipped,
        usage,
    })
}

/// Samples respondents, generates candidates and saves the run.
pub fn cmd_build_ontology(cfg: &PipelineConfig, run: &str) -> Result<ConstructionStats, CliError> {
    let tax = load_tax(cfg)?;
    let corpus = load_corpus(cfg, &tax)?;
    let templates = load_templates(cfg)?;
    let backend = make_backend(cfg)?;
    let cqs = match &cfg.paths.cqs {
        Some(p) => load_competency_questions(&read_text(p, "competency questions")?, &tax)?,
        None => default_competency_questions(&tax)?,
    };
    let regions: Vec<String> = if cfg.construction.regions.is_empty() {
        corpus.regions().map(str::to_string).collect()
    } else {
        cfg.construction.regions.clone()
    };
    let sample = stratified_sample(&corpus, &regions, cfg.construction.per_region, cfg.seed)?;
    let dir = cfg.run_dir(run);
    snapshot(cfg, &dir)?;
    let opts = GenerationOptions {
        attempts: cfg.construction.attempts,
        max_tokens: cfg.construction.max_tokens,
    };
    let out = run_construction(
        &cqs,
        &sample,
        &corpus,
        &tax,
        backend.as_ref(),
        &templates.object_property,
        &opts,
        cfg.seed,
        Some(&dir),
    )?;
    Ok(out.stats)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewSummary {
    pub curated: usize,
    pub pending: usize,
    pub rejected: usize,
    pub edit_violations: usize,
    pub quarantined: usize,
    pub ontology: PathBuf,
}

fn prompt_line(input: &mut dyn BufRead, output: &mut dyn Write, prompt: &str) -> Result<Option<String>, CliError> {
    let stdout = Path::new("<stdout>");
    write!(output, "{prompt}").map_err(io_err(stdout))?;
    output.flush().map_err(io_err(stdout))?;
    let mut line = String::new();
    let n = input.read_line(&mut line).map_err(io_err(Path::new("<stdin>")))?;
    Ok((n > 0).then(|| line.trim().to_string()))
}

/// Asks for a decision on each undecided pool triple, appending every answer
/// to `decisions_path` as it is given.
pub fn interactive_review(
    construction: &ConstructionRun,
    decisions_path: &Path,
    input: &mut dyn BufRead,
    output: &mut dyn Write,
) -> Result<usize, CliError> {
    let existing = if decisions_path.is_file() {
        ReviewDecisions::parse_jsonl(&fs::read_to_string(decisions_path).map_err(io_err(decisions_path))?)?
    } else {
        ReviewDecisions::default()
    };
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(decisions_path)
        .map_err(io_err(decisions_path))?;
    let out = Path::new("<stdout>");
    let mut added = 0;
    for t in &construction.pool {
        let key = t.key();
        if existing.0.iter().any(|d| d.key == key) {
            continue;
        }
        writeln!(output, "\n{key}\n  {}", t.label_sentence).map_err(io_err(out))?;
        let decision = loop {
            let Some(answer) = prompt_line(input, output, "[a]ccept [r]eject [e]dit [s]kip [q]uit: ")? else {
                return Ok(added);
            };
            match answer.as_str() {
                "a" => break Some(ReviewDecision::accept(key.clone())),
                "r" => break Some(ReviewDecision::reject(key.clone())),
                "s" => break None,
                "q" => return Ok(added),
                "e" => {
                    let rel = prompt_line(input, output, "new relation (empty keeps): ")?.unwrap_or_default();
                    let label = prompt_line(input, output, "new label (empty keeps): ")?.unwrap_or_default();
                    let rel = (!rel.is_empty()).then_some(rel);
                    let label = (!label.is_empty()).then_some(label);
                    if rel.is_none() && label.is_none() {
                        writeln!(output, "nothing changed").map_err(io_err(out))?;
                        continue;
                    }
                    break Some(ReviewDecision::edit(key.clone(), rel, label));
                }
                _ => writeln!(output, "unrecognized choice").map_err(io_err(out))?,
            }
        };
        if let Some(d) = decision {
            let line = ReviewDecisions(vec![d]).to_jsonl();
            file.write_all(line.as_bytes()).map_err(io_err(decisions_path))?;
            added += 1;
        }
    }
    Ok(added)
}

/// Applies review decisions to a construction run and writes the curated
/// ontology. Without a decisions file, reviews interactively.
pub fn cmd_review(
    cfg: &PipelineConfig,
    run: &str,
    decisions: Option<&Path>,
    input: &mut dyn BufRead,
    output: &mut dyn Write,
) -> Result<ReviewSummary, CliError> {
    let tax = load_tax(cfg)?;
    let dir = cfg.run_dir(run);
    let construction = ConstructionRun::load(&dir)?;
    let decisions_path = match decisions {
        Some(p) => p.to_path_buf(),
        None => {
            let p = dir.join("decisions.jsonl");
            interactive_review(&construction, &p, input, output)?;
            p
        }
    };
    let parsed = ReviewDecisions::parse_jsonl(&read_text(&decisions_path, "review decisions")?)?;
    let (c, quarantined) = review_apply(&construction, &parsed, &tax)?;
    let ontology = cfg.ontology_path();
    write_file(&ontology, &c.ontology.to_jsonl())?;
    let summary = ReviewSummary {
        curated: c.ontology.len(),
        pending: c.pending.len(),
        rejected: c.rejected.len(),
        edit_violations: c.edit_violations.len(),
        quarantined,
        ontology,
    };
    write_json(&dir.join("review.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSummary {
    pub provider: String,
    pub categories: usize,
    pub respondents: usize,
    pub item_questions: usize,
    pub cache_hits: usize,
    pub cache_misses: usize,
}

/// Fills the embedding cache for categories, respondents and item questions.
pub fn cmd_index(cfg: &PipelineConfig) -> Result<IndexSummary, CliError> {
    let tax = load_tax(cfg)?;
    let corpus = load_corpus(cfg, &tax)?;
    let models = make_models(cfg, &tax)?;
    let cache = EmbeddingCache::with_dir(cfg.cache_dir())?;
    CategoryIndex::build(&tax, models.provider.as_ref(), &cache)?;
    DemographicIndex::build(&corpus, models.provider.as_ref(), &cache)?;
    let mut item_questions = 0;
    if cfg.paths.items.is_some() {
        let items = load_items(cfg)?;
        let texts: Vec<&str> = items.iter().map(|i| i.question.as_str()).collect();
        cache.embed_many(&texts, models.provider.as_ref())?;
        item_questions = texts.len();
    }
    Ok(IndexSummary {
        provider: models.provider.identity().to_string(),
        categories: tax.categories().len(),
        respondents: corpus.len(),
        item_questions,
        cache_hits: cache.hits(),
        cache_misses: cache.misses(),
    })
}

/// One line of `predictions.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option_value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option_text: Option<String>,
    pub abstained: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub mode: Variant,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSummary {
    pub items: usize,
    pub answered: usize,
    pub abstained: usize,
    pub resumed: usize,
    pub usage: TokenUsage,
    pub predictions: PathBuf,
}

pub fn build_pipeline(cfg: &PipelineConfig) -> Result<Pipeline, CliError> {
    let tax = load_tax(cfg)?;
    let corpus = load_corpus(cfg, &tax)?;
    let ontology_path = cfg.ontology_path();
    let ontology = if ontology_path.is_file() {
        Ontology::from_jsonl(tax.clone(), &read_text(&ontology_path, "ontology")?)?
    } else {
        log::warn!("no curated ontology at {}; answering without triples", ontology_path.display());
        Ontology::empty(tax.clone())
    };
    let store = ProfileStore::open(cfg.profiles_dir())?;
    let profiles = store
        .load_all()?
        .into_iter()
        .map(|p| (p.respondent_id.clone(), p))
        .collect();
    let models = make_models(cfg, &tax)?;
    let cache = Arc::new(EmbeddingCache::with_dir(cfg.cache_dir())?);
    let retriever = Retriever::new(
        tax,
        ontology,
        corpus,
        profiles,
        models.provider,
        models.classifier,
        models.fallback,
        cache,
    )?;
    let mut pipeline = Pipeline::new(retriever, make_backend(cfg)?, load_templates(cfg)?);
    pipeline.sizes = cfg.retrieval;
    pipeline.config = cfg.agents;
    Ok(pipeline)
}

fn abstains(e: &AgentError) -> bool {
    matches!(
        e,
        AgentError::NoEvidence | AgentError::JudgmentFailed(_) | AgentError::VariantFailed(_)
    )
}

fn answer_item(pipeline: &Pipeline, variant: Variant, item: &LabeledItem) -> Result<(PredictionRecord, RunTrace), CliError> {
    match pipeline.answer(variant, &item.question, &item.options, &item.demographics) {
        Ok(a) => Ok((
            PredictionRecord {
                item_id: item.item_id.clone(),
                option_value: Some(a.judgment.final_answer.option_value.clone()),
                option_text: Some(a.judgment.final_answer.option_text.clone()),
                abstained: false,
                error: None,
                mode: variant,
                usage: a.trace.usage,
            },
            a.trace,
        )),
        Err(e) if abstains(&e.error) && e.trace.is_some() => {
            let trace = *e.trace.expect("checked above");
            Ok((
                PredictionRecord {
                    item_id: item.item_id.clone(),
                    option_value: None,
                    option_text: None,
                    abstained: true,
                    error: Some(e.error.to_string()),
                    mode: variant,
                    usage: trace.usage,
                },
                trace,
            ))
        }
        Err(e) => Err(CliError::Item {
            item_id: item.item_id.clone(),
            message: e.error.to_string(),
        }),
    }
}

/// Answers every item with the configured variant. Items with a persisted
/// record are not asked again.
pub fn cmd_answer(cfg: &PipelineConfig, run: &str) -> Result<AnswerSummary, CliError> {
    let items = load_items(cfg)?;
    let dir = cfg.run_dir(run);
    snapshot(cfg, &dir)?;
    let mut pipeline: Option<Pipeline> = None;
    let mut records = Vec::with_capacity(items.len());
    let mut resumed = 0;
    for item in &items {
        let stem = file_stem(&item.item_id);
        let record_path = dir.join("records").join(format!("{stem}.json"));
        if record_path.is_file() {
            let r: PredictionRecord = read_json(&record_path)?;
            if r.item_id == item.item_id && r.mode == cfg.variant {
                records.push(r);
                resumed += 1;
                continue;
            }
        }
        if pipeline.is_none() {
            pipeline = Some(build_pipeline(cfg)?);
        }
        let p = pipeline.as_ref().expect("built above");
        let (record, trace) = answer_item(p, cfg.variant, item)?;
        write_json(&dir.join("traces").join(format!("{stem}.json")), &trace)?;
        write_json(&record_path, &record)?;
        records.push(record);
    }
    let predictions = dir.join("predictions.jsonl");
    let body: String = records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect();
    write_file(&predictions, &body)?;
    let summary = AnswerSummary {
        items: items.len(),
        answered: records.iter().filter(|r| !r.abstained).count(),
        abstained: records.iter().filter(|r| r.abstained).count(),
        resumed,
        usage: records.iter().map(|r| r.usage).sum(),
        predictions,
    };
    log::info!(
        "answered {} of {} items ({} resumed)",
        summary.answered,
        summary.items,
        summary.resumed
    );
    Ok(summary)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, CliError> {
    let text = read_text(path, "predictions")?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Malformed {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

fn prediction_map(records: &[PredictionRecord]) -> BTreeMap<String, String> {
    records
        .iter()
        .filter_map(|r| r.option_value.clone().map(|v| (r.item_id.clone(), v)))
        .collect()
}

/// Scores a predictions file against the items and tests it against the
/// given baselines.
pub fn cmd_evaluate(
    cfg: &PipelineConfig,
    run: &str,
    method: &str,
    predictions: &Path,
    baselines: &[(String, PathBuf)],
) -> Result<EvaluationReport, CliError> {
    let items = load_items(cfg)?;
    let records = read_predictions(predictions)?;
    let preds = prediction_map(&records);
    let mut report = evaluate_run(method, &preds, &items)?;
    report.usage = Some(records.iter().map(|r| r.usage).sum());
    if !baselines.is_empty() {
        let mut others = BTreeMap::new();
        for (name, path) in baselines {
            let b = prediction_map(&read_predictions(path)?);
            evaluate_run(name, &b, &items)?;
            others.insert(name.clone(), correctness(&b, &items));
        }
        report.significance = paired_significance(&correctness(&preds, &items), &others, cfg.evaluation.alpha)?;
    }
    let dir = cfg.run_dir(run);
    snapshot(cfg, &dir)?;
    write_json(&dir.join("report.json"), &report)?;
    write_file(&dir.join("report.tsv"), &report.to_tsv())?;
    write_file(&dir.join("significance.tsv"), &report.significance_tsv())?;
    Ok(report)
}

/// One line of a vectors file for `sample`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorRecord {
    pub id: String,
    pub dataset: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledDataset {
    pub ids: Vec<String>,
    #[serde(flatten)]
    pub detail: DatasetSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFile {
    pub seed: u64,
    pub total: usize,
    pub datasets: BTreeMap<String, SampledDataset>,
}

fn read_vectors(path: &Path) -> Result<Vec<VectorRecord>, CliError> {
    let text = read_text(path, "vectors")?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Malformed {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

/// Picks representative items per dataset by clustering their vectors.
/// Without a vectors file the item questions are embedded.
pub fn cmd_sample(cfg: &PipelineConfig, run: &str, vectors: Option<&Path>) -> Result<SampleFile, CliError> {
    let records: Vec<VectorRecord> = match vectors {
        Some(p) => read_vectors(p)?,
        None => {
            let items = load_items(cfg)?;
            let tax = load_tax(cfg)?;
            let models = make_models(cfg, &tax)?;
            let cache = EmbeddingCache::with_dir(cfg.cache_dir())?;
            let texts: Vec<&str> = items.iter().map(|i| i.question.as_str()).collect();
            let vecs = cache.embed_many(&texts, models.provider.as_ref())?;
            items
                .iter()
                .zip(vecs)
                .map(|(i, v)| VectorRecord {
                    id: i.item_id.clone(),
                    dataset: i.dataset.clone(),
                    vector: v.into_iter().map(f64::from).collect(),
                })
                .collect()
        }
    };
    let plan = match &cfg.paths.sample_plan {
        Some(p) => SamplePlan::from_json(&read_text(p, "sample plan")?)?,
        None => SamplePlan::default_plan(),
    };
    let mut ids: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut by_dataset: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for r in records {
        ids.entry(r.dataset.clone()).or_default().push(r.id);
        by_dataset.entry(r.dataset).or_default().push(r.vector);
    }
    let opts = KMeansOptions {
        max_iter: cfg.sampling.max_iter,
        tol: cfg.sampling.tol,
    };
    let sample = build_sample(&by_dataset, &plan, cfg.seed, &opts)?;
    let datasets = sample
        .into_iter()
        .map(|(tag, detail)| {
            let names = &ids.get(&tag).map(Vec::as_slice).unwrap_or(&[]);
            let picked = detail.indices.iter().map(|&i| names[i].clone()).collect();
            (tag, SampledDataset { ids: picked, detail })
        })
        .collect();
    let out = SampleFile {
        seed: cfg.seed,
        total: plan.total(),
        datasets,
    };
    let dir = cfg.run_dir(run);
    snapshot(cfg, &dir)?;
    write_json(&dir.join("sample.json"), &out)?;
    Ok(out)
}

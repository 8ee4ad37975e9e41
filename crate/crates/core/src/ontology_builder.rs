//! Competency-question driven candidate generation and its run records.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Corpus, RespondentRecord};
use crate::fsutil::{file_stem, write_atomic};
use crate::llm::{call_with_retry, usage_of, CallRecord, LlmBackend, LlmRequest, Template, TokenUsage};
use crate::ontology::{
    check_candidate_document, consolidate, dedup_candidates, ConsolidateError, Consolidation, OntologyTriple,
    Provenance, ReviewDecisions, Taxonomy,
};

const DEFAULT_CQS: &str = include_str!("../data/competency_questions.jsonl");

#[derive(Debug, Error)]
pub enum BuilderError {
    #[error("not enough respondents: {}", format_shortfalls(.0))]
    InsufficientRegion(Vec<Shortfall>),
    #[error("competency question line {line}: {message}")]
    BadQuestion { line: usize, message: String },
    #[error("duplicate competency question id `{0}`")]
    DuplicateQuestion(String),
    #[error("run directory I/O error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("run file {path} is malformed: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error(transparent)]
    Review(#[from] ConsolidateError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub region: String,
    pub available: usize,
    pub requested: usize,
}

fn format_shortfalls(s: &[Shortfall]) -> String {
    s.iter()
        .map(|s| format!("{} has {} of {}", s.region, s.available, s.requested))
        .collect::<Vec<_>>()
        .join(", ")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BuilderError + '_ {
    move |source| BuilderError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompetencyQuestion {
    pub cq_id: String,
    pub source_domain: String,
    pub target_domain: String,
    pub text: String,
}

/// Parses line-delimited competency questions, canonicalizing domain names.
pub fn load_competency_questions(text: &str, tax: &Taxonomy) -> Result<Vec<CompetencyQuestion>, BuilderError> {
    let mut out: Vec<CompetencyQuestion> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| BuilderError::BadQuestion { line: line_no, message };
        let mut cq: CompetencyQuestion = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if cq.cq_id.trim().is_empty() || cq.text.trim().is_empty() {
            return Err(bad("cq_id and text must be nonempty".into()));
        }
        for d in [&mut cq.source_domain, &mut cq.target_domain] {
            let canonical = tax.domain(d).ok_or_else(|| bad(format!("unknown domain `{d}`")))?;
            *d = canonical.name.clone();
        }
        if out.iter().any(|c| c.cq_id == cq.cq_id) {
            return Err(BuilderError::DuplicateQuestion(cq.cq_id));
        }
        out.push(cq);
    }
    Ok(out)
}

pub fn default_competency_questions(tax: &Taxonomy) -> Result<Vec<CompetencyQuestion>, BuilderError> {
    load_competency_questions(DEFAULT_CQS, tax)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledRespondent {
    pub respondent_id: String,
    pub region: String,
}

fn region_rng(seed: u64, region: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(region.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Draws `per_region` respondents from each region. Within a region the
/// sorted ids are shuffled by a generator seeded from `(seed, region)`, so
/// adding a region never changes another region's draw.
pub fn stratified_sample(
    corpus: &Corpus,
    regions: &[String],
    per_region: usize,
    seed: u64,
) -> Result<Vec<SampledRespondent>, BuilderError> {
    let mut shortfalls = Vec::new();
    let mut out = Vec::new();
    for region in regions {
        let mut ids: Vec<&str> = corpus.in_region(region).map(|r| r.respondent_id.as_str()).collect();
        if ids.len() < per_region {
            shortfalls.push(Shortfall {
                region: region.clone(),
                available: ids.len(),
                requested: per_region,
            });
            continue;
        }
        ids.sort_unstable();
        ids.shuffle(&mut region_rng(seed, region));
        let mut picked: Vec<&str> = ids.into_iter().take(per_region).collect();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|id| SampledRespondent {
            respondent_id: id.to_string(),
            region: region.clone(),
        }));
    }
    if shortfalls.is_empty() {
        Ok(out)
    } else {
        Err(BuilderError::InsufficientRegion(shortfalls))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuarantineKind {
    /// The whole reply failed to parse.
    Parse,
    /// A parsed triple failed validation.
    Validation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineEntry {
    pub cq_id: String,
    pub respondent_id: String,
    pub kind: QuarantineKind,
    pub codes: Vec<String>,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triple: Option<OntologyTriple>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallStatus {
    Ok,
    Unparseable,
    Failed,
}

/// One (question, respondent) generation call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    pub cq_id: String,
    pub respondent_id: String,
    pub status: CallStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    pub candidates: Vec<OntologyTriple>,
    pub quarantine: Vec<QuarantineEntry>,
    pub calls: Vec<CallRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationOptions {
    pub attempts: usize,
    pub max_tokens: u32,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        GenerationOptions {
            attempts: crate::llm::DEFAULT_ATTEMPTS,
            max_tokens: 4096,
        }
    }
}

pub fn render_generation_prompt(
    template: &Template,
    cq: &CompetencyQuestion,
    respondent: &RespondentRecord,
    snapshot: &str,
) -> Result<String, String> {
    let data = serde_json::to_string_pretty(&respondent.answers).expect("answers serialize");
    template
        .render(&[
            ("ONTOLOGY_TTL", snapshot),
            ("CQS", &format!("{}: {}", cq.cq_id, cq.text)),
            ("RESPONDENT_DATA_JSON", &data),
        ])
        .map_err(|e| e.to_string())
}

/// Turns one reply into candidates and quarantine entries.
pub fn process_reply(
    reply: &str,
    cq: &CompetencyQuestion,
    respondent: &RespondentRecord,
    tax: &Taxonomy,
) -> (CallStatus, Vec<OntologyTriple>, Vec<QuarantineEntry>) {
    let entry = |kind, codes, detail, triple| QuarantineEntry {
        cq_id: cq.cq_id.clone(),
        respondent_id: respondent.respondent_id.clone(),
        kind,
        codes,
        detail,
        triple,
    };
    let provenance = Provenance::Generated {
        cq_id: cq.cq_id.clone(),
        respondent_id: respondent.respondent_id.clone(),
        region: respondent.region.clone(),
    };
    match check_candidate_document(reply, tax) {
        Err(e) => (
            CallStatus::Unparseable,
            Vec::new(),
            vec![entry(QuarantineKind::Parse, vec![e.code().to_string()], e.to_string(), None)],
        ),
        Ok(check) => {
            let candidates = check
                .admissible
                .into_iter()
                .map(|t| t.with_provenance(provenance.clone()))
                .collect();
            let quarantine = check
                .rejected
                .into_iter()
                .map(|(t, report)| {
                    let codes: Vec<String> = report.codes().iter().map(|c| c.as_str().to_string()).collect();
                    let detail = codes.join(", ");
                    entry(QuarantineKind::Validation, codes, detail, Some(t.with_provenance(provenance.clone())))
                })
                .collect();
            (CallStatus::Ok, candidates, quarantine)
        }
    }
}

/// One memoryless generation call: the prompt depends only on the question,
/// the respondent and the snapshot.
pub fn generate_candidates<B: LlmBackend + ?Sized>(
    cq: &CompetencyQuestion,
    respondent: &RespondentRecord,
    tax: &Taxonomy,
    snapshot: &str,
    backend: &B,
    template: &Template,
    opts: &GenerationOptions,
) -> Generation {
    let mut g = Generation {
        cq_id: cq.cq_id.clone(),
        respondent_id: respondent.respondent_id.clone(),
        status: CallStatus::Failed,
        reply: None,
        candidates: Vec::new(),
        quarantine: Vec::new(),
        calls: Vec::new(),
        failure: None,
    };
    let prompt = match render_generation_prompt(template, cq, respondent, snapshot) {
        Ok(p) => p,
        Err(e) => {
            g.failure = Some(e);
            return g;
        }
    };
    // Only transport failures are retried; a malformed document is quarantined.
    let attempted = call_with_retry(backend, &LlmRequest::new(prompt, opts.max_tokens), opts.attempts, |t| {
        Ok(t.to_string())
    });
    g.calls = attempted.calls;
    match attempted.result {
        Ok(reply) => {
            let (status, candidates, quarantine) = process_reply(&reply, cq, respondent, tax);
            g.status = status;
            g.candidates = candidates;
            g.quarantine = quarantine;
            g.reply = Some(reply);
        }
        Err(e) => g.failure = Some(e),
    }
    g
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstructionStats {
    pub calls: usize,
    pub candidates: usize,
    pub duplicates: usize,
    pub violations: usize,
    pub failures: usize,
    pub pool: usize,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub cqs: Vec<CompetencyQuestion>,
    pub sample: Vec<SampledRespondent>,
    pub backend: String,
    pub seed: u64,
    pub taxonomy_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstructionRun {
    pub meta: RunMeta,
    pub generations: Vec<Generation>,
    pub pool: Vec<OntologyTriple>,
    pub quarantine: Vec<QuarantineEntry>,
    pub stats: ConstructionStats,
}

fn call_stem(cq_id: &str, respondent_id: &str) -> String {
    format!("{}__{}", file_stem(cq_id), file_stem(respondent_id))
}

fn assemble(meta: RunMeta, generations: Vec<Generation>) -> ConstructionRun {
    let all: Vec<OntologyTriple> = generations.iter().flat_map(|g| g.candidates.iter().cloned()).collect();
    let (pool, duplicates) = dedup_candidates(&all);
    let quarantine: Vec<QuarantineEntry> = generations.iter().flat_map(|g| g.quarantine.iter().cloned()).collect();
    let calls: Vec<CallRecord> = generations.iter().flat_map(|g| g.calls.iter().cloned()).collect();
    let stats = ConstructionStats {
        calls: generations.len(),
        candidates: all.len(),
        duplicates,
        violations: quarantine.len(),
        failures: generations.iter().filter(|g| g.status == CallStatus::Failed).count(),
        pool: pool.len(),
        usage: usage_of(&calls),
    };
    ConstructionRun {
        meta,
        generations,
        pool,
        quarantine,
        stats,
    }
}

/// Generates candidates for every (question, respondent) pair. With a run
/// directory, completed calls are checkpointed there and reused on rerun.
#[allow(clippy::too_many_arguments)]
pub fn run_construction<B: LlmBackend + ?Sized>(
    cqs: &[CompetencyQuestion],
    sample: &[SampledRespondent],
    corpus: &Corpus,
    tax: &Taxonomy,
    backend: &B,
    template: &Template,
    opts: &GenerationOptions,
    seed: u64,
    run_dir: Option<&Path>,
) -> Result<ConstructionRun, BuilderError> {
    let snapshot = tax.to_turtle_snapshot();
    let mut pairs = Vec::new();
    for cq in cqs {
        for s in sample {
            let rec = corpus.get(&s.respondent_id).ok_or_else(|| BuilderError::Malformed {
                path: PathBuf::from(&s.respondent_id),
                message: "sampled respondent is not in the corpus".into(),
            })?;
            pairs.push((cq, rec));
        }
    }
    let checkpoint_dir = run_dir.map(|d| d.join("calls"));
    let generations: Vec<Result<Generation, BuilderError>> = pairs
        .par_iter()
        .map(|(cq, rec)| {
            let path = checkpoint_dir
                .as_ref()
                .map(|d| d.join(format!("{}.json", call_stem(&cq.cq_id, &rec.respondent_id))));
            if let Some(p) = path.as_ref().filter(|p| p.is_file()) {
                let text = fs::read_to_string(p).map_err(io_err(p))?;
                return serde_json::from_str(&text).map_err(|e| BuilderError::Malformed {
                    path: p.clone(),
                    message: e.to_string(),
                });
            }
            let g = generate_candidates(cq, rec, tax, &snapshot, backend, template, opts);
            if let (Some(p), true) = (path, g.status != CallStatus::Failed) {
                let body = serde_json::to_string_pretty(&g).expect("generation serializes");
                write_atomic(&p, body.as_bytes()).map_err(io_err(&p))?;
            }
            Ok(g)
        })
        .collect();
    let generations = generations.into_iter().collect::<Result<Vec<_>, _>>()?;
    let meta = RunMeta {
        cqs: cqs.to_vec(),
        sample: sample.to_vec(),
        backend: backend.identity().to_string(),
        seed,
        taxonomy_version: tax.version().to_string(),
    };
    let run = assemble(meta, generations);
    if let Some(d) = run_dir {
        run.save(d)?;
    }
    Ok(run)
}

fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).expect("record serializes") + "\n")
        .collect()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, BuilderError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| BuilderError::Malformed {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

impl ConstructionRun {
    /// Writes `run.json`, `raw/`, `pool.jsonl`, `quarantine.jsonl` and
    /// `stats.json` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), BuilderError> {
        let write = |name: &str, body: String| {
            let p = dir.join(name);
            write_atomic(&p, body.as_bytes()).map_err(io_err(&p))
        };
        write("run.json", serde_json::to_string_pretty(&self.meta).expect("meta serializes") + "\n")?;
        for g in &self.generations {
            if let Some(reply) = &g.reply {
                write(&format!("raw/{}.ttl", call_stem(&g.cq_id, &g.respondent_id)), reply.clone())?;
            }
        }
        write("generations.jsonl", to_jsonl(&self.generations))?;
        write("pool.jsonl", to_jsonl(&self.pool))?;
        write("quarantine.jsonl", to_jsonl(&self.quarantine))?;
        write("stats.json", serde_json::to_string_pretty(&self.stats).expect("stats serialize") + "\n")
    }

    pub fn load(dir: &Path) -> Result<Self, BuilderError> {
        let meta: RunMeta = read_json(&dir.join("run.json"))?;
        let path = dir.join("generations.jsonl");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let generations = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<Generation>, _>>()
            .map_err(|e| BuilderError::Malformed {
                path: path.clone(),
                message: e.to_string(),
            })?;
        Ok(assemble(meta, generations))
    }

    /// Candidate counts per question, useful for run summaries.
    pub fn candidates_per_question(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for g in &self.generations {
            *out.entry(g.cq_id.clone()).or_insert(0) += g.candidates.len();
        }
        out
    }
}

/// Applies review decisions to the run's pool. Quarantined triples are only
/// reported; they never reach the curated set.
pub fn review_apply(
    run: &ConstructionRun,
    decisions: &ReviewDecisions,
    tax: &Taxonomy,
) -> Result<(Consolidation, usize), BuilderError> {
    let c = consolidate(&run.pool, decisions, tax)?;
    Ok((c, run.quarantine.len()))
}

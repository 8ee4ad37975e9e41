mod common;

use std::fs;
use std::io::Cursor;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use common::toy_config;
use valor_cli::commands::{self, CliError, LimitedBackend, VectorRecord};
use valor_cli::config::ConfigError;
use valor_core::agents::{RunTrace, Variant};
use valor_core::llm::{BackendError, LlmBackend, LlmReply, LlmRequest};
use valor_core::ontology::{ReviewDecision, ReviewDecisions};
use valor_core::ontology_builder::ConstructionRun;

fn no_input() -> (Cursor<Vec<u8>>, Vec<u8>) {
    (Cursor::new(Vec::new()), Vec::new())
}

#[test]
fn build_profiles_skips_existing_profiles() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path(), &[]);
    let first = commands::cmd_build_profiles(&cfg).unwrap();
    assert_eq!((first.built, first.skipped), (10, 0));
    assert!(first.usage.calls >= 10);

    let again = commands::cmd_build_profiles(&cfg).unwrap();
    assert_eq!((again.built, again.skipped), (0, 10));
    assert_eq!(again.usage.calls, 0);

    let victim = fs::read_dir(cfg.profiles_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap() != "config.toml")
        .unwrap();
    fs::remove_file(victim).unwrap();
    let partial = commands::cmd_build_profiles(&cfg).unwrap();
    assert_eq!((partial.built, partial.skipped), (1, 9));
}

#[test]
fn missing_corpus_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path(), &[]);
    fs::remove_file(&cfg.paths.corpus).unwrap();
    let err = commands::cmd_build_profiles(&cfg).unwrap_err();
    assert!(matches!(err, CliError::Config(ConfigError::MissingFile { .. })), "{err}");
}

#[test]
fn ontology_build_and_batch_review() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path(), &[]);
    let stats = commands::cmd_build_ontology(&cfg, "onto").unwrap();
    assert!(stats.calls > 0);
    let run = ConstructionRun::load(&cfg.run_dir("onto")).unwrap();
    assert!(!run.pool.is_empty());

    let decisions = tmp.path().join("decisions.jsonl");
    let all = ReviewDecisions(run.pool.iter().map(|t| ReviewDecision::accept(t.key())).collect());
    fs::write(&decisions, all.to_jsonl()).unwrap();
    let (mut input, mut output) = no_input();
    let summary = commands::cmd_review(&cfg, "onto", Some(&decisions), &mut input, &mut output).unwrap();
    assert_eq!(summary.curated, run.pool.len());
    assert_eq!(summary.pending, 0);
    assert!(summary.ontology.is_file());
    assert!(cfg.run_dir("onto").join("review.json").is_file());
}

#[test]
fn empty_question_file_gives_empty_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path(), &[]);
    fs::write(cfg.paths.cqs.as_ref().unwrap(), "").unwrap();
    let stats = commands::cmd_build_ontology(&cfg, "empty").unwrap();
    assert_eq!(stats.calls, 0);
    assert!(ConstructionRun::load(&cfg.run_dir("empty")).unwrap().pool.is_empty());
}

#[test]
fn seed_changes_the_respondent_sample() {
    let sampled = |seed: &str| {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = toy_config(tmp.path(), &[seed]);
        commands::cmd_build_ontology(&cfg, "onto").unwrap();
        let run = ConstructionRun::load(&cfg.run_dir("onto")).unwrap();
        let mut ids: Vec<String> = run.meta.sample.iter().map(|s| s.respondent_id.clone()).collect();
        ids.sort();
        ids
    };
    let base = sampled("seed=7");
    assert_eq!(base, sampled("seed=7"));
    assert!((0..20).any(|s| sampled(&format!("seed={s}")) != base));
}

#[test]
fn interactive_review_records_each_answer() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path(), &[]);
    commands::cmd_build_ontology(&cfg, "onto").unwrap();
    let run = ConstructionRun::load(&cfg.run_dir("onto")).unwrap();
    assert!(run.pool.len() >= 2, "pool too small for the script");

    let script = "x\na\nr\nq\n";
    let mut input = Cursor::new(script.as_bytes().to_vec());
    let mut output = Vec::new();
    let summary = commands::cmd_review(&cfg, "onto", None, &mut input, &mut output).unwrap();
    let shown = String::from_utf8(output).unwrap();
    assert!(shown.contains("unrecognized choice"));
    assert_eq!(summary.curated, 1);
    assert_eq!(summary.rejected, 1);
    assert_eq!(summary.pending, run.pool.len() - 2);

    let saved = fs::read_to_string(cfg.run_dir("onto").join("decisions.jsonl")).unwrap();
    assert_eq!(saved.lines().count(), 2);

    // A second session only asks about the remaining triples.
    let rest = "a\n".repeat(run.pool.len());
    let mut input = Cursor::new(rest.into_bytes());
    let summary = commands::cmd_review(&cfg, "onto", None, &mut input, &mut Vec::new()).unwrap();
    assert_eq!(summary.curated, run.pool.len() - 1);
    assert_eq!(summary.pending, 0);
}

#[test]
fn answer_resumes_from_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path(), &["variant=single_judge"]);
    commands::cmd_build_profiles(&cfg).unwrap();
    let first = commands::cmd_answer(&cfg, "run").unwrap();
    assert_eq!(first.items, 6);
    assert_eq!(first.resumed, 0);
    let predictions = fs::read(&first.predictions).unwrap();

    let dir = cfg.run_dir("run");
    fs::remove_file(dir.join("records").join("B-2.json")).unwrap();
    let second = commands::cmd_answer(&cfg, "run").unwrap();
    assert_eq!(second.resumed, 5);
    assert_eq!(fs::read(&second.predictions).unwrap(), predictions);

    for entry in fs::read_dir(dir.join("traces")).unwrap() {
        let trace: RunTrace = serde_json::from_str(&fs::read_to_string(entry.unwrap().path()).unwrap()).unwrap();
        assert_eq!(trace.mode, Variant::SingleJudge);
    }
    for r in commands::read_predictions(&second.predictions).unwrap() {
        assert_eq!(r.mode, Variant::SingleJudge);
    }

    // Records from another variant are not reused.
    let mut other = cfg.clone();
    other.variant = Variant::Full;
    assert_eq!(commands::cmd_answer(&other, "run").unwrap().resumed, 0);
}

#[test]
fn evaluate_writes_reports_with_baselines() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path(), &[]);
    commands::cmd_build_profiles(&cfg).unwrap();
    let full = commands::cmd_answer(&cfg, "full").unwrap();
    let mut vi = cfg.clone();
    vi.variant = Variant::ValueInference;
    let base = commands::cmd_answer(&vi, "vi").unwrap();

    let report =
        commands::cmd_evaluate(&cfg, "eval", "full", &full.predictions, &[("vi".into(), base.predictions)]).unwrap();
    assert_eq!(report.significance.len(), 1);
    let dir = cfg.run_dir("eval");
    for f in ["report.json", "report.tsv", "significance.tsv", "config.toml"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    assert!(fs::read_to_string(dir.join("significance.tsv")).unwrap().contains("vi"));
}

#[test]
fn malformed_predictions_name_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path(), &[]);
    let path = tmp.path().join("bad.jsonl");
    fs::write(&path, "\n{not json}\n").unwrap();
    let err = commands::cmd_evaluate(&cfg, "eval", "m", &path, &[]).unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
}

#[test]
fn sample_from_vectors_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path(), &[]);
    let path = tmp.path().join("vectors.jsonl");
    let mut body = String::new();
    for (dataset, offset) in [("A", 0.0), ("B", 50.0)] {
        for i in 0..8 {
            let v = VectorRecord {
                id: format!("{dataset}{i}"),
                dataset: dataset.into(),
                vector: vec![offset + f64::from(i % 4) * 10.0, f64::from(i / 4)],
            };
            body.push_str(&serde_json::to_string(&v).unwrap());
            body.push('\n');
        }
    }
    fs::write(&path, body).unwrap();
    let out = commands::cmd_sample(&cfg, "s", Some(&path)).unwrap();
    assert_eq!(out.total, 4);
    for tag in ["A", "B"] {
        let d = &out.datasets[tag];
        assert_eq!(d.ids.len(), 2);
        assert!(d.ids.iter().all(|id| id.starts_with(tag)));
    }
    assert!(cfg.run_dir("s").join("sample.json").is_file());
    assert_eq!(commands::cmd_sample(&cfg, "s", Some(&path)).unwrap(), out);
}

#[test]
fn sample_embeds_item_questions_by_default() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path(), &[]);
    let out = commands::cmd_sample(&cfg, "s", None).unwrap();
    assert_eq!(out.datasets["A"].ids.len(), 2);
    assert_eq!(out.datasets["B"].ids.len(), 2);
}

#[test]
fn index_warms_the_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path(), &[]);
    commands::cmd_build_profiles(&cfg).unwrap();
    let first = commands::cmd_index(&cfg).unwrap();
    assert_eq!(first.categories, 6);
    assert_eq!(first.respondents, 10);
    assert!(first.cache_misses > 0);
    let second = commands::cmd_index(&cfg).unwrap();
    assert_eq!(second.cache_misses, 0);
}

struct Slow {
    current: AtomicUsize,
    peak: AtomicUsize,
}

impl LlmBackend for Slow {
    fn identity(&self) -> &str {
        "slow"
    }

    fn complete(&self, _request: &LlmRequest) -> Result<LlmReply, BackendError> {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        thread::sleep(Duration::from_millis(15));
        self.current.fetch_sub(1, Ordering::SeqCst);
        Ok(LlmReply {
            text: "ok".into(),
            input_tokens: 1,
            output_tokens: 1,
        })
    }
}

#[test]
fn limited_backend_caps_concurrency() {
    let backend = Arc::new(LimitedBackend::new(
        Slow {
            current: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        },
        2,
    ));
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let b = backend.clone();
            thread::spawn(move || b.complete(&LlmRequest::new("hello", 16)).unwrap())
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let peak = backend_peak(&backend);
    assert!((1..=2).contains(&peak), "peak {peak}");
}

fn backend_peak(b: &LimitedBackend<Slow>) -> usize {
    b.inner().peak.load(Ordering::SeqCst)
}

use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use valor_cli::commands::{self, CliError};
use valor_cli::config::PipelineConfig;

#[derive(Parser)]
#[command(name = "valor", about = "Ontology-guided multi-persona survey answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config file (TOML).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set retrieval.K=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Summarize every respondent's answers into a value profile.
    BuildProfiles {
        #[command(flatten)]
        common: Common,
    },
    /// Generate candidate triples from competency questions.
    BuildOntology {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "ontology")]
        run: String,
    },
    /// Curate a construction run into the ontology file.
    Review {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "ontology")]
        run: String,
        /// Decisions file; when absent, review interactively.
        #[arg(long)]
        decisions: Option<PathBuf>,
    },
    /// Warm the embedding cache.
    Index {
        #[command(flatten)]
        common: Common,
    },
    /// Answer every item with the configured variant.
    Answer {
        #[command(flatten)]
        common: Common,
        /// Run name; defaults to the variant name.
        #[arg(long)]
        run: Option<String>,
    },
    /// Score predictions and test them against baselines.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: PathBuf,
        /// Method name in the report; defaults to the run name.
        #[arg(long)]
        method: Option<String>,
        #[arg(long, default_value = "eval")]
        run: String,
        /// Baseline predictions as `name=path`; repeatable.
        #[arg(long = "baseline", value_name = "NAME=PATH")]
        baselines: Vec<String>,
    },
    /// Select representative items per dataset.
    Sample {
        #[command(flatten)]
        common: Common,
        /// JSONL of `{id, dataset, vector}`; defaults to embedding item questions.
        #[arg(long)]
        vectors: Option<PathBuf>,
        #[arg(long, default_value = "sample")]
        run: String,
    },
}

fn load(common: &Common) -> Result<PipelineConfig, CliError> {
    let cfg = PipelineConfig::load(common.config.as_deref(), &common.overrides)?;
    if cfg.max_parallel > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.max_parallel).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    Ok(cfg)
}

fn print<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("summary serializes"));
}

fn parse_baseline(spec: &str) -> Result<(String, PathBuf), CliError> {
    spec.split_once('=')
        .filter(|(n, p)| !n.is_empty() && !p.is_empty())
        .map(|(n, p)| (n.to_string(), PathBuf::from(p)))
        .ok_or_else(|| valor_cli::config::ConfigError::BadOverride(spec.to_string()).into())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::BuildProfiles { common } => print(&commands::cmd_build_profiles(&load(&common)?)?),
        Command::BuildOntology { common, run } => print(&commands::cmd_build_ontology(&load(&common)?, &run)?),
        Command::Review { common, run, decisions } => {
            let cfg = load(&common)?;
            let stdin = io::stdin();
            let summary = commands::cmd_review(
                &cfg,
                &run,
                decisions.as_deref(),
                &mut stdin.lock(),
                &mut io::stdout(),
            )?;
            print(&summary);
        }
        Command::Index { common } => print(&commands::cmd_index(&load(&common)?)?),
        Command::Answer { common, run } => {
            let cfg = load(&common)?;
            let name = run.unwrap_or_else(|| {
                serde_json::to_value(cfg.variant)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_else(|| "answer".into())
            });
            print(&commands::cmd_answer(&cfg, &name)?);
        }
        Command::Evaluate {
            common,
            predictions,
            method,
            run,
            baselines,
        } => {
            let cfg = load(&common)?;
            let baselines = baselines
                .iter()
                .map(|b| parse_baseline(b))
                .collect::<Result<Vec<_>, _>>()?;
            let method = method.unwrap_or_else(|| run.clone());
            let report = commands::cmd_evaluate(&cfg, &run, &method, &predictions, &baselines)?;
            print!("{}", report.to_tsv());
            if !report.significance.is_empty() {
                print!("{}", report.significance_tsv());
            }
        }
        Command::Sample { common, vectors, run } => {
            let cfg = load(&common)?;
            let out = commands::cmd_sample(&cfg, &run, vectors.as_deref())?;
            for (tag, d) in &out.datasets {
                println!("{tag}\t{}\t{} collisions", d.ids.len(), d.detail.collisions.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

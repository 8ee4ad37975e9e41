//! Pipeline configuration: a TOML file plus `key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use valor_core::agents::{AgentConfig, Variant};
use valor_core::retrieval::RetrievalSizes;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid override `{0}`; expected key=value")]
    BadOverride(String),
    #[error("invalid setting {key}: {message}")]
    Invalid { key: &'static str, message: String },
    #[error("required file {what} not found at {path}")]
    MissingFile { what: &'static str, path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmKind {
    /// Offline backend that answers every shipped prompt deterministically.
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub kind: LlmKind,
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: Option<String>,
    pub timeout_secs: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            kind: LlmKind::Mock,
            endpoint: "http://127.0.0.1:8000/v1/complete".into(),
            model: "gpt-4o-mini".into(),
            token_env: None,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Built-in feature-hashing embedder with the similarity topic scorer.
    #[default]
    Hash,
    /// A model server exposing `/info`, `/embed` and `/topics`.
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    pub kind: ModelKind,
    pub dimension: usize,
    pub url: String,
    pub timeout_secs: u64,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            kind: ModelKind::Hash,
            dimension: 256,
            url: "http://127.0.0.1:8080".into(),
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Root for derived artifacts.
    pub work: PathBuf,
    pub corpus: PathBuf,
    pub taxonomy: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
    pub ontology: Option<PathBuf>,
    pub cqs: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub items: Option<PathBuf>,
    pub sample_plan: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            work: "work".into(),
            corpus: "corpus.jsonl".into(),
            taxonomy: None,
            profiles: None,
            ontology: None,
            cqs: None,
            templates: None,
            cache: None,
            items: None,
            sample_plan: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstructionConfig {
    /// Regions to sample; empty means every region in the corpus.
    pub regions: Vec<String>,
    pub per_region: usize,
    pub attempts: usize,
    pub max_tokens: u32,
}

impl Default for ConstructionConfig {
    fn default() -> Self {
        ConstructionConfig {
            regions: Vec::new(),
            per_region: 20,
            attempts: 3,
            max_tokens: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfilesConfig {
    pub attempts: usize,
    pub max_tokens: u32,
}

impl Default for ProfilesConfig {
    fn default() -> Self {
        ProfilesConfig {
            attempts: 3,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub alpha: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig { alpha: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { max_iter: 300, tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub variant: Variant,
    /// Upper bound on concurrent backend requests; 0 uses one per core.
    pub max_parallel: usize,
    pub paths: PathsConfig,
    pub retrieval: RetrievalSizes,
    pub agents: AgentConfig,
    pub construction: ConstructionConfig,
    pub profiles: ProfilesConfig,
    pub llm: LlmConfig,
    pub models: ModelsConfig,
    pub evaluation: EvaluationConfig,
    pub sampling: SamplingConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            variant: Variant::Full,
            max_parallel: 0,
            paths: PathsConfig::default(),
            retrieval: RetrievalSizes::default(),
            agents: AgentConfig::default(),
            construction: ConstructionConfig::default(),
            profiles: ProfilesConfig::default(),
            llm: LlmConfig::default(),
            models: ModelsConfig::default(),
            evaluation: EvaluationConfig::default(),
            sampling: SamplingConfig::default(),
        }
    }
}

fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(spec.to_string()))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::BadOverride(spec.to_string()));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::BadOverride(spec.to_string()))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_override_value(raw.trim()));
    Ok(())
}

impl PipelineConfig {
    /// Parses TOML text, applies overrides and validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths resolve against its directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let Some(path) = path else {
            return Self::from_toml("", overrides);
        };
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text, overrides)?;
        if let Some(base) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            cfg.paths.rebase(base);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let r = &self.retrieval;
        let positive = [
            ("retrieval.k", r.k),
            ("retrieval.p", r.p),
            ("retrieval.K", r.individuals),
            ("retrieval.triples.max_triples", r.triples.max_triples),
            ("agents.attempts", self.agents.attempts),
            ("construction.attempts", self.construction.attempts),
            ("profiles.attempts", self.profiles.attempts),
            ("models.dimension", self.models.dimension),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(ConfigError::Invalid {
                    key,
                    message: "must be at least 1".into(),
                });
            }
        }
        if !(self.evaluation.alpha > 0.0 && self.evaluation.alpha < 1.0) {
            return Err(ConfigError::Invalid {
                key: "evaluation.alpha",
                message: "must lie in (0, 1)".into(),
            });
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn profiles_dir(&self) -> PathBuf {
        self.paths.profiles.clone().unwrap_or_else(|| self.paths.work.join("profiles"))
    }

    pub fn ontology_path(&self) -> PathBuf {
        self.paths.ontology.clone().unwrap_or_else(|| self.paths.work.join("ontology.jsonl"))
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.paths.cache.clone().unwrap_or_else(|| self.paths.work.join("cache"))
    }

    pub fn run_dir(&self, name: &str) -> PathBuf {
        self.paths.work.join("runs").join(name)
    }
}

impl PathsConfig {
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.work);
        fix(&mut self.corpus);
        for p in [
            &mut self.taxonomy,
            &mut self.profiles,
            &mut self.ontology,
            &mut self.cqs,
            &mut self.templates,
            &mut self.cache,
            &mut self.items,
            &mut self.sample_plan,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }
}

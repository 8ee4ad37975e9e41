#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use valor_cli::config::PipelineConfig;
use valor_core::llm::{protocol_reply, word_count, BackendError, LlmBackend, LlmReply, LlmRequest, TokenUsage};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

/// Copies the toy fixture into `dir` and returns the config path there.
pub fn copy_toy(dir: &Path) -> PathBuf {
    let src = fixtures().join("toy");
    fs::create_dir_all(dir).unwrap();
    for entry in fs::read_dir(&src).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), dir.join(entry.file_name())).unwrap();
    }
    dir.join("config.toml")
}

pub fn toy_config(dir: &Path, overrides: &[&str]) -> PipelineConfig {
    let path = copy_toy(dir);
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    PipelineConfig::load(Some(&path), &overrides).unwrap()
}

/// Protocol mock that also tallies the token counts it reports.
#[derive(Default)]
pub struct RecordingMock {
    pub usage: Mutex<TokenUsage>,
    pub prompts: Mutex<Vec<String>>,
}

impl LlmBackend for RecordingMock {
    fn identity(&self) -> &str {
        "recording-protocol-mock"
    }

    fn complete(&self, request: &LlmRequest) -> Result<LlmReply, BackendError> {
        let text = protocol_reply(&request.prompt);
        let reply = LlmReply {
            input_tokens: word_count(&request.prompt),
            output_tokens: word_count(&text),
            text,
        };
        let mut u = self.usage.lock().unwrap();
        u.calls += 1;
        u.input_tokens += reply.input_tokens;
        u.output_tokens += reply.output_tokens;
        self.prompts.lock().unwrap().push(request.prompt.clone());
        Ok(reply)
    }
}

/// Every file under `dir`, as relative path and contents, sorted.
pub fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/");
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

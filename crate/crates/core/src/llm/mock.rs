use std::sync::atomic::{AtomicUsize, Ordering};

use super::{BackendError, LlmBackend, LlmReply, LlmRequest};

/// Whitespace-separated word count, the token measure used by mocks.
pub fn word_count(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

/// Backend whose reply is a pure function of the prompt.
pub struct FnBackend<F> {
    identity: String,
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&str) -> String + Send + Sync,
{
    pub fn new(identity: impl Into<String>, f: F) -> Self {
        FnBackend {
            identity: identity.into(),
            f,
        }
    }
}

impl<F> LlmBackend for FnBackend<F>
where
    F: Fn(&str) -> String + Send + Sync,
{
    fn identity(&self) -> &str {
        &self.identity
    }

    fn complete(&self, request: &LlmRequest) -> Result<LlmReply, BackendError> {
        let text = (self.f)(&request.prompt);
        Ok(LlmReply {
            input_tokens: word_count(&request.prompt),
            output_tokens: word_count(&text),
            text,
        })
    }
}

/// Wraps a backend and counts invocations.
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        CountingBackend {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<B: LlmBackend> LlmBackend for CountingBackend<B> {
    fn identity(&self) -> &str {
        self.inner.identity()
    }

    fn complete(&self, request: &LlmRequest) -> Result<LlmReply, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}

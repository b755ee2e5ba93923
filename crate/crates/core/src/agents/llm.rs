//! Chat-completion provider interface, usage counters and scriptable mocks.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::cost::{Bucket, CostMeter, TokenUsage};
use crate::embed::ProviderError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl Default for DecodingParams {
    /// The most deterministic setting.
    fn default() -> Self {
        DecodingParams { temperature: 0.0, max_tokens: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePart {
    pub media_ref: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub images: Vec<ImagePart>,
    pub params: DecodingParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageSnapshot {
    pub calls: u64,
    pub usage: TokenUsage,
}

impl UsageSnapshot {
    pub fn since(self, earlier: UsageSnapshot) -> UsageSnapshot {
        UsageSnapshot {
            calls: self.calls - earlier.calls,
            usage: TokenUsage {
                input: self.usage.input - earlier.usage.input,
                output: self.usage.output - earlier.usage.output,
            },
        }
    }
}

/// Exact, monotone counters. Only successful completions are counted.
#[derive(Debug, Default)]
pub struct UsageCounters {
    calls: AtomicU64,
    input: AtomicU64,
    output: AtomicU64,
}

impl UsageCounters {
    pub fn record(&self, usage: TokenUsage) {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.input.fetch_add(usage.input, Ordering::SeqCst);
        self.output.fetch_add(usage.output, Ordering::SeqCst);
    }

    pub fn snapshot(&self) -> UsageSnapshot {
        UsageSnapshot {
            calls: self.calls.load(Ordering::SeqCst),
            usage: TokenUsage { input: self.input.load(Ordering::SeqCst), output: self.output.load(Ordering::SeqCst) },
        }
    }
}

pub trait LlmProvider: Send + Sync {
    fn name(&self) -> String;
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;
    /// Accumulated usage over this provider's lifetime.
    fn usage(&self) -> UsageSnapshot;
    fn supports_images(&self) -> bool {
        false
    }
}

/// Whitespace token count used by the offline providers.
pub fn count_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

pub(crate) fn mock_usage(request: &ChatRequest, text: &str) -> TokenUsage {
    TokenUsage { input: count_tokens(&request.system) + count_tokens(&request.user), output: count_tokens(text) }
}

/// Replays a fixed queue of responses and records every request.
#[derive(Debug, Default)]
pub struct ScriptedLlm {
    responses: Mutex<VecDeque<String>>,
    requests: Mutex<Vec<ChatRequest>>,
    counters: UsageCounters,
}

impl ScriptedLlm {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        ScriptedLlm { responses: Mutex::new(responses.into_iter().map(Into::into).collect()), ..Default::default() }
    }

    pub fn push(&self, response: impl Into<String>) {
        self.responses.lock().unwrap().push_back(response.into());
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().unwrap().clone()
    }

    pub fn remaining(&self) -> usize {
        self.responses.lock().unwrap().len()
    }
}

impl LlmProvider for ScriptedLlm {
    fn name(&self) -> String {
        "scripted".into()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.requests.lock().unwrap().push(request.clone());
        let text = self
            .responses
            .lock()
            .unwrap()
            .pop_front()
            .ok_or_else(|| ProviderError::Other("script exhausted".into()))?;
        let usage = mock_usage(request, &text);
        self.counters.record(usage);
        Ok(ChatResponse { text, usage })
    }

    fn usage(&self) -> UsageSnapshot {
        self.counters.snapshot()
    }
}

type Responder = dyn Fn(&ChatRequest) -> Result<String, ProviderError> + Send + Sync;

/// Answers through a closure.
pub struct FnLlm {
    f: Box<Responder>,
    counters: UsageCounters,
}

impl FnLlm {
    pub fn new(f: impl Fn(&ChatRequest) -> Result<String, ProviderError> + Send + Sync + 'static) -> Self {
        FnLlm { f: Box::new(f), counters: UsageCounters::default() }
    }
}

impl LlmProvider for FnLlm {
    fn name(&self) -> String {
        "fn".into()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let text = (self.f)(request)?;
        let usage = mock_usage(request, &text);
        self.counters.record(usage);
        Ok(ChatResponse { text, usage })
    }

    fn usage(&self) -> UsageSnapshot {
        self.counters.snapshot()
    }
}

/// Per-run view of a shared provider: counts only this run's calls and
/// attributes their time to the LLM bucket.
pub struct MeteredLlm<'a> {
    inner: &'a dyn LlmProvider,
    meter: &'a CostMeter,
    counters: UsageCounters,
}

impl<'a> MeteredLlm<'a> {
    pub fn new(inner: &'a dyn LlmProvider, meter: &'a CostMeter) -> Self {
        MeteredLlm { inner, meter, counters: UsageCounters::default() }
    }
}

impl LlmProvider for MeteredLlm<'_> {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let resp = self.meter.time(Bucket::Llm, || self.inner.complete(request))?;
        self.counters.record(resp.usage);
        Ok(resp)
    }

    fn usage(&self) -> UsageSnapshot {
        self.counters.snapshot()
    }

    fn supports_images(&self) -> bool {
        self.inner.supports_images()
    }
}

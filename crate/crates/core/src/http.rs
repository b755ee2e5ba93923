//! Providers behind OpenAI-compatible HTTP endpoints, and construction of
//! any provider from configuration. Credentials come from environment
//! variables named in the config.

use std::time::Duration;

use serde_json::{json, Value};

use crate::agents::llm::{count_tokens, ChatRequest, ChatResponse, LlmProvider, UsageCounters, UsageSnapshot};
use crate::agents::mock::LexicalMockLlm;
use crate::config::{EmbedderConfig, EmbedderKind, LlmConfig, LlmKind};
use crate::cost::TokenUsage;
use crate::embed::{EmbedInput, EmbedderProvider, Fingerprint, HashEmbedder, ProviderError, Vector};

fn agent(timeout_secs: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(timeout_secs.max(1))))
        .http_status_as_error(false)
        .build()
        .into()
}

fn api_key(var: &str) -> Option<String> {
    std::env::var(var).ok().filter(|k| !k.trim().is_empty())
}

fn post_json(agent: &ureq::Agent, url: &str, key: Option<&str>, body: &Value) -> Result<Value, ProviderError> {
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(k) = key {
        req = req.header("Authorization", &format!("Bearer {k}"));
    }
    let mut resp = req.send_json(body).map_err(|e| ProviderError::Transport(e.to_string()))?;
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().map_err(|e| ProviderError::Transport(e.to_string()))?;
    if !(200..300).contains(&status) {
        return Err(ProviderError::Status { status, body: text });
    }
    serde_json::from_str(&text).map_err(|e| ProviderError::BadResponse(e.to_string()))
}

fn endpoint(e: &Option<String>, what: &str) -> Result<String, ProviderError> {
    e.clone().filter(|s| !s.is_empty()).ok_or_else(|| ProviderError::Other(format!("{what} endpoint is not configured")))
}

/// Chat-completions client. Usage comes from the response when reported,
/// otherwise from whitespace token counts.
pub struct HttpLlm {
    agent: ureq::Agent,
    url: String,
    model: String,
    key: Option<String>,
    images: bool,
    counters: UsageCounters,
}

impl HttpLlm {
    pub fn from_config(cfg: &LlmConfig) -> Result<Self, ProviderError> {
        Ok(HttpLlm {
            agent: agent(cfg.timeout_secs),
            url: endpoint(&cfg.endpoint, "llm")?,
            model: cfg.model.clone(),
            key: api_key(&cfg.api_key_env),
            images: cfg.supports_images,
            counters: UsageCounters::default(),
        })
    }

    fn body(&self, r: &ChatRequest) -> Value {
        let user = if self.images && !r.images.is_empty() {
            let mut parts = vec![json!({"type": "text", "text": r.user})];
            for img in &r.images {
                parts.push(json!({"type": "image_url", "image_url": {"url": img.media_ref}}));
                if let Some(c) = &img.caption {
                    parts.push(json!({"type": "text", "text": c}));
                }
            }
            Value::Array(parts)
        } else {
            Value::String(r.user.clone())
        };
        json!({
            "model": self.model,
            "messages": [{"role": "system", "content": r.system}, {"role": "user", "content": user}],
            "temperature": r.params.temperature,
            "max_tokens": r.params.max_tokens,
        })
    }
}

impl LlmProvider for HttpLlm {
    fn name(&self) -> String {
        format!("http:{}", self.model)
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let v = post_json(&self.agent, &self.url, self.key.as_deref(), &self.body(request))?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| ProviderError::BadResponse("missing choices[0].message.content".into()))?
            .to_string();
        let reported = |k: &str| v["usage"][k].as_u64();
        let usage = TokenUsage {
            input: reported("prompt_tokens")
                .unwrap_or_else(|| count_tokens(&request.system) + count_tokens(&request.user)),
            output: reported("completion_tokens").unwrap_or_else(|| count_tokens(&text)),
        };
        self.counters.record(usage);
        Ok(ChatResponse { text, usage })
    }

    fn usage(&self) -> UsageSnapshot {
        self.counters.snapshot()
    }

    fn supports_images(&self) -> bool {
        self.images
    }
}

/// Embeddings client. Media inputs are sent as caption plus reference text.
pub struct HttpEmbedder {
    agent: ureq::Agent,
    url: String,
    model: String,
    key: Option<String>,
    dimension: usize,
}

impl HttpEmbedder {
    pub fn from_config(cfg: &EmbedderConfig) -> Result<Self, ProviderError> {
        Ok(HttpEmbedder {
            agent: agent(cfg.timeout_secs),
            url: endpoint(&cfg.endpoint, "embedder")?,
            model: cfg.model.clone(),
            key: api_key(&cfg.api_key_env),
            dimension: cfg.dimension,
        })
    }
}

impl EmbedderProvider for HttpEmbedder {
    fn fingerprint(&self) -> Fingerprint {
        Fingerprint { provider: "http".into(), model: self.model.clone() }
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, inputs: &[EmbedInput]) -> Result<Vec<Vector>, ProviderError> {
        let texts: Vec<String> = inputs
            .iter()
            .map(|i| match i {
                EmbedInput::Text(t) => t.clone(),
                EmbedInput::Media { media_ref, caption: Some(c) } => format!("{c} {media_ref}"),
                EmbedInput::Media { media_ref, caption: None } => media_ref.clone(),
            })
            .collect();
        let v = post_json(&self.agent, &self.url, self.key.as_deref(), &json!({"model": self.model, "input": texts}))?;
        let data = v["data"].as_array().ok_or_else(|| ProviderError::BadResponse("missing data".into()))?;
        if data.len() != inputs.len() {
            return Err(ProviderError::BadResponse(format!("{} embeddings for {} inputs", data.len(), inputs.len())));
        }
        let mut out = vec![Vector(vec![]); data.len()];
        for (pos, d) in data.iter().enumerate() {
            let i = d["index"].as_u64().map_or(pos, |i| i as usize);
            let vec: Vec<f32> = d["embedding"]
                .as_array()
                .ok_or_else(|| ProviderError::BadResponse("missing embedding".into()))?
                .iter()
                .map(|x| x.as_f64().map(|f| f as f32))
                .collect::<Option<_>>()
                .ok_or_else(|| ProviderError::BadResponse("non-numeric embedding".into()))?;
            if vec.len() != self.dimension {
                return Err(ProviderError::BadResponse(format!("dimension {} != {}", vec.len(), self.dimension)));
            }
            *out.get_mut(i).ok_or_else(|| ProviderError::BadResponse(format!("index {i} out of range")))? = Vector(vec);
        }
        Ok(out)
    }
}

pub fn llm_from_config(cfg: &LlmConfig) -> Result<Box<dyn LlmProvider>, ProviderError> {
    Ok(match cfg.kind {
        LlmKind::Mock => Box::new(LexicalMockLlm::new()),
        LlmKind::Http => Box::new(HttpLlm::from_config(cfg)?),
    })
}

pub fn embedder_from_config(cfg: &EmbedderConfig) -> Result<Box<dyn EmbedderProvider>, ProviderError> {
    Ok(match cfg.kind {
        EmbedderKind::Hash => Box::new(HashEmbedder::new(cfg.dimension, cfg.seed)),
        EmbedderKind::Http => Box::new(HttpEmbedder::from_config(cfg)?),
    })
}

//! JSON extraction from model output and the re-ask loop.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::llm::{ChatRequest, LlmProvider};
use super::AgentError;

pub const FORMAT_REMINDER: &str =
    "REMINDER: your previous output could not be used. Return ONLY valid JSON matching the required schema, with no markdown and no extra text.";

/// One prompt/response pair, kept verbatim for traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub user: String,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentCall<T> {
    pub value: T,
    pub exchanges: Vec<Exchange>,
}

/// Balanced top-level JSON objects in `raw`, in order. Code fences and
/// surrounding prose never contain a parseable object, so scanning the raw
/// text finds fenced JSON without stripping the fence.
pub fn json_objects(raw: &str) -> impl Iterator<Item = &str> {
    let bytes = raw.as_bytes();
    let mut search = 0;
    std::iter::from_fn(move || {
        while let Some(rel) = raw.get(search..)?.find('{') {
            let start = search + rel;
            search = start + 1;
            let (mut depth, mut in_str, mut escaped) = (0usize, false, false);
            for (i, &b) in bytes.iter().enumerate().skip(start) {
                if in_str {
                    match b {
                        _ if escaped => escaped = false,
                        b'\\' => escaped = true,
                        b'"' => in_str = false,
                        _ => {}
                    }
                    continue;
                }
                match b {
                    b'"' => in_str = true,
                    b'{' => depth += 1,
                    b'}' => {
                        depth -= 1;
                        if depth == 0 {
                            let candidate = &raw[start..=i];
                            if serde_json::from_str::<serde_json::Value>(candidate).is_ok() {
                                search = i + 1;
                                return Some(candidate);
                            }
                            break;
                        }
                    }
                    _ => {}
                }
            }
        }
        None
    })
}

/// The first balanced top-level JSON object, skipping surrounding prose.
pub fn extract_json(raw: &str) -> Option<&str> {
    json_objects(raw).next()
}

/// The first object in `raw` that deserializes as `T`.
pub fn parse_structured<T: DeserializeOwned>(raw: &str) -> Result<T, String> {
    let mut first_error = None;
    for json in json_objects(raw) {
        match serde_json::from_str(json) {
            Ok(v) => return Ok(v),
            Err(e) => {
                first_error.get_or_insert(e.to_string());
            }
        }
    }
    Err(first_error.unwrap_or_else(|| "no JSON object found".to_string()))
}

/// Sends `request`, parses and validates the reply, and re-asks up to
/// `retries` times with [`FORMAT_REMINDER`] appended.
pub fn complete_structured<T, U>(
    llm: &dyn LlmProvider,
    request: &ChatRequest,
    retries: usize,
    validate: impl Fn(T) -> Result<U, String>,
) -> Result<AgentCall<U>, AgentError>
where
    T: DeserializeOwned,
{
    let mut exchanges = Vec::new();
    let mut req = request.clone();
    let mut last_error = String::new();
    for attempt in 0..=retries {
        if attempt > 0 {
            req.user = format!("{}\n\n{FORMAT_REMINDER} ({last_error})", request.user);
        }
        let resp = llm.complete(&req)?;
        exchanges.push(Exchange { user: req.user.clone(), raw: resp.text.clone() });
        match parse_structured::<T>(&resp.text).and_then(&validate) {
            Ok(value) => return Ok(AgentCall { value, exchanges }),
            Err(e) => last_error = e,
        }
    }
    Err(AgentError::MalformedOutput {
        raw: exchanges.last().map(|e| e.raw.clone()).unwrap_or_default(),
        attempts: exchanges.len(),
        reason: last_error,
    })
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub(crate) struct Selection {
    pub index: i64,
    #[serde(default)]
    pub filename: Option<String>,
    #[serde(default)]
    pub component_id: Option<String>,
    #[serde(default)]
    pub score: Option<f64>,
}

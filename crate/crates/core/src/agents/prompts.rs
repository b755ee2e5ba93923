//! Versioned prompt templates with named `{placeholder}` slots. Literal
//! braces are written `{{` and `}}`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::llm::ChatRequest;

pub const PROMPT_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Orchestrator,
    DocTraverser,
    CompTraverser,
    Planner,
    Evaluator,
    Reranker,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template {kind:?} has no placeholder `{name}`")]
    UnknownPlaceholder { kind: PromptKind, name: String },
    #[error("template {kind:?} is missing a value for `{name}`")]
    MissingValue { kind: PromptKind, name: String },
}

impl PromptKind {
    pub const ALL: [PromptKind; 6] = [
        PromptKind::Orchestrator,
        PromptKind::DocTraverser,
        PromptKind::CompTraverser,
        PromptKind::Planner,
        PromptKind::Evaluator,
        PromptKind::Reranker,
    ];

    pub fn template(self) -> &'static str {
        match self {
            PromptKind::Orchestrator => include_str!("../../prompts/orchestrator.txt"),
            PromptKind::DocTraverser => include_str!("../../prompts/doc_traverser.txt"),
            PromptKind::CompTraverser => include_str!("../../prompts/comp_traverser.txt"),
            PromptKind::Planner => include_str!("../../prompts/planner.txt"),
            PromptKind::Evaluator => include_str!("../../prompts/evaluator.txt"),
            PromptKind::Reranker => include_str!("../../prompts/reranker.txt"),
        }
    }

    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            PromptKind::Orchestrator => &["query", "serialized_subtasks", "serialized_memory", "neighbor_docs"],
            PromptKind::DocTraverser | PromptKind::CompTraverser => {
                &["original_query", "subtask_query", "vector_granularity", "candidates", "max_results"]
            }
            PromptKind::Planner => &["original_query", "memory"],
            PromptKind::Evaluator => &["original_query", "subtask_query", "candidates", "subtasks"],
            PromptKind::Reranker => &["query", "candidates", "top_k"],
        }
    }

    /// Recognizes a rendered system prompt by its opening line.
    pub fn detect(system: &str) -> Option<PromptKind> {
        let first = system.trim_start().lines().next()?.trim();
        PromptKind::ALL.into_iter().find(|k| k.template().trim_start().lines().next().map(str::trim) == Some(first))
    }
}

/// Substitutes every placeholder in one pass; substituted values are never
/// re-scanned.
pub fn render_text(kind: PromptKind, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    for (name, _) in vars {
        if !kind.placeholders().contains(name) {
            return Err(PromptError::UnknownPlaceholder { kind, name: name.to_string() });
        }
    }
    let t = kind.template();
    let mut out = String::with_capacity(t.len() + vars.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = t;
    while let Some(i) = rest.find(['{', '}']) {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        if tail.starts_with("{{") || tail.starts_with("}}") {
            out.push_str(&tail[..1]);
            rest = &tail[2..];
            continue;
        }
        if tail.starts_with('{') {
            if let Some(end) = tail.find('}') {
                let name = &tail[1..end];
                if kind.placeholders().contains(&name) {
                    let value = vars
                        .iter()
                        .find(|(n, _)| *n == name)
                        .ok_or_else(|| PromptError::MissingValue { kind, name: name.to_string() })?
                        .1;
                    out.push_str(value);
                    rest = &tail[end + 1..];
                    continue;
                }
            }
        }
        out.push_str(&tail[..1]);
        rest = &tail[1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Renders and splits at the `Inputs:` line: instructions become the system
/// prompt, the filled inputs the user payload.
pub fn render(kind: PromptKind, vars: &[(&str, &str)]) -> Result<ChatRequest, PromptError> {
    let text = render_text(kind, vars)?;
    let (system, user) = match text.rfind("\nInputs:\n") {
        Some(i) => (text[..i].trim_end().to_string(), text[i + 1..].to_string()),
        None => (text, String::new()),
    };
    Ok(ChatRequest { system, user, ..Default::default() })
}

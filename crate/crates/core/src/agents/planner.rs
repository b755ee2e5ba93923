//! Subquery planner: one to two retrieval tasks for the remaining gap.

use serde::Deserialize;

use super::llm::LlmProvider;
use super::prompts::{render, PromptKind};
use super::structured::{complete_structured, AgentCall};
use super::AgentError;

#[derive(Debug, Deserialize)]
struct PlanOut {
    tasks: Vec<String>,
}

/// Returns 1 or 2 non-empty tasks, kept verbatim.
pub fn plan_subqueries(
    llm: &dyn LlmProvider,
    original_query: &str,
    memory_text: &str,
    retries: usize,
) -> Result<AgentCall<Vec<String>>, AgentError> {
    let req = render(PromptKind::Planner, &[("original_query", original_query), ("memory", memory_text)])?;
    complete_structured(llm, &req, retries, |o: PlanOut| {
        if !(1..=2).contains(&o.tasks.len()) {
            return Err(format!("expected 1-2 tasks, got {}", o.tasks.len()));
        }
        if o.tasks.iter().any(|t| t.trim().is_empty()) {
            return Err("empty task".into());
        }
        Ok(o.tasks)
    })
}

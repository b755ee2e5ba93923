//! Traversal evaluator: did the hop answer the target subtask, and which
//! ledger entries became answerable.

use serde::{Deserialize, Serialize};

use super::candidate_line;
use super::llm::LlmProvider;
use super::prompts::{render, PromptKind};
use super::structured::{complete_structured, AgentCall};
use super::AgentError;
use crate::memory::SubtaskUpdate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalStatus {
    Answerable,
    NotAnswerable,
}

/// Update indices reference existing entries and answers are non-empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub status: EvalStatus,
    pub updated_subtasks: Vec<SubtaskUpdate>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalCandidate {
    pub doc_id: String,
    pub component_id: String,
    pub content: String,
}

#[derive(Debug, Deserialize)]
struct EvalOut {
    status: String,
    #[serde(default)]
    updated_subtasks: Vec<UpdateOut>,
}

#[derive(Debug, Deserialize)]
struct UpdateOut {
    index: i64,
    #[serde(default)]
    status: Option<String>,
    #[serde(default)]
    answer: Option<String>,
}

fn parse_status(s: &str) -> Option<EvalStatus> {
    match s.trim().to_ascii_lowercase().replace('_', " ").as_str() {
        "answerable" => Some(EvalStatus::Answerable),
        "not answerable" => Some(EvalStatus::NotAnswerable),
        _ => None,
    }
}

/// Empty `components` short-circuit to `NotAnswerable` without a call.
/// `subtasks_text` is the numbered ledger; `n_subtasks` bounds valid indices.
pub fn evaluate_traversal(
    llm: &dyn LlmProvider,
    original_query: &str,
    subtask_query: &str,
    components: &[EvalCandidate],
    subtasks_text: &str,
    n_subtasks: usize,
    retries: usize,
) -> Result<AgentCall<EvalResult>, AgentError> {
    if components.is_empty() {
        return Ok(AgentCall {
            value: EvalResult { status: EvalStatus::NotAnswerable, updated_subtasks: vec![], warnings: vec![] },
            exchanges: vec![],
        });
    }
    let lines: Vec<String> = components
        .iter()
        .enumerate()
        .map(|(i, c)| {
            candidate_line(
                i,
                serde_json::json!({"filename": c.doc_id, "component_id": c.component_id, "content": c.content}),
            )
        })
        .collect();
    let req = render(
        PromptKind::Evaluator,
        &[
            ("original_query", original_query),
            ("subtask_query", subtask_query),
            ("candidates", &lines.join("\n")),
            ("subtasks", subtasks_text),
        ],
    )?;
    complete_structured(llm, &req, retries, |o: EvalOut| {
        let status = parse_status(&o.status).ok_or_else(|| format!("unknown status `{}`", o.status))?;
        let mut warnings = Vec::new();
        let mut updated = Vec::new();
        for u in o.updated_subtasks {
            let index = match usize::try_from(u.index) {
                Ok(i) if (1..=n_subtasks).contains(&i) => i,
                _ => {
                    warnings.push(format!("dropped update for unknown subtask {}", u.index));
                    continue;
                }
            };
            if u.status.as_deref().and_then(parse_status).is_some_and(|s| s != EvalStatus::Answerable) {
                warnings.push(format!("dropped update for subtask {index}: status is not answerable"));
                continue;
            }
            match u.answer.map(|a| a.trim().to_string()).filter(|a| !a.is_empty()) {
                Some(answer) => updated.push(SubtaskUpdate { index, answer }),
                None => warnings.push(format!("dropped update for subtask {index}: empty answer")),
            }
        }
        Ok(EvalResult { status, updated_subtasks: updated, warnings })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::llm::ScriptedLlm;

    fn cands() -> Vec<EvalCandidate> {
        vec![EvalCandidate { doc_id: "d1".into(), component_id: "c1".into(), content: "Kyoto was the capital".into() }]
    }

    #[test]
    fn empty_components_cost_nothing() {
        let llm = ScriptedLlm::new(Vec::<String>::new());
        let r = evaluate_traversal(&llm, "Q", "q", &[], "1. [unknown] q\n", 1, 2).unwrap();
        assert_eq!(r.value.status, EvalStatus::NotAnswerable);
        assert_eq!(llm.usage().calls, 0);
    }

    #[test]
    fn updates_pass_through() {
        let llm = ScriptedLlm::new([
            r#"{"status":"answerable","updated_subtasks":[{"index":2,"status":"answerable","answer":"Kyoto"}]}"#,
        ]);
        let r = evaluate_traversal(&llm, "Q", "q", &cands(), "1. a\n2. b\n", 2, 2).unwrap().value;
        assert_eq!(r.status, EvalStatus::Answerable);
        assert_eq!(r.updated_subtasks, vec![SubtaskUpdate { index: 2, answer: "Kyoto".into() }]);
        assert!(llm.requests()[0].user.contains("0: {\"component_id\":\"c1\""));
    }

    #[test]
    fn unknown_index_is_dropped_and_status_kept() {
        let llm = ScriptedLlm::new([
            r#"{"status":"not answerable","updated_subtasks":[{"index":99,"status":"answerable","answer":"x"},{"index":1,"status":"answerable","answer":"  "}]}"#,
        ]);
        let r = evaluate_traversal(&llm, "Q", "q", &cands(), "1. a\n", 1, 2).unwrap().value;
        assert_eq!(r.status, EvalStatus::NotAnswerable);
        assert!(r.updated_subtasks.is_empty());
        assert_eq!(r.warnings.len(), 2);
    }

    #[test]
    fn unknown_status_is_malformed() {
        let llm = ScriptedLlm::new([r#"{"status":"maybe"}"#, r#"{"status":"maybe"}"#]);
        assert!(matches!(
            evaluate_traversal(&llm, "Q", "q", &cands(), "", 0, 1),
            Err(AgentError::MalformedOutput { attempts: 2, .. })
        ));
    }
}

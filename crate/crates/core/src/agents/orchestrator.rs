//! LLM orchestrator policy: one prompted decision per step.

use serde::Deserialize;

use super::heuristic::level_of;
use super::llm::LlmProvider;
use super::prompts::{render, PromptKind};
use super::structured::{complete_structured, AgentCall};
use super::{Action, ActionDecision, AgentError, Rationale};
use crate::graph::Layer;
use crate::memory::{Memory, SubqueryStatus};
use crate::traverser::{CompMode, DocMode, StrategyTuple};

#[derive(Debug, Deserialize)]
struct OrchestratorOut {
    action: ActionOut,
}

#[derive(Debug, Deserialize)]
struct ActionOut {
    next_action: String,
    #[serde(default)]
    next_retrieval_subtask: Option<String>,
    #[serde(default)]
    document_search_mode: Option<String>,
    #[serde(default)]
    component_search_mode: Option<String>,
    #[serde(default)]
    anchor: Option<i64>,
    #[serde(default)]
    vector_granularity: Option<String>,
}

enum Parsed {
    Stop,
    Replan,
    Search { query: String, doc: DocMode, comp: CompMode, granularity: Layer, anchor: Option<i64> },
}

fn parse(o: OrchestratorOut) -> Result<Parsed, String> {
    let a = o.action;
    match a.next_action.trim().to_ascii_lowercase().as_str() {
        "stop" => Ok(Parsed::Stop),
        "replan" => Ok(Parsed::Replan),
        "search" => {
            let query = a
                .next_retrieval_subtask
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .ok_or("search requires next_retrieval_subtask")?;
            let doc = a
                .document_search_mode
                .as_deref()
                .and_then(DocMode::parse)
                .ok_or_else(|| format!("bad document_search_mode {:?}", a.document_search_mode))?;
            let comp = a
                .component_search_mode
                .as_deref()
                .and_then(CompMode::parse)
                .ok_or_else(|| format!("bad component_search_mode {:?}", a.component_search_mode))?;
            let granularity = match a.vector_granularity.as_deref() {
                None => Layer::Document,
                Some(g) => Layer::parse(g).ok_or_else(|| format!("bad vector_granularity `{g}`"))?,
            };
            Ok(Parsed::Search { query, doc, comp, granularity, anchor: a.anchor })
        }
        other => Err(format!("unknown next_action `{other}`")),
    }
}

/// Ledger entry a free-text subtask refers to: exact text match, else the
/// earliest unresolved entry, else the last entry.
fn resolve_subtask(memory: &Memory, text: &str) -> Option<usize> {
    let subs = &memory.subqueries;
    subs.iter()
        .find(|e| e.text.trim() == text && e.status != SubqueryStatus::Answerable)
        .or_else(|| subs.iter().find(|e| e.text.trim() == text))
        .or_else(|| subs.iter().find(|e| e.status != SubqueryStatus::Answerable))
        .or(subs.last())
        .map(|e| e.index)
}

/// Renders the orchestrator prompt and maps its answer onto an action.
/// Anchors arrive as 0-based history positions and become 1-based steps;
/// ones that do not name a traverse step are nulled with a note.
pub fn decide_action_llm(
    llm: &dyn LlmProvider,
    memory: &Memory,
    neighbor_titles: &[String],
    memory_budget: usize,
    retries: usize,
) -> Result<AgentCall<ActionDecision>, AgentError> {
    let neighbors = if neighbor_titles.is_empty() { "(none)".to_string() } else { neighbor_titles.join("\n") };
    let req = render(
        PromptKind::Orchestrator,
        &[
            ("query", &memory.original_query),
            ("serialized_subtasks", &memory.serialize_subtasks()),
            ("serialized_memory", &memory.serialize_memory(memory_budget)),
            ("neighbor_docs", &neighbors),
        ],
    )?;
    let call = complete_structured(llm, &req, retries, parse)?;
    let rationale = Rationale::Prompt(PromptKind::Orchestrator);
    let decision = match call.value {
        Parsed::Stop => ActionDecision::stop(rationale),
        Parsed::Replan => {
            let current = memory.subqueries.iter().find(|e| e.status != SubqueryStatus::Answerable).map(|e| e.index);
            ActionDecision::new(Action::Plan { subtask: current }, rationale)
        }
        Parsed::Search { query, doc, comp, granularity, anchor } => {
            let Some(subtask) = resolve_subtask(memory, &query) else {
                let mut d = ActionDecision::new(Action::Plan { subtask: None }, rationale);
                d.notes.push("search requested with an empty ledger: planning first".into());
                return Ok(AgentCall { value: d, exchanges: call.exchanges });
            };
            let mut notes = Vec::new();
            let step = anchor.and_then(|i| {
                let step = usize::try_from(i).ok().map(|i| i + 1);
                let valid = step.and_then(|s| memory.record(s)).is_some_and(|r| r.traverse().is_some());
                if !valid {
                    notes.push(format!("anchor {i} does not name a traverse step: set to null"));
                }
                step.filter(|_| valid)
            });
            let strategy = StrategyTuple::new(doc, comp, granularity, step);
            let mut d = ActionDecision::new(Action::Traverse { subtask, query, strategy }, rationale);
            d.ladder_level = level_of(&strategy);
            d.notes = notes;
            d
        }
    };
    Ok(AgentCall { value: decision, exchanges: call.exchanges })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::llm::ScriptedLlm;
    use crate::memory::{Observation, Outcome, StepCost, TraverseObservation};

    fn memory_with_one_step() -> Memory {
        let mut m = Memory::new("Q", &["find x", "find y"]).unwrap();
        let d = ActionDecision::new(
            Action::Traverse {
                subtask: 1,
                query: "find x".into(),
                strategy: StrategyTuple::new(DocMode::VectorSearch, CompMode::VectorSearch, Layer::Document, None),
            },
            Rationale::RuleC,
        );
        let obs = Observation::TraverseOutcome(TraverseObservation {
            docs: vec![],
            components: vec![],
            outcome: Outcome::Failure,
            updated_subtasks: vec![],
            notes: vec![],
        });
        m.apply_transition(d, obs, StepCost::default()).unwrap();
        m
    }

    fn decide(m: &Memory, reply: &str) -> ActionDecision {
        let llm = ScriptedLlm::new([reply]);
        decide_action_llm(&llm, m, &[], 4000, 0).unwrap().value
    }

    #[test]
    fn search_maps_modes_anchor_and_subtask() {
        let m = memory_with_one_step();
        let d = decide(
            &m,
            r#"{"action":{"next_action":"search","next_retrieval_subtask":"find y","document_search_mode":"vector search","component_search_mode":"llm reasoning","anchor":0,"vector_granularity":"component"}}"#,
        );
        match d.action {
            Action::Traverse { subtask, strategy, .. } => {
                assert_eq!(subtask, 2);
                assert_eq!(strategy.anchor, Some(1));
                assert_eq!(strategy.granularity, Layer::Component);
                assert_eq!(strategy.component_mode, CompMode::LlmReasoning);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(d.ladder_level, Some(4));
        assert_eq!(d.rationale, Rationale::Prompt(PromptKind::Orchestrator));
    }

    #[test]
    fn bad_anchor_is_nulled_and_granularity_defaults() {
        let m = memory_with_one_step();
        let d = decide(
            &m,
            r#"{"action":{"next_action":"search","next_retrieval_subtask":"something new","document_search_mode":"neighbors","component_search_mode":"vector search","anchor":5}}"#,
        );
        match d.action {
            Action::Traverse { subtask, strategy, .. } => {
                assert_eq!(subtask, 1);
                assert_eq!(strategy.anchor, None);
                assert_eq!(strategy.granularity, Layer::Document);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(d.notes.len(), 1);
    }

    #[test]
    fn stop_and_replan() {
        let m = memory_with_one_step();
        assert_eq!(decide(&m, r#"{"action":{"next_action":"stop"}}"#).action, Action::Stop);
        assert_eq!(
            decide(&m, r#"{"action":{"next_action":"replan"}}"#).action,
            Action::Plan { subtask: Some(1) }
        );
    }

    #[test]
    fn invalid_mode_is_malformed() {
        let m = memory_with_one_step();
        let llm = ScriptedLlm::new([
            r#"{"action":{"next_action":"search","next_retrieval_subtask":"x","document_search_mode":"teleport","component_search_mode":"vector search"}}"#,
        ]);
        assert!(matches!(decide_action_llm(&llm, &m, &[], 4000, 0), Err(AgentError::MalformedOutput { .. })));
    }

    #[test]
    fn prompt_carries_zero_based_step_labels_and_neighbors() {
        let m = memory_with_one_step();
        let llm = ScriptedLlm::new([r#"{"action":{"next_action":"stop"}}"#]);
        decide_action_llm(&llm, &m, &["Title A".into()], 4000, 0).unwrap();
        let user = &llm.requests()[0].user;
        assert!(user.contains("Step 0: search subtask 1"));
        assert!(user.contains("# Neighbor Docs (titles of documents neighboring the last retrieved documents)\nTitle A\n"));
    }
}

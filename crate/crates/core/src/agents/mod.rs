//! LLM-facing agents, structured-output handling and the two orchestrator
//! policies.

pub mod evaluator;
pub mod heuristic;
pub mod llm;
pub mod mock;
pub mod orchestrator;
pub mod planner;
pub mod prompts;
pub mod reranker;
pub mod structured;
pub mod summarizer;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::ProviderError;
use crate::traverser::StrategyTuple;
use prompts::{PromptError, PromptKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("malformed output after {attempts} attempt(s): {reason}")]
    MalformedOutput { raw: String, attempts: usize, reason: String },
    #[error("provider failure: {0}")]
    Provider(#[from] ProviderError),
    #[error("prompt rendering: {0}")]
    Prompt(String),
}

impl From<PromptError> for AgentError {
    fn from(e: PromptError) -> Self {
        AgentError::Prompt(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    /// `subtask` is the 1-based ledger entry this hop works on.
    Traverse { subtask: usize, query: String, strategy: StrategyTuple },
    /// `subtask` names the entry whose failures prompted the replan.
    Plan { subtask: Option<usize> },
    Stop,
}

impl Action {
    pub fn kind(&self) -> &'static str {
        match self {
            Action::Traverse { .. } => "traverse",
            Action::Plan { .. } => "plan",
            Action::Stop => "stop",
        }
    }
}

/// Which rule of the heuristic policy, or which prompt, produced a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rationale {
    RuleA,
    RuleB,
    RuleC,
    RuleD,
    RuleE,
    RuleF,
    Prompt(PromptKind),
}

impl fmt::Display for Rationale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rationale::RuleA => f.write_str("a"),
            Rationale::RuleB => f.write_str("b"),
            Rationale::RuleC => f.write_str("c"),
            Rationale::RuleD => f.write_str("d"),
            Rationale::RuleE => f.write_str("e"),
            Rationale::RuleF => f.write_str("f"),
            Rationale::Prompt(k) => write!(f, "prompt:{}", serde_json::to_value(k).unwrap().as_str().unwrap()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDecision {
    pub action: Action,
    pub rationale: Rationale,
    /// Escalation ladder level 1..=5 when the route is on the ladder.
    pub ladder_level: Option<u8>,
    /// Clamps, dropped fields and other adjustments made to the decision.
    pub notes: Vec<String>,
}

impl ActionDecision {
    pub fn new(action: Action, rationale: Rationale) -> Self {
        ActionDecision { action, rationale, ladder_level: None, notes: Vec::new() }
    }

    pub fn stop(rationale: Rationale) -> Self {
        ActionDecision::new(Action::Stop, rationale)
    }

    /// One-line rendering used by transcripts and golden files.
    pub fn transcript_line(&self) -> String {
        match &self.action {
            Action::Traverse { subtask, query, strategy } => format!(
                "traverse subtask={subtask} level={} anchor={} doc={} comp={} g={} q=\"{query}\" rule={}",
                self.ladder_level.map_or("-".into(), |l| format!("L{l}")),
                strategy.anchor.map_or("null".into(), |a| a.to_string()),
                strategy.document_mode.as_str(),
                strategy.component_mode.as_str(),
                strategy.granularity.as_str(),
                self.rationale,
            ),
            Action::Plan { subtask } => {
                format!("plan subtask={} rule={}", subtask.map_or("-".into(), |s| s.to_string()), self.rationale)
            }
            Action::Stop => format!("stop rule={}", self.rationale),
        }
    }
}

/// JSON object line `i: {...}` as the traverser and reranker prompts show
/// candidates.
pub(crate) fn candidate_line(i: usize, fields: serde_json::Value) -> String {
    format!("{i}: {fields}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Layer;
    use crate::traverser::{CompMode, DocMode};

    #[test]
    fn transcript_line_format() {
        let mut d = ActionDecision::new(
            Action::Traverse {
                subtask: 2,
                query: "find y".into(),
                strategy: StrategyTuple::new(DocMode::Neighbors, CompMode::VectorSearch, Layer::Document, Some(1)),
            },
            Rationale::RuleD,
        );
        d.ladder_level = Some(1);
        assert_eq!(
            d.transcript_line(),
            "traverse subtask=2 level=L1 anchor=1 doc=neighbors comp=vector_search g=document q=\"find y\" rule=d"
        );
        assert_eq!(ActionDecision::stop(Rationale::RuleA).transcript_line(), "stop rule=a");
        assert_eq!(Rationale::Prompt(PromptKind::Orchestrator).to_string(), "prompt:orchestrator");
    }

    #[test]
    fn decisions_round_trip_through_json() {
        let d = ActionDecision::new(Action::Plan { subtask: Some(1) }, Rationale::Prompt(PromptKind::Orchestrator));
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(serde_json::from_str::<ActionDecision>(&s).unwrap(), d);
    }
}

//! The information state: original query, subquery ledger and append-only
//! action history.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{Action, ActionDecision};
use crate::cost::TokenUsage;
use crate::graph::Layer;
use crate::traverser::{CompMode, DocMode, StrategyTuple};

/// Characters kept per component preview in observations and serialized memory.
pub const PREVIEW_CHARS: usize = 240;
/// Smallest accepted serialization budget; smaller requests are raised to it.
pub const MIN_SERIALIZATION_BUDGET: usize = 256;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MemoryError {
    #[error("original query is empty")]
    EmptyQuery,
    #[error("observation kind `{observation}` does not match action kind `{action}`")]
    KindMismatch { action: &'static str, observation: &'static str },
    #[error("subtask index {0} does not exist")]
    UnknownSubtask(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubqueryStatus {
    Unknown,
    Answerable,
    NotAnswerable,
}

impl SubqueryStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SubqueryStatus::Unknown => "unknown",
            SubqueryStatus::Answerable => "answerable",
            SubqueryStatus::NotAnswerable => "not answerable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    InitialPlan,
    Replan,
}

/// `answer.is_some()` iff `status == Answerable`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubqueryEntry {
    /// 1-based.
    pub index: usize,
    pub text: String,
    pub status: SubqueryStatus,
    pub answer: Option<String>,
    pub origin: Origin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedDoc {
    pub doc_id: String,
    pub title: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedComponent {
    pub doc_id: String,
    pub component_id: String,
    pub score: f64,
    pub preview: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskUpdate {
    /// 1-based.
    pub index: usize,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraverseObservation {
    pub docs: Vec<RetrievedDoc>,
    pub components: Vec<RetrievedComponent>,
    pub outcome: Outcome,
    pub updated_subtasks: Vec<SubtaskUpdate>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observation {
    TraverseOutcome(TraverseObservation),
    PlanOutcome { new_subqueries: Vec<String> },
    Stop,
}

impl Observation {
    pub fn kind(&self) -> &'static str {
        match self {
            Observation::TraverseOutcome(_) => "traverse",
            Observation::PlanOutcome { .. } => "plan",
            Observation::Stop => "stop",
        }
    }

    pub fn as_traverse(&self) -> Option<&TraverseObservation> {
        match self {
            Observation::TraverseOutcome(t) => Some(t),
            _ => None,
        }
    }
}

/// Cost attributed to one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCost {
    pub wall_time_ms: u64,
    pub llm_calls: u64,
    pub token_usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    /// 1-based; `history[i].step == i + 1`.
    pub step: usize,
    pub action: ActionDecision,
    pub observation: Observation,
    pub wall_time_ms: u64,
    pub llm_calls: u64,
    pub token_usage: TokenUsage,
}

impl ActionRecord {
    pub fn traverse(&self) -> Option<(usize, &str, &StrategyTuple, &TraverseObservation)> {
        match (&self.action.action, &self.observation) {
            (Action::Traverse { subtask, query, strategy }, Observation::TraverseOutcome(o)) => {
                Some((*subtask, query.as_str(), strategy, o))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RouteSignature {
    pub query: String,
    pub anchor: Option<usize>,
    pub document_mode: DocMode,
    pub component_mode: CompMode,
    pub granularity: Layer,
}

impl RouteSignature {
    pub fn new(query: &str, tau: &StrategyTuple) -> Self {
        RouteSignature {
            query: query.to_string(),
            anchor: tau.anchor,
            document_mode: tau.document_mode,
            component_mode: tau.component_mode,
            granularity: tau.granularity,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FailureStats {
    /// Trailing run of failed attempts per subtask index.
    pub consecutive: BTreeMap<usize, usize>,
    pub last_success: Option<usize>,
    pub attempted: BTreeSet<RouteSignature>,
    pub failed: BTreeSet<RouteSignature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Memory {
    pub original_query: String,
    pub subqueries: Vec<SubqueryEntry>,
    pub history: Vec<ActionRecord>,
    pub step_counter: usize,
}

pub fn preview(text: &str) -> String {
    match text.char_indices().nth(PREVIEW_CHARS) {
        Some((cut, _)) => format!("{}...", &text[..cut]),
        None => text.to_string(),
    }
}

impl Memory {
    pub fn new<S: AsRef<str>>(original_query: &str, initial_subqueries: &[S]) -> Result<Self, MemoryError> {
        if original_query.trim().is_empty() {
            return Err(MemoryError::EmptyQuery);
        }
        let mut m = Memory {
            original_query: original_query.to_string(),
            subqueries: Vec::new(),
            history: Vec::new(),
            step_counter: 0,
        };
        m.push_subqueries(initial_subqueries.iter().map(|s| s.as_ref().to_string()), Origin::InitialPlan);
        Ok(m)
    }

    fn push_subqueries(&mut self, texts: impl IntoIterator<Item = String>, origin: Origin) {
        for text in texts {
            let index = self.subqueries.len() + 1;
            self.subqueries.push(SubqueryEntry { index, text, status: SubqueryStatus::Unknown, answer: None, origin });
        }
    }

    pub fn subquery(&self, index: usize) -> Option<&SubqueryEntry> {
        index.checked_sub(1).and_then(|i| self.subqueries.get(i))
    }

    /// Record for a 1-based step.
    pub fn record(&self, step: usize) -> Option<&ActionRecord> {
        step.checked_sub(1).and_then(|i| self.history.get(i))
    }

    pub fn last_traverse(&self) -> Option<&ActionRecord> {
        self.history.iter().rev().find(|r| r.traverse().is_some())
    }

    pub fn all_answerable(&self) -> bool {
        !self.subqueries.is_empty() && self.subqueries.iter().all(|s| s.status == SubqueryStatus::Answerable)
    }

    /// Appends one record and applies its effects on the ledger. Statuses
    /// never leave `Answerable`.
    pub fn apply_transition(
        &mut self,
        action: ActionDecision,
        observation: Observation,
        cost: StepCost,
    ) -> Result<&ActionRecord, MemoryError> {
        let expected = action.action.kind();
        if expected != observation.kind() {
            return Err(MemoryError::KindMismatch { action: expected, observation: observation.kind() });
        }
        match (&action.action, &observation) {
            (Action::Traverse { subtask, .. }, Observation::TraverseOutcome(o)) => {
                if self.subquery(*subtask).is_none() {
                    return Err(MemoryError::UnknownSubtask(*subtask));
                }
                for u in &o.updated_subtasks {
                    if u.answer.trim().is_empty() {
                        continue;
                    }
                    if let Some(entry) = u.index.checked_sub(1).and_then(|i| self.subqueries.get_mut(i)) {
                        if entry.status != SubqueryStatus::Answerable {
                            entry.status = SubqueryStatus::Answerable;
                            entry.answer = Some(u.answer.clone());
                        }
                    }
                }
                let entry = &mut self.subqueries[*subtask - 1];
                if o.outcome == Outcome::Failure && entry.status == SubqueryStatus::Unknown {
                    entry.status = SubqueryStatus::NotAnswerable;
                }
            }
            (Action::Plan { .. }, Observation::PlanOutcome { new_subqueries }) => {
                self.push_subqueries(new_subqueries.iter().cloned(), Origin::Replan);
            }
            _ => {}
        }
        self.step_counter += 1;
        self.history.push(ActionRecord {
            step: self.step_counter,
            action,
            observation,
            wall_time_ms: cost.wall_time_ms,
            llm_calls: cost.llm_calls,
            token_usage: cost.token_usage,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    /// The numbered subquery ledger, one line per entry.
    pub fn serialize_subtasks(&self) -> String {
        if self.subqueries.is_empty() {
            return "(none)\n".to_string();
        }
        let mut out = String::new();
        for s in &self.subqueries {
            let _ = write!(out, "{}. [{}] {}", s.index, s.status.as_str(), s.text);
            if let Some(a) = &s.answer {
                let _ = write!(out, " -> answer: {a}");
            }
            out.push('\n');
        }
        out
    }

    /// Deterministic prompt context. Step labels are 0-based history
    /// positions, the indexing the orchestrator prompt uses for anchors. The
    /// ledger is always kept; the oldest step blocks go first when over
    /// `budget` characters.
    pub fn serialize_memory(&self, budget: usize) -> String {
        let budget = budget.max(MIN_SERIALIZATION_BUDGET);
        let mut head = format!("Original query: {}\nSubtasks:\n", self.original_query);
        head.push_str(&self.serialize_subtasks());
        if self.history.is_empty() {
            return head;
        }
        head.push_str("Steps:\n");
        let blocks: Vec<String> = self.history.iter().map(step_block).collect();
        let mut used = head.len();
        let mut keep_from = blocks.len();
        for (i, b) in blocks.iter().enumerate().rev() {
            let marker = if i > 0 { elision_marker(i).len() } else { 0 };
            if used + b.len() + marker > budget {
                break;
            }
            used += b.len();
            keep_from = i;
        }
        let mut out = head;
        if keep_from > 0 {
            out.push_str(&elision_marker(keep_from));
        }
        for b in &blocks[keep_from..] {
            out.push_str(b);
        }
        out
    }

    pub fn failure_stats(&self) -> FailureStats {
        let mut stats = FailureStats::default();
        for rec in &self.history {
            let Some((subtask, query, tau, obs)) = rec.traverse() else { continue };
            let sig = RouteSignature::new(query, tau);
            stats.attempted.insert(sig.clone());
            let run = stats.consecutive.entry(subtask).or_insert(0);
            match obs.outcome {
                Outcome::Success => {
                    *run = 0;
                    stats.last_success = Some(rec.step);
                }
                Outcome::Failure => {
                    *run += 1;
                    stats.failed.insert(sig);
                }
            }
        }
        stats
    }

    /// Header line, then one JSON record per step.
    pub fn to_trace_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Header<'a> {
            original_query: &'a str,
            subqueries: &'a [SubqueryEntry],
            steps: usize,
        }
        let mut out = serde_json::to_string(&Header {
            original_query: &self.original_query,
            subqueries: &self.subqueries,
            steps: self.history.len(),
        })
        .expect("trace header serializes");
        out.push('\n');
        for rec in &self.history {
            out.push_str(&serde_json::to_string(rec).expect("trace record serializes"));
            out.push('\n');
        }
        out
    }
}

fn elision_marker(n: usize) -> String {
    format!("[... {n} earlier step(s) elided ...]\n")
}

fn step_block(rec: &ActionRecord) -> String {
    let label = rec.step - 1;
    let mut out = String::new();
    match (&rec.action.action, &rec.observation) {
        (Action::Traverse { subtask, query, strategy }, Observation::TraverseOutcome(o)) => {
            let anchor = match strategy.anchor {
                Some(step) => (step - 1).to_string(),
                None => "null".into(),
            };
            let flag = match o.outcome {
                Outcome::Success => "Success",
                Outcome::Failure => "Failure",
            };
            let _ = writeln!(
                out,
                "Step {label}: search subtask {subtask} \"{query}\" | document_search_mode={} component_search_mode={} vector_granularity={} anchor={anchor} | {flag}",
                strategy.document_mode.prompt_str(),
                strategy.component_mode.prompt_str(),
                strategy.granularity.as_str(),
            );
            let titles: Vec<&str> = o.docs.iter().map(|d| d.title.as_str()).collect();
            let _ = writeln!(out, "  documents: {}", if titles.is_empty() { "(none)".into() } else { titles.join("; ") });
            if o.components.is_empty() {
                out.push_str("  components: (none)\n");
            }
            for c in &o.components {
                let _ = writeln!(out, "  component {}/{}: {}", c.doc_id, c.component_id, c.preview);
            }
        }
        (Action::Plan { .. }, Observation::PlanOutcome { new_subqueries }) => {
            let quoted: Vec<String> = new_subqueries.iter().map(|q| format!("\"{q}\"")).collect();
            let _ = writeln!(out, "Step {label}: replan -> new subtasks: {}", quoted.join("; "));
        }
        _ => {
            let _ = writeln!(out, "Step {label}: stop");
        }
    }
    out
}

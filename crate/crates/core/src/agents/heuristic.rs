//! Deterministic orchestrator: escalation ladder, history-aware
//! backtracking and replanning as a pure function of memory.
//!
//! Rules, in order of precedence:
//! - (a) stop when every subquery is answerable or a budget is spent;
//! - (b) work on the earliest unresolved, unsettled subtask, planning first
//!   when the ledger is empty and stopping when nothing remains;
//! - (c) climb the ladder within one streak, a run of attempts sharing
//!   anchor and query;
//! - (d) re-anchor after two failures in the streak, a failed L5, or an
//!   empty neighbors pool, rewriting the query to exclude dead ends; the
//!   null anchor takes one such re-anchor even if the subtask began there;
//! - (e) replan once two distinct routes failed and no anchor is left;
//! - (f) never repeat a failed route signature.

use std::collections::BTreeSet;

use super::{Action, ActionDecision, Rationale};
use crate::config::EngineConfig;
use crate::graph::Layer;
use crate::memory::{ActionRecord, Memory, Outcome, RouteSignature, SubqueryStatus};
use crate::traverser::{CompMode, DocMode, StrategyTuple};

/// Number of failed document titles named in a rewritten query.
pub const EXCLUDED_TITLES: usize = 3;

/// Inputs beyond memory: what the engine can observe right now.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PolicyView {
    /// Titles of navigational neighbors of the last retrieved documents.
    pub neighbor_titles: Vec<String>,
    pub llm_calls_used: u64,
}

pub fn ladder(level: u8) -> (DocMode, CompMode, Layer) {
    match level {
        1 => (DocMode::Neighbors, CompMode::VectorSearch, Layer::Document),
        2 => (DocMode::VectorSearch, CompMode::VectorSearch, Layer::Document),
        3 => (DocMode::VectorSearch, CompMode::VectorSearch, Layer::Component),
        4 => (DocMode::VectorSearch, CompMode::LlmReasoning, Layer::Component),
        5 => (DocMode::LlmReasoning, CompMode::LlmReasoning, Layer::Component),
        _ => panic!("ladder level {level} out of range"),
    }
}

pub fn level_of(tau: &StrategyTuple) -> Option<u8> {
    (1..=5).find(|&l| ladder(l) == (tau.document_mode, tau.component_mode, tau.granularity))
}

fn tuple(level: u8, anchor: Option<usize>) -> StrategyTuple {
    let (d, c, g) = ladder(level);
    StrategyTuple::new(d, c, g, anchor)
}

/// Whether neighbors mode would start from a non-empty document set.
pub fn has_anchor_docs(memory: &Memory, anchor: Option<usize>) -> bool {
    let rec = match anchor {
        Some(step) => memory.record(step),
        None => memory.last_traverse(),
    };
    rec.and_then(|r| r.observation.as_traverse()).is_some_and(|o| !o.docs.is_empty())
}

struct Route {
    level: u8,
    anchor: Option<usize>,
    query: String,
}

struct Ctx<'a> {
    memory: &'a Memory,
    view: &'a PolicyView,
    cfg: &'a EngineConfig,
    failed: BTreeSet<RouteSignature>,
}

fn record_level(rec: &ActionRecord, tau: &StrategyTuple) -> u8 {
    rec.action.ladder_level.or_else(|| level_of(tau)).unwrap_or(1)
}

pub fn decide_action_heuristic(memory: &Memory, view: &PolicyView, cfg: &EngineConfig) -> ActionDecision {
    let noted = |mut d: ActionDecision, note: &str| {
        d.notes.push(note.to_string());
        d
    };
    if memory.history.len() >= cfg.max_steps {
        return noted(ActionDecision::stop(Rationale::RuleA), "step budget exhausted");
    }
    if cfg.max_llm_calls.is_some_and(|b| view.llm_calls_used >= b) {
        return noted(ActionDecision::stop(Rationale::RuleA), "llm call budget exhausted");
    }
    if memory.all_answerable() {
        return ActionDecision::stop(Rationale::RuleA);
    }
    if memory.subqueries.is_empty() {
        if cfg.ablations.no_planner {
            return noted(ActionDecision::stop(Rationale::RuleB), "no subqueries and planner disabled");
        }
        return ActionDecision::new(Action::Plan { subtask: None }, Rationale::RuleB);
    }
    let ctx = Ctx { memory, view, cfg, failed: memory.failure_stats().failed };
    for entry in memory.subqueries.iter().filter(|e| e.status != SubqueryStatus::Answerable) {
        if let Some(d) = ctx.decide_for(entry.index) {
            return d;
        }
    }
    noted(ActionDecision::stop(Rationale::RuleB), "no unresolved subtask remains")
}

impl Ctx<'_> {
    fn attempts(&self, s: usize) -> Vec<(&ActionRecord, &str, &StrategyTuple, Outcome, usize)> {
        self.memory
            .history
            .iter()
            .filter_map(|r| {
                let (sub, q, tau, o) = r.traverse()?;
                (sub == s).then_some((r, q, tau, o.outcome, o.docs.len()))
            })
            .collect()
    }

    fn replanned(&self, s: usize) -> bool {
        self.memory.history.iter().any(|r| r.action.action == Action::Plan { subtask: Some(s) })
    }

    /// Distinct (anchor, query) pairs attempted for `s`.
    fn routes_tried(&self, s: usize) -> usize {
        self.attempts(s).iter().map(|a| (a.2.anchor, a.1)).collect::<BTreeSet<_>>().len()
    }

    fn can_replan(&self, s: usize) -> bool {
        self.routes_tried(s) >= 2 && !self.replanned(s) && !self.cfg.ablations.no_planner
    }

    /// Anchors backtracking may no longer pick. A step anchor is spent once
    /// attempted; the null anchor once re-anchored to with a rewritten
    /// query, or when no rewrite would name a dead end.
    fn consumed(&self, s: usize) -> BTreeSet<Option<usize>> {
        let base = &self.memory.subqueries[s - 1].text;
        let atts = self.attempts(s);
        let mut used: BTreeSet<Option<usize>> = atts.iter().filter(|a| a.2.anchor.is_some()).map(|a| a.2.anchor).collect();
        let mut at_null = atts.iter().filter(|a| a.2.anchor.is_none()).map(|a| a.1).peekable();
        let null_started = at_null.peek().is_some();
        if at_null.any(|q| q != base) || (null_started && self.rewrite(s) == *base) {
            used.insert(None);
        }
        used
    }

    /// `None` means the subtask is settled and the next one is considered.
    fn decide_for(&self, s: usize) -> Option<ActionDecision> {
        let entry = self.memory.subquery(s)?;
        let atts = self.attempts(s);
        let Some(&(last_rec, last_q, last_tau, last_outcome, last_docs)) = atts.last() else {
            let level = if self.view.neighbor_titles.is_empty() { 2 } else { 1 };
            return self.finalize(s, Route { level, anchor: None, query: entry.text.clone() }, Rationale::RuleC);
        };
        if last_outcome == Outcome::Success || self.replanned(s) {
            return None;
        }
        let last_level = record_level(last_rec, last_tau);
        let streak_failures = atts
            .iter()
            .rev()
            .take_while(|a| a.2.anchor == last_tau.anchor && a.1 == last_q && a.3 == Outcome::Failure)
            .count();
        let exhausted_neighbors = last_tau.document_mode == DocMode::Neighbors && last_docs == 0;
        let trigger = !self.cfg.ablations.no_backtracking && (streak_failures >= 2 || last_level == 5 || exhausted_neighbors);
        let escalate = Route { level: last_level + 1, anchor: last_tau.anchor, query: last_q.to_string() };
        if !trigger {
            return if last_level >= 5 { None } else { self.finalize(s, escalate, Rationale::RuleC) };
        }
        if let Some(route) = self.backtrack_route(s, &self.consumed(s)) {
            return self.finalize(s, route, Rationale::RuleD);
        }
        if self.can_replan(s) {
            return Some(ActionDecision::new(Action::Plan { subtask: Some(s) }, Rationale::RuleE));
        }
        if last_level >= 5 {
            return None;
        }
        self.finalize(s, escalate, Rationale::RuleC)
    }

    /// Most recent unconsumed success step, then the null anchor.
    fn backtrack_route(&self, s: usize, used: &BTreeSet<Option<usize>>) -> Option<Route> {
        if self.cfg.ablations.no_backtracking {
            return None;
        }
        let successes = self.memory.history.iter().rev().filter_map(|r| {
            let (_, _, _, o) = r.traverse()?;
            (o.outcome == Outcome::Success).then_some(Some(r.step))
        });
        let anchor = successes.chain(std::iter::once(None)).find(|a| !used.contains(a))?;
        let level = match anchor {
            Some(_) if has_anchor_docs(self.memory, anchor) => 1,
            Some(_) => 2,
            None if self.view.neighbor_titles.is_empty() => 2,
            None => 1,
        };
        Some(Route { level, anchor, query: self.rewrite(s) })
    }

    /// Subquery plus the titles of documents its failed attempts returned,
    /// most recent attempt first.
    fn rewrite(&self, s: usize) -> String {
        let base = &self.memory.subqueries[s - 1].text;
        let mut titles: Vec<&str> = Vec::new();
        for rec in self.memory.history.iter().rev() {
            let Some((sub, _, _, o)) = rec.traverse() else { continue };
            if sub != s || o.outcome != Outcome::Failure {
                continue;
            }
            for d in &o.docs {
                if titles.len() < EXCLUDED_TITLES && !titles.contains(&d.title.as_str()) {
                    titles.push(&d.title);
                }
            }
        }
        if titles.is_empty() {
            base.clone()
        } else {
            format!("{base}; exclude: {}", titles.join(", "))
        }
    }

    /// Applies ablation clamps and rule (f): a route whose clamped signature
    /// already failed is escalated, and at L5 re-anchored.
    fn finalize(&self, s: usize, mut route: Route, mut rationale: Rationale) -> Option<ActionDecision> {
        let mut used = self.consumed(s);
        loop {
            let local = |a: Option<usize>| has_anchor_docs(self.memory, a);
            let (tau, notes) = self.cfg.ablations.clamp(tuple(route.level, route.anchor), &local);
            if !self.failed.contains(&RouteSignature::new(&route.query, &tau)) {
                let mut d = ActionDecision::new(
                    Action::Traverse { subtask: s, query: route.query, strategy: tau },
                    rationale,
                );
                d.ladder_level = Some(route.level);
                d.notes = notes;
                return Some(d);
            }
            rationale = Rationale::RuleF;
            if route.level < 5 {
                route.level += 1;
                continue;
            }
            used.insert(route.anchor);
            match self.backtrack_route(s, &used) {
                Some(next) => route = next,
                None if self.can_replan(s) => {
                    return Some(ActionDecision::new(Action::Plan { subtask: Some(s) }, Rationale::RuleF));
                }
                None => return None,
            }
        }
    }
}

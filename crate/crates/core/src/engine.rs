//! Finite-horizon decision loop: decide, clamp, execute, record, and rerank
//! everything gathered once the run ends.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::evaluator::{evaluate_traversal, EvalCandidate, EvalStatus};
use crate::agents::heuristic::{decide_action_heuristic, has_anchor_docs, PolicyView};
use crate::agents::llm::{LlmProvider, MeteredLlm};
use crate::agents::orchestrator::decide_action_llm;
use crate::agents::planner::plan_subqueries;
use crate::agents::reranker::{dedup_candidates, rank_by_score, rerank_final, RerankCandidate};
use crate::agents::{Action, ActionDecision, AgentError};
use crate::config::{ConfigError, EngineConfig, Policy};
use crate::cost::{Bucket, CostMeter, CostReport};
use crate::embed::{EmbedderProvider, ProviderError, Vector};
use crate::graph::LayeredGraph;
use crate::index::{IndexError, VectorIndex};
use crate::memory::{
    preview, Memory, MemoryError, Observation, Outcome, RetrievedComponent, RetrievedDoc, StepCost,
    TraverseObservation,
};
use crate::traverser::{neighbor_docs, Queries, TraverseConfig, TraverseError, Traverser};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("embedding provider: {0}")]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Traverse(#[from] TraverseError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("run already terminated")]
    Terminated,
}

#[derive(Clone, Copy)]
pub struct Providers<'a> {
    pub embedder: &'a dyn EmbedderProvider,
    pub llm: &'a dyn LlmProvider,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    Stopped,
    BudgetExhausted,
}

impl TerminalReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminalReason::Stopped => "stopped",
            TerminalReason::BudgetExhausted => "budget_exhausted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedComponent {
    pub doc_id: String,
    pub component_id: String,
    pub score: f64,
}

/// `ranked` holds at most `top_k_final` distinct components, each retrieved
/// by some traverse step of `memory`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query: String,
    pub ranked: Vec<RankedComponent>,
    pub terminal: TerminalReason,
    pub initial_plan: Vec<String>,
    pub memory: Memory,
    pub cost: CostReport,
    pub warnings: Vec<String>,
}

/// One run in progress. Borrows a per-run meter and metered LLM so cost is
/// scoped to this run even when providers are shared.
pub struct QueryRun<'a> {
    graph: &'a LayeredGraph,
    index: &'a VectorIndex,
    embedder: &'a dyn EmbedderProvider,
    llm: &'a MeteredLlm<'a>,
    meter: &'a CostMeter,
    config: &'a EngineConfig,
    traverse_config: TraverseConfig,
    query_vectors: HashMap<String, Vector>,
    pub memory: Memory,
    pub initial_plan: Vec<String>,
    pub terminal: Option<TerminalReason>,
    pub warnings: Vec<String>,
}

impl<'a> QueryRun<'a> {
    /// Validates inputs and seeds the ledger with the initial plan, which
    /// costs calls but is not a history step.
    pub fn start(
        graph: &'a LayeredGraph,
        index: &'a VectorIndex,
        embedder: &'a dyn EmbedderProvider,
        llm: &'a MeteredLlm<'a>,
        meter: &'a CostMeter,
        query: &str,
        config: &'a EngineConfig,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        index.check_graph(graph)?;
        index.check_embedder(embedder)?;
        let empty = Memory::new(query, &[] as &[&str])?;
        let initial_plan = if config.ablations.no_planner {
            vec![query.to_string()]
        } else {
            plan_subqueries(llm, query, &empty.serialize_memory(config.memory_budget), config.max_llm_retries)?.value
        };
        let memory = Memory::new(query, &initial_plan)?;
        Ok(QueryRun {
            graph,
            index,
            embedder,
            llm,
            meter,
            config,
            traverse_config: config.traverse_config(),
            query_vectors: HashMap::new(),
            memory,
            initial_plan,
            terminal: None,
            warnings: Vec::new(),
        })
    }

    fn neighbor_titles(&self) -> Vec<String> {
        neighbor_docs(self.graph, &self.memory).into_iter().map(|n| self.graph.doc(n.idx).title.clone()).collect()
    }

    fn embed_query(&mut self, q: &str) -> Result<Vector, EngineError> {
        if let Some(v) = self.query_vectors.get(q) {
            return Ok(v.clone());
        }
        let v = self.meter.time(Bucket::Embedding, || self.embedder.embed_text(q))?;
        self.query_vectors.insert(q.to_string(), v.clone());
        Ok(v)
    }

    fn decide(&self) -> Result<ActionDecision, EngineError> {
        let titles = self.neighbor_titles();
        let mut d = match self.config.policy {
            Policy::Heuristic => {
                let view = PolicyView { neighbor_titles: titles, llm_calls_used: self.llm.usage().calls };
                decide_action_heuristic(&self.memory, &view, self.config)
            }
            Policy::Llm => {
                if self.memory.history.len() >= self.config.max_steps {
                    ActionDecision::stop(crate::agents::Rationale::RuleA)
                } else {
                    decide_action_llm(self.llm, &self.memory, &titles, self.config.memory_budget, self.config.max_llm_retries)?
                        .value
                }
            }
        };
        if let Action::Traverse { strategy, .. } = &mut d.action {
            let memory = &self.memory;
            let (tau, notes) = self.config.ablations.clamp(*strategy, &|a| has_anchor_docs(memory, a));
            *strategy = tau;
            d.notes.extend(notes);
        }
        if matches!(d.action, Action::Plan { .. }) && self.config.ablations.no_planner {
            d.action = Action::Stop;
            d.notes.push("clamp no_planner: plan -> stop".into());
        }
        Ok(d)
    }

    fn execute_traverse(&mut self, query: &str, d: &ActionDecision) -> Result<Observation, EngineError> {
        let Action::Traverse { strategy, .. } = &d.action else { unreachable!("traverse decision") };
        let q_vec = self.embed_query(query)?;
        let traverser = Traverser {
            graph: self.graph,
            index: self.index,
            config: &self.traverse_config,
            llm: Some(self.llm),
            meter: Some(self.meter),
        };
        let queries = Queries { original: &self.memory.original_query, subtask: query };
        let outcome = match traverser.traverse(&self.memory, queries, &q_vec, strategy) {
            Ok(o) => o,
            Err(e @ (TraverseError::EmptyPool(_) | TraverseError::BadAnchor(_))) => {
                return Ok(Observation::TraverseOutcome(TraverseObservation {
                    docs: vec![],
                    components: vec![],
                    outcome: Outcome::Failure,
                    updated_subtasks: vec![],
                    notes: vec![e.to_string()],
                }));
            }
            Err(e) => return Err(e.into()),
        };
        let mut notes: Vec<String> = outcome.warnings().cloned().collect();
        let g = self.graph;
        let candidates: Vec<EvalCandidate> = outcome
            .components
            .iter()
            .map(|(n, _)| {
                let c = g.comp(n.idx);
                EvalCandidate {
                    doc_id: g.doc(c.doc).doc_id.clone(),
                    component_id: c.component_id.clone(),
                    content: c.content.as_text(),
                }
            })
            .collect();
        let eval = evaluate_traversal(
            self.llm,
            &self.memory.original_query,
            query,
            &candidates,
            &self.memory.serialize_subtasks(),
            self.memory.subqueries.len(),
            self.config.max_llm_retries,
        )?
        .value;
        notes.extend(eval.warnings);
        Ok(Observation::TraverseOutcome(TraverseObservation {
            docs: outcome
                .candidate_docs
                .iter()
                .map(|(n, s)| {
                    let d = g.doc(n.idx);
                    RetrievedDoc { doc_id: d.doc_id.clone(), title: d.title.clone(), score: *s }
                })
                .collect(),
            components: candidates
                .iter()
                .zip(&outcome.components)
                .map(|(c, (_, s))| RetrievedComponent {
                    doc_id: c.doc_id.clone(),
                    component_id: c.component_id.clone(),
                    score: *s,
                    preview: preview(&c.content),
                })
                .collect(),
            outcome: if eval.status == EvalStatus::Answerable { Outcome::Success } else { Outcome::Failure },
            updated_subtasks: eval.updated_subtasks,
            notes,
        }))
    }

    /// One decision, its execution and the memory transition.
    pub fn step(&mut self) -> Result<(), EngineError> {
        if self.terminal.is_some() {
            return Err(EngineError::Terminated);
        }
        let t0 = self.meter.now_us();
        let u0 = self.llm.usage();
        let decision = self.decide()?;
        let observation = match &decision.action {
            Action::Traverse { query, .. } => {
                let q = query.clone();
                self.execute_traverse(&q, &decision)?
            }
            Action::Plan { .. } => {
                let text = self.memory.serialize_memory(self.config.memory_budget);
                let tasks =
                    plan_subqueries(self.llm, &self.memory.original_query, &text, self.config.max_llm_retries)?.value;
                Observation::PlanOutcome { new_subqueries: tasks }
            }
            Action::Stop => Observation::Stop,
        };
        let spent = self.llm.usage().since(u0);
        let cost = StepCost {
            wall_time_ms: self.meter.now_us().saturating_sub(t0) / 1000,
            llm_calls: spent.calls,
            token_usage: spent.usage,
        };
        let stop = decision.action == Action::Stop;
        self.memory.apply_transition(decision, observation, cost)?;
        if stop {
            self.terminal = Some(TerminalReason::Stopped);
        } else if self.memory.history.len() >= self.config.max_steps {
            self.terminal = Some(TerminalReason::BudgetExhausted);
        }
        Ok(())
    }

    /// Reranks every retrieved component and closes the cost report. A run
    /// cut short before any stop is tagged budget-exhausted.
    pub fn finish(mut self) -> Result<RetrievalResult, EngineError> {
        let terminal = self.terminal.unwrap_or(TerminalReason::BudgetExhausted);
        let g = self.graph;
        let gathered = self.memory.history.iter().filter_map(|r| r.traverse()).flat_map(|(_, _, _, o)| {
            o.components.iter().map(|c| RerankCandidate {
                doc_id: c.doc_id.clone(),
                component_id: c.component_id.clone(),
                content: g
                    .comp_ix(&c.doc_id, &c.component_id)
                    .map(|n| g.comp(n.idx).content.as_text())
                    .unwrap_or_else(|| c.preview.clone()),
                retrieval_score: c.score,
            })
        });
        let candidates = dedup_candidates(gathered);
        let k = self.config.top_k_final;
        let ranked = if self.config.llm_rerank && !candidates.is_empty() {
            match rerank_final(self.llm, &self.memory.original_query, &candidates, k, self.config.max_llm_retries) {
                Ok(call) => {
                    self.warnings.extend(call.value.1);
                    call.value.0
                }
                Err(AgentError::MalformedOutput { reason, .. }) => {
                    self.warnings.push(format!("reranker output unusable ({reason}): ordered by retrieval score"));
                    rank_by_score(&candidates, k)
                }
                Err(e) => return Err(e.into()),
            }
        } else {
            rank_by_score(&candidates, k)
        };
        let usage = self.llm.usage();
        let cost = self.meter.report(usage.calls, usage.usage, &self.config.prices);
        Ok(RetrievalResult {
            query: self.memory.original_query.clone(),
            ranked: ranked
                .into_iter()
                .map(|r| RankedComponent {
                    doc_id: candidates[r.index].doc_id.clone(),
                    component_id: candidates[r.index].component_id.clone(),
                    score: r.score,
                })
                .collect(),
            terminal,
            initial_plan: self.initial_plan,
            memory: self.memory,
            cost,
            warnings: self.warnings,
        })
    }
}

/// Plans, steps until stop or the step budget, then reranks.
pub fn run_query(
    graph: &LayeredGraph,
    index: &VectorIndex,
    providers: Providers<'_>,
    query: &str,
    config: &EngineConfig,
) -> Result<RetrievalResult, EngineError> {
    let meter = CostMeter::new(config.clock.make());
    let llm = MeteredLlm::new(providers.llm, &meter);
    let mut run = QueryRun::start(graph, index, providers.embedder, &llm, &meter, query, config)?;
    while run.terminal.is_none() {
        run.step()?;
    }
    run.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::llm::ScriptedLlm;
    use crate::agents::mock::LexicalMockLlm;
    use crate::config::Ablations;
    use crate::cost::ClockKind;
    use crate::embed::HashEmbedder;
    use crate::graph::{build_graph, SummaryOptions};
    use crate::index::{build_index, IndexBuildOptions};
    use crate::memory::SubqueryStatus;
    use crate::synth::{toy, toy_corpus};

    fn setup() -> (LayeredGraph, VectorIndex, HashEmbedder) {
        let corpus = toy_corpus(&[
            ("d1", &[toy("c1", &["s1"], &["d2"]), toy("c2", &[], &[])]),
            ("d2", &[toy("c1", &[], &[])]),
        ]);
        let graph = build_graph(&corpus, None, &SummaryOptions::default()).unwrap();
        let emb = HashEmbedder::new(64, 1);
        let index = build_index(&graph, &emb, &IndexBuildOptions::default()).unwrap();
        (graph, index, emb)
    }

    fn cfg() -> EngineConfig {
        EngineConfig { clock: ClockKind::Logical, ..Default::default() }
    }

    #[test]
    fn one_step_budget_still_ranks() {
        let (graph, index, emb) = setup();
        let llm = LexicalMockLlm::new();
        let c = EngineConfig { max_steps: 1, ..cfg() };
        let r = run_query(&graph, &index, Providers { embedder: &emb, llm: &llm }, "content of d2/c1", &c).unwrap();
        assert_eq!(r.memory.history.len(), 1);
        assert_eq!(r.terminal, TerminalReason::BudgetExhausted);
        assert!(!r.ranked.is_empty());
        assert_eq!(r.cost.llm_calls, llm.usage().calls);
        assert_eq!((r.cost.input_tokens, r.cost.output_tokens), (llm.usage().usage.input, llm.usage().usage.output));
    }

    #[test]
    fn scripted_run_applies_evaluator_updates_and_stops() {
        let (graph, index, emb) = setup();
        let llm = ScriptedLlm::new([
            r#"{"tasks":["find d2"]}"#,
            r#"{"status":"answerable","updated_subtasks":[{"index":1,"status":"answerable","answer":"yes"}]}"#,
        ]);
        let c = EngineConfig { llm_rerank: false, ..cfg() };
        let r = run_query(&graph, &index, Providers { embedder: &emb, llm: &llm }, "Q", &c).unwrap();
        assert_eq!(r.terminal, TerminalReason::Stopped);
        assert_eq!(r.memory.subqueries[0].status, SubqueryStatus::Answerable);
        assert_eq!(r.memory.history.len(), 2);
        assert_eq!(r.cost.llm_calls, 2);
        assert_eq!(llm.remaining(), 0);
    }

    #[test]
    fn no_planner_seeds_with_query_and_stops_instead_of_planning() {
        let (graph, index, emb) = setup();
        let llm = LexicalMockLlm::new();
        let c = EngineConfig { ablations: Ablations { no_planner: true, ..Default::default() }, ..cfg() };
        let r = run_query(&graph, &index, Providers { embedder: &emb, llm: &llm }, "content of d1/c2", &c).unwrap();
        assert_eq!(r.initial_plan, vec!["content of d1/c2"]);
        assert!(r.memory.history.iter().all(|h| !matches!(h.action.action, Action::Plan { .. })));
    }

    #[test]
    fn runs_are_reproducible() {
        let (graph, index, emb) = setup();
        let go = || {
            let llm = LexicalMockLlm::new();
            let r = run_query(&graph, &index, Providers { embedder: &emb, llm: &llm }, "content of d2/c1", &cfg());
            serde_json::to_string(&r.unwrap()).unwrap()
        };
        assert_eq!(go(), go());
    }
}

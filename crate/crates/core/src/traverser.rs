//! One retrieval hop: a document stage followed by a component stage, each
//! configured by a strategy tuple.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::llm::{ImagePart, LlmProvider};
use crate::agents::prompts::{render, PromptError, PromptKind};
use crate::agents::structured::{complete_structured, Exchange, Selection};
use crate::agents::{candidate_line, AgentError};
use crate::corpus::ModalPayload;
use crate::cost::{Bucket, CostMeter, TokenUsage};
use crate::embed::Vector;
use crate::graph::{GraphError, Layer, LayeredGraph, NodeId, NodeIx};
use crate::index::{IndexError, VectorIndex};
use crate::memory::Memory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocMode {
    Neighbors,
    VectorSearch,
    LlmReasoning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompMode {
    VectorSearch,
    LlmReasoning,
}

impl DocMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DocMode::Neighbors => "neighbors",
            DocMode::VectorSearch => "vector_search",
            DocMode::LlmReasoning => "llm_reasoning",
        }
    }

    /// Spelling used in the orchestrator prompt.
    pub fn prompt_str(self) -> &'static str {
        match self {
            DocMode::Neighbors => "neighbors",
            DocMode::VectorSearch => "vector search",
            DocMode::LlmReasoning => "llm reasoning",
        }
    }

    /// Accepts both the prompt and the snake_case spelling.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().replace('_', " ").as_str() {
            "neighbors" => Some(DocMode::Neighbors),
            "vector search" => Some(DocMode::VectorSearch),
            "llm reasoning" => Some(DocMode::LlmReasoning),
            _ => None,
        }
    }
}

impl CompMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CompMode::VectorSearch => "vector_search",
            CompMode::LlmReasoning => "llm_reasoning",
        }
    }

    pub fn prompt_str(self) -> &'static str {
        match self {
            CompMode::VectorSearch => "vector search",
            CompMode::LlmReasoning => "llm reasoning",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().replace('_', " ").as_str() {
            "vector search" => Some(CompMode::VectorSearch),
            "llm reasoning" => Some(CompMode::LlmReasoning),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StrategyTuple {
    pub document_mode: DocMode,
    pub component_mode: CompMode,
    pub granularity: Layer,
    /// 1-based history step whose documents anchor the hop.
    pub anchor: Option<usize>,
}

impl StrategyTuple {
    pub fn new(document_mode: DocMode, component_mode: CompMode, granularity: Layer, anchor: Option<usize>) -> Self {
        StrategyTuple { document_mode, component_mode, granularity, anchor }
    }

    pub fn with_anchor(mut self, anchor: Option<usize>) -> Self {
        self.anchor = anchor;
        self
    }

    /// The component stage never scores above the component layer.
    pub fn component_granularity(&self) -> Layer {
        self.granularity.max(Layer::Component)
    }

    pub fn llm_stages(&self) -> u64 {
        (self.document_mode == DocMode::LlmReasoning) as u64 + (self.component_mode == CompMode::LlmReasoning) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraverseConfig {
    /// Shortlist size for both stages.
    pub k: usize,
    pub max_docs: usize,
    pub max_components: usize,
    /// Attach image parts when the provider accepts them.
    pub send_images: bool,
    pub max_llm_retries: usize,
}

impl Default for TraverseConfig {
    fn default() -> Self {
        TraverseConfig { k: 30, max_docs: 5, max_components: 8, send_images: false, max_llm_retries: 2 }
    }
}

#[derive(Debug, Error)]
pub enum TraverseError {
    #[error("strategy uses llm reasoning but no LLM provider is configured")]
    MissingProvider,
    #[error("anchor step {0} is not a traverse step in memory")]
    BadAnchor(usize),
    #[error("empty candidate pool: {0}")]
    EmptyPool(String),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

impl From<PromptError> for TraverseError {
    fn from(e: PromptError) -> Self {
        TraverseError::Agent(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Documents,
    Components,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: Stage,
    pub pool: Vec<(NodeId, f64)>,
    pub selected: Vec<NodeId>,
    pub system_prompt: Option<String>,
    pub exchanges: Vec<Exchange>,
    pub warnings: Vec<String>,
}

/// Every component's parent document appears in `candidate_docs`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraversalOutcome {
    pub candidate_docs: Vec<(NodeIx, f64)>,
    pub components: Vec<(NodeIx, f64)>,
    pub stages: Vec<StageTrace>,
    pub llm_calls: u64,
    pub usage: TokenUsage,
}

impl TraversalOutcome {
    pub fn warnings(&self) -> impl Iterator<Item = &String> {
        self.stages.iter().flat_map(|s| s.warnings.iter())
    }
}

/// Documents of the anchored step, or of the most recent traverse step when
/// no anchor is given (empty before the first traverse).
pub fn anchor_docs(graph: &LayeredGraph, memory: &Memory, anchor: Option<usize>) -> Result<Vec<NodeIx>, TraverseError> {
    let rec = match anchor {
        Some(step) => {
            let rec = memory.record(step).ok_or(TraverseError::BadAnchor(step))?;
            rec.traverse().ok_or(TraverseError::BadAnchor(step))?;
            Some(rec)
        }
        None => memory.last_traverse(),
    };
    Ok(rec
        .and_then(|r| r.observation.as_traverse())
        .map(|o| o.docs.iter().filter_map(|d| graph.doc_ix(&d.doc_id)).collect())
        .unwrap_or_default())
}

/// Navigational neighbors of the most recent traverse step's documents,
/// excluding those documents, in node order.
pub fn neighbor_docs(graph: &LayeredGraph, memory: &Memory) -> Vec<NodeIx> {
    let last = anchor_docs(graph, memory, None).unwrap_or_default();
    let own: BTreeSet<NodeIx> = last.iter().copied().collect();
    let mut out: Vec<NodeIx> = graph
        .nav_neighbors(&last)
        .map(|n| n.into_iter().filter(|d| !own.contains(d)).collect())
        .unwrap_or_default();
    out.sort_by(|a, b| graph.id_parts(*a).cmp(&graph.id_parts(*b)));
    out
}

pub struct Traverser<'a> {
    pub graph: &'a LayeredGraph,
    pub index: &'a VectorIndex,
    pub config: &'a TraverseConfig,
    pub llm: Option<&'a dyn LlmProvider>,
    pub meter: Option<&'a CostMeter>,
}

#[derive(Debug, Clone, Copy)]
pub struct Queries<'a> {
    pub original: &'a str,
    pub subtask: &'a str,
}

impl<'a> Traverser<'a> {
    fn timed<T>(&self, f: impl FnOnce() -> T) -> T {
        match self.meter {
            Some(m) => m.time(Bucket::VectorSearch, f),
            None => f(),
        }
    }

    fn require_llm(&self) -> Result<&'a dyn LlmProvider, TraverseError> {
        self.llm.ok_or(TraverseError::MissingProvider)
    }

    fn ranked(&self, q: &Vector, pool: &[NodeIx], g: Layer, warnings: &mut Vec<String>) -> Result<Vec<(NodeIx, f64)>, TraverseError> {
        let top = self.timed(|| self.index.topk_nodes(self.graph, q, pool, g, self.config.k.max(1)))?;
        if !top.skipped.is_empty() {
            let ids: Vec<String> = top.skipped.iter().map(|n| self.graph.node_id(*n).to_string()).collect();
            warnings.push(format!("no descendants at layer {g}: skipped {}", ids.join(", ")));
        }
        Ok(top.hits)
    }

    fn trace_pool(&self, pool: &[(NodeIx, f64)]) -> Vec<(NodeId, f64)> {
        pool.iter().map(|(n, s)| (self.graph.node_id(*n), *s)).collect()
    }

    pub fn select_documents(
        &self,
        queries: Queries<'_>,
        q_vec: &Vector,
        tau: &StrategyTuple,
        anchors: &[NodeIx],
    ) -> Result<(Vec<(NodeIx, f64)>, StageTrace), TraverseError> {
        let mut warnings = Vec::new();
        let candidates: Vec<NodeIx> = match tau.document_mode {
            DocMode::Neighbors => {
                if anchors.is_empty() {
                    return Err(TraverseError::EmptyPool("neighbors mode without anchor documents".into()));
                }
                self.graph.nav_neighbors(anchors)?.into_iter().collect()
            }
            DocMode::VectorSearch | DocMode::LlmReasoning => self.graph.layer_nodes(Layer::Document).collect(),
        };
        let pool = self.ranked(q_vec, &candidates, tau.granularity, &mut warnings)?;
        let mut trace = StageTrace {
            stage: Stage::Documents,
            pool: self.trace_pool(&pool),
            selected: vec![],
            system_prompt: None,
            exchanges: vec![],
            warnings: vec![],
        };
        let selected = if tau.document_mode == DocMode::LlmReasoning && !pool.is_empty() {
            let llm = self.require_llm()?;
            let lines: Vec<String> = pool
                .iter()
                .enumerate()
                .map(|(i, (n, _))| {
                    let d = self.graph.doc(n.idx);
                    candidate_line(
                        i,
                        serde_json::json!({"filename": d.doc_id, "title": d.title, "summary": d.summary}),
                    )
                })
                .collect();
            let max = self.config.max_docs.to_string();
            let req = render(
                PromptKind::DocTraverser,
                &[
                    ("original_query", queries.original),
                    ("subtask_query", queries.subtask),
                    ("vector_granularity", tau.granularity.as_str()),
                    ("candidates", &lines.join("\n")),
                    ("max_results", &max),
                ],
            )?;
            trace.system_prompt = Some(req.system.clone());
            let call = complete_structured(llm, &req, self.config.max_llm_retries, |o: SelectionOut| Ok(o.selection))?;
            trace.exchanges = call.exchanges;
            let chosen = validate_selection(self.graph, call.value, &pool, false, self.config.max_docs, &mut warnings);
            if chosen.is_empty() {
                warnings.push("document selection was empty; using the vector shortlist prefix".into());
                pool.iter().take(self.config.max_docs).copied().collect()
            } else {
                chosen
            }
        } else {
            pool
        };
        trace.selected = selected.iter().map(|(n, _)| self.graph.node_id(*n)).collect();
        trace.warnings = warnings;
        Ok((selected, trace))
    }

    pub fn select_components(
        &self,
        queries: Queries<'_>,
        q_vec: &Vector,
        tau: &StrategyTuple,
        docs: &[(NodeIx, f64)],
    ) -> Result<(Vec<(NodeIx, f64)>, StageTrace), TraverseError> {
        let mut warnings = Vec::new();
        let candidates: Vec<NodeIx> =
            docs.iter().flat_map(|(d, _)| self.graph.doc(d.idx).components.iter().map(|&c| NodeIx::comp(c))).collect();
        if candidates.is_empty() {
            return Err(TraverseError::EmptyPool("selected documents have no components".into()));
        }
        let pool = self.ranked(q_vec, &candidates, tau.component_granularity(), &mut warnings)?;
        let mut trace = StageTrace {
            stage: Stage::Components,
            pool: self.trace_pool(&pool),
            selected: vec![],
            system_prompt: None,
            exchanges: vec![],
            warnings: vec![],
        };
        let selected = if tau.component_mode == CompMode::LlmReasoning && !pool.is_empty() {
            let llm = self.require_llm()?;
            let lines: Vec<String> = pool
                .iter()
                .enumerate()
                .map(|(i, (n, _))| {
                    let c = self.graph.comp(n.idx);
                    candidate_line(
                        i,
                        serde_json::json!({
                            "filename": self.graph.doc(c.doc).doc_id,
                            "component_id": c.component_id,
                            "modality": c.content.modality().as_str(),
                            "content": c.content.as_text(),
                        }),
                    )
                })
                .collect();
            let max = self.config.max_components.to_string();
            let mut req = render(
                PromptKind::CompTraverser,
                &[
                    ("original_query", queries.original),
                    ("subtask_query", queries.subtask),
                    ("vector_granularity", tau.component_granularity().as_str()),
                    ("candidates", &lines.join("\n")),
                    ("max_results", &max),
                ],
            )?;
            if self.config.send_images && llm.supports_images() {
                req.images = image_parts(self.graph, pool.iter().map(|(n, _)| *n));
            }
            trace.system_prompt = Some(req.system.clone());
            let call = complete_structured(llm, &req, self.config.max_llm_retries, |o: SelectionOut| Ok(o.selection))?;
            trace.exchanges = call.exchanges;
            validate_selection(self.graph, call.value, &pool, true, self.config.max_components, &mut warnings)
        } else {
            pool
        };
        trace.selected = selected.iter().map(|(n, _)| self.graph.node_id(*n)).collect();
        trace.warnings = warnings;
        Ok((selected, trace))
    }

    /// Runs both stages. `q_vec` is the embedding of `queries.subtask`.
    pub fn traverse(
        &self,
        memory: &Memory,
        queries: Queries<'_>,
        q_vec: &Vector,
        tau: &StrategyTuple,
    ) -> Result<TraversalOutcome, TraverseError> {
        if tau.llm_stages() > 0 && self.llm.is_none() {
            return Err(TraverseError::MissingProvider);
        }
        let anchors = anchor_docs(self.graph, memory, tau.anchor)?;
        let before = self.llm.map(|l| l.usage()).unwrap_or_default();
        let (docs, doc_trace) = self.select_documents(queries, q_vec, tau, &anchors)?;
        if docs.is_empty() {
            return Err(TraverseError::EmptyPool("no scorable candidate documents".into()));
        }
        let (components, comp_trace) = self.select_components(queries, q_vec, tau, &docs)?;
        let spent = self.llm.map(|l| l.usage().since(before)).unwrap_or_default();
        Ok(TraversalOutcome {
            candidate_docs: docs,
            components,
            stages: vec![doc_trace, comp_trace],
            llm_calls: spent.calls,
            usage: spent.usage,
        })
    }
}

#[derive(Debug, Deserialize)]
struct SelectionOut {
    selection: Vec<Selection>,
}

pub(crate) fn image_parts(graph: &LayeredGraph, nodes: impl Iterator<Item = NodeIx>) -> Vec<ImagePart> {
    nodes
        .filter_map(|n| match &graph.comp(n.idx).content {
            ModalPayload::Image { media_ref, caption } => {
                Some(ImagePart { media_ref: media_ref.clone(), caption: caption.clone() })
            }
            _ => None,
        })
        .collect()
}

/// Keeps only selections that name a pool entry: valid index, matching
/// filename and component id when given, first occurrence, at most `max`.
pub(crate) fn validate_selection(
    graph: &LayeredGraph,
    selection: Vec<Selection>,
    pool: &[(NodeIx, f64)],
    components: bool,
    max: usize,
    warnings: &mut Vec<String>,
) -> Vec<(NodeIx, f64)> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for s in selection {
        let Some(&(node, vec_score)) = usize::try_from(s.index).ok().and_then(|i| pool.get(i)) else {
            warnings.push(format!("dropped out-of-range index {}", s.index));
            continue;
        };
        let id = graph.node_id(node);
        if s.filename.as_deref().is_some_and(|f| f != id.doc_id) {
            warnings.push(format!("dropped index {}: filename does not match {}", s.index, id.doc_id));
            continue;
        }
        if components && s.component_id.as_deref().is_some_and(|c| Some(c) != id.component_id.as_deref()) {
            warnings.push(format!("dropped index {}: component_id does not match {id}", s.index));
            continue;
        }
        if !seen.insert(node) {
            warnings.push(format!("dropped duplicate index {}", s.index));
            continue;
        }
        if out.len() == max {
            warnings.push(format!("dropped selections beyond max_results={max}"));
            break;
        }
        out.push((node, s.score.map_or(vec_score, |x| x.clamp(0.0, 1.0))));
    }
    out
}

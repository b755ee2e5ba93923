//! Three-layer component graph: documents (layer 0), components (layer 1)
//! and subcomponents (layer 2), joined by hierarchical "contains" edges and
//! navigational component → document edges taken from corpus links.
//!
//! Nodes are stored in dense per-layer tables; [`NodeIx`] is the cheap
//! handle used on hot paths and [`NodeId`] the stable string identity.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{validate_corpus, Corpus, Document, ModalPayload};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("layer {requested} is above node layer {node}")]
    LayerAboveNode { requested: u8, node: u8 },
    #[error("expected a document node, got {0}")]
    NotADocument(String),
    #[error("corpus contains duplicate identifiers: {0:?}")]
    DuplicateIds(Vec<String>),
    #[error("summarizer failed for document `{doc_id}`: {cause}")]
    SummarizerFailure { doc_id: String, cause: String },
    #[error("snapshot: {0}")]
    Snapshot(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Document = 0,
    Component = 1,
    Subcomponent = 2,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::Document, Layer::Component, Layer::Subcomponent];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Layer> {
        match i {
            0 => Some(Layer::Document),
            1 => Some(Layer::Component),
            2 => Some(Layer::Subcomponent),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Document => "document",
            Layer::Component => "component",
            Layer::Subcomponent => "subcomponent",
        }
    }

    pub fn parse(s: &str) -> Option<Layer> {
        Layer::ALL.into_iter().find(|l| l.as_str() == s.trim().to_ascii_lowercase())
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Stable identity of a graph node. Ordering is layer first, then the
/// identifier path, which gives the deterministic tie-break used by ranking.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub layer: Layer,
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_id: Option<String>,
}

impl NodeId {
    pub fn document(doc_id: impl Into<String>) -> Self {
        NodeId { layer: Layer::Document, doc_id: doc_id.into(), component_id: None, sub_id: None }
    }

    pub fn component(doc_id: impl Into<String>, component_id: impl Into<String>) -> Self {
        NodeId {
            layer: Layer::Component,
            doc_id: doc_id.into(),
            component_id: Some(component_id.into()),
            sub_id: None,
        }
    }

    pub fn subcomponent(doc_id: impl Into<String>, component_id: impl Into<String>, sub_id: impl Into<String>) -> Self {
        NodeId {
            layer: Layer::Subcomponent,
            doc_id: doc_id.into(),
            component_id: Some(component_id.into()),
            sub_id: Some(sub_id.into()),
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.doc_id)?;
        if let Some(c) = &self.component_id {
            write!(f, "/{c}")?;
        }
        if let Some(s) = &self.sub_id {
            write!(f, "/{s}")?;
        }
        Ok(())
    }
}

/// Dense handle: a layer plus a row in that layer's node table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeIx {
    pub layer: Layer,
    pub idx: u32,
}

impl NodeIx {
    pub fn doc(idx: u32) -> Self {
        NodeIx { layer: Layer::Document, idx }
    }
    pub fn comp(idx: u32) -> Self {
        NodeIx { layer: Layer::Component, idx }
    }
    pub fn sub(idx: u32) -> Self {
        NodeIx { layer: Layer::Subcomponent, idx }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocNode {
    pub doc_id: String,
    pub title: String,
    /// Text stored on the node: the summary (explicit, generated, or fallback).
    pub summary: String,
    pub components: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompNode {
    pub doc: u32,
    pub component_id: String,
    pub content: ModalPayload,
    pub subcomponents: Vec<u32>,
    /// Navigational edge targets (document rows), deduplicated, in link order.
    pub links: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubNode {
    pub comp: u32,
    pub sub_id: String,
    pub content: String,
}

/// Borrowed view of a node's stored content.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeContent<'a> {
    Summary(&'a str),
    Payload(&'a ModalPayload),
    Text(&'a str),
}

impl NodeContent<'_> {
    pub fn to_text(&self) -> String {
        match self {
            NodeContent::Summary(s) | NodeContent::Text(s) => s.to_string(),
            NodeContent::Payload(p) => p.as_text(),
        }
    }
}

/// Produces a document summary when the corpus does not carry one.
pub trait Summarizer {
    fn summarize(&self, doc: &Document) -> Result<String, String>;
}

#[derive(Debug, Clone)]
pub struct SummaryOptions {
    /// Characters of the first component appended to the title in the fallback summary.
    pub fallback_chars: usize,
    pub allow_fallback: bool,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        SummaryOptions { fallback_chars: 200, allow_fallback: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayeredGraph {
    docs: Vec<DocNode>,
    comps: Vec<CompNode>,
    subs: Vec<SubNode>,
    doc_lookup: HashMap<String, u32>,
    comp_lookup: HashMap<(u32, String), u32>,
    sub_lookup: HashMap<(u32, String), u32>,
}

/// Builds the graph. Summary precedence: the document's own summary, then
/// the summarizer, then title plus a truncated first component.
pub fn build_graph(
    corpus: &Corpus,
    summarizer: Option<&dyn Summarizer>,
    opts: &SummaryOptions,
) -> Result<LayeredGraph, GraphError> {
    let report = validate_corpus(corpus);
    if !report.duplicate_ids.is_empty() {
        return Err(GraphError::DuplicateIds(report.duplicate_ids));
    }

    let mut docs = Vec::with_capacity(corpus.documents.len());
    let mut comps = Vec::with_capacity(corpus.component_count());
    let mut subs = Vec::with_capacity(corpus.subcomponent_count());
    let doc_lookup: HashMap<String, u32> = corpus
        .documents
        .iter()
        .enumerate()
        .map(|(i, d)| (d.doc_id.clone(), i as u32))
        .collect();

    for (di, doc) in corpus.documents.iter().enumerate() {
        let summary = resolve_summary(doc, summarizer, opts)?;
        let mut comp_rows = Vec::with_capacity(doc.components.len());
        for comp in &doc.components {
            let ci = comps.len() as u32;
            comp_rows.push(ci);
            let mut sub_rows = Vec::with_capacity(comp.subcomponents.len());
            for sub in &comp.subcomponents {
                sub_rows.push(subs.len() as u32);
                subs.push(SubNode { comp: ci, sub_id: sub.sub_id.clone(), content: sub.content.clone() });
            }
            let mut links: Vec<u32> = Vec::new();
            for target in &comp.links {
                if let Some(&t) = doc_lookup.get(target) {
                    if !links.contains(&t) {
                        links.push(t);
                    }
                }
            }
            comps.push(CompNode {
                doc: di as u32,
                component_id: comp.component_id.clone(),
                content: comp.content.clone(),
                subcomponents: sub_rows,
                links,
            });
        }
        docs.push(DocNode {
            doc_id: doc.doc_id.clone(),
            title: doc.title.clone(),
            summary,
            components: comp_rows,
        });
    }
    Ok(LayeredGraph::from_tables(docs, comps, subs))
}

fn resolve_summary(doc: &Document, summarizer: Option<&dyn Summarizer>, opts: &SummaryOptions) -> Result<String, GraphError> {
    if let Some(s) = &doc.summary {
        return Ok(s.clone());
    }
    let generated = summarizer.map(|s| s.summarize(doc));
    match generated {
        Some(Ok(s)) => Ok(s),
        Some(Err(cause)) if !opts.allow_fallback => {
            Err(GraphError::SummarizerFailure { doc_id: doc.doc_id.clone(), cause })
        }
        None if !opts.allow_fallback => Err(GraphError::SummarizerFailure {
            doc_id: doc.doc_id.clone(),
            cause: "no summary field and no summarizer configured".into(),
        }),
        _ => Ok(fallback_summary(doc, opts.fallback_chars)),
    }
}

fn fallback_summary(doc: &Document, max_chars: usize) -> String {
    match doc.components.first() {
        Some(c) => {
            let text: String = c.content.as_text().chars().take(max_chars).collect();
            format!("{}: {}", doc.title, text)
        }
        None => doc.title.clone(),
    }
}

impl LayeredGraph {
    fn from_tables(docs: Vec<DocNode>, comps: Vec<CompNode>, subs: Vec<SubNode>) -> Self {
        let doc_lookup = docs.iter().enumerate().map(|(i, d)| (d.doc_id.clone(), i as u32)).collect();
        let comp_lookup = comps
            .iter()
            .enumerate()
            .map(|(i, c)| ((c.doc, c.component_id.clone()), i as u32))
            .collect();
        let sub_lookup = subs
            .iter()
            .enumerate()
            .map(|(i, s)| ((s.comp, s.sub_id.clone()), i as u32))
            .collect();
        LayeredGraph { docs, comps, subs, doc_lookup, comp_lookup, sub_lookup }
    }

    pub fn layer_len(&self, layer: Layer) -> usize {
        match layer {
            Layer::Document => self.docs.len(),
            Layer::Component => self.comps.len(),
            Layer::Subcomponent => self.subs.len(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.docs.len() + self.comps.len() + self.subs.len()
    }

    pub fn hierarchical_edge_count(&self) -> usize {
        self.comps.len() + self.subs.len()
    }

    pub fn navigational_edges(&self) -> impl Iterator<Item = (NodeIx, NodeIx)> + '_ {
        self.comps
            .iter()
            .enumerate()
            .flat_map(|(ci, c)| c.links.iter().map(move |&d| (NodeIx::comp(ci as u32), NodeIx::doc(d))))
    }

    pub fn docs(&self) -> &[DocNode] {
        &self.docs
    }
    pub fn comps(&self) -> &[CompNode] {
        &self.comps
    }
    pub fn subs(&self) -> &[SubNode] {
        &self.subs
    }

    pub fn doc(&self, idx: u32) -> &DocNode {
        &self.docs[idx as usize]
    }
    pub fn comp(&self, idx: u32) -> &CompNode {
        &self.comps[idx as usize]
    }
    pub fn sub(&self, idx: u32) -> &SubNode {
        &self.subs[idx as usize]
    }

    /// Every node of a layer, in table order.
    pub fn layer_nodes(&self, layer: Layer) -> impl Iterator<Item = NodeIx> {
        (0..self.layer_len(layer) as u32).map(move |idx| NodeIx { layer, idx })
    }

    pub fn contains(&self, ix: NodeIx) -> bool {
        (ix.idx as usize) < self.layer_len(ix.layer)
    }

    pub fn resolve(&self, id: &NodeId) -> Option<NodeIx> {
        let d = *self.doc_lookup.get(&id.doc_id)?;
        match id.layer {
            Layer::Document => Some(NodeIx::doc(d)),
            Layer::Component => {
                let c = self.comp_lookup.get(&(d, id.component_id.clone()?))?;
                Some(NodeIx::comp(*c))
            }
            Layer::Subcomponent => {
                let c = *self.comp_lookup.get(&(d, id.component_id.clone()?))?;
                let s = self.sub_lookup.get(&(c, id.sub_id.clone()?))?;
                Some(NodeIx::sub(*s))
            }
        }
    }

    pub fn doc_ix(&self, doc_id: &str) -> Option<NodeIx> {
        self.doc_lookup.get(doc_id).map(|&d| NodeIx::doc(d))
    }

    pub fn comp_ix(&self, doc_id: &str, component_id: &str) -> Option<NodeIx> {
        let d = *self.doc_lookup.get(doc_id)?;
        self.comp_lookup.get(&(d, component_id.to_string())).map(|&c| NodeIx::comp(c))
    }

    pub fn node_id(&self, ix: NodeIx) -> NodeId {
        let (layer, doc, comp, sub) = self.id_parts(ix);
        NodeId {
            layer,
            doc_id: doc.to_string(),
            component_id: comp.map(str::to_string),
            sub_id: sub.map(str::to_string),
        }
    }

    /// Borrowed identity parts; ordering on this tuple equals [`NodeId`] ordering.
    pub fn id_parts(&self, ix: NodeIx) -> (Layer, &str, Option<&str>, Option<&str>) {
        match ix.layer {
            Layer::Document => (Layer::Document, &self.doc(ix.idx).doc_id, None, None),
            Layer::Component => {
                let c = self.comp(ix.idx);
                (Layer::Component, &self.doc(c.doc).doc_id, Some(&c.component_id), None)
            }
            Layer::Subcomponent => {
                let s = self.sub(ix.idx);
                let c = self.comp(s.comp);
                (Layer::Subcomponent, &self.doc(c.doc).doc_id, Some(&c.component_id), Some(&s.sub_id))
            }
        }
    }

    /// Document row owning a node.
    pub fn owning_doc(&self, ix: NodeIx) -> u32 {
        match ix.layer {
            Layer::Document => ix.idx,
            Layer::Component => self.comp(ix.idx).doc,
            Layer::Subcomponent => self.comp(self.sub(ix.idx).comp).doc,
        }
    }

    fn check(&self, ix: NodeIx) -> Result<(), GraphError> {
        if self.contains(ix) {
            Ok(())
        } else {
            Err(GraphError::UnknownNode(format!("{:?}#{}", ix.layer, ix.idx)))
        }
    }

    /// Calls `f` for every descendant of `node` at layer `g` (the node itself
    /// when it already sits at `g`).
    pub fn for_each_descendant(&self, node: NodeIx, g: Layer, mut f: impl FnMut(NodeIx)) -> Result<(), GraphError> {
        self.check(node)?;
        if g < node.layer {
            return Err(GraphError::LayerAboveNode { requested: g.index(), node: node.layer.index() });
        }
        match (node.layer, g) {
            (a, b) if a == b => f(node),
            (Layer::Document, Layer::Component) => {
                for &c in &self.doc(node.idx).components {
                    f(NodeIx::comp(c));
                }
            }
            (Layer::Document, Layer::Subcomponent) => {
                for &c in &self.doc(node.idx).components {
                    for &s in &self.comp(c).subcomponents {
                        f(NodeIx::sub(s));
                    }
                }
            }
            (Layer::Component, Layer::Subcomponent) => {
                for &s in &self.comp(node.idx).subcomponents {
                    f(NodeIx::sub(s));
                }
            }
            _ => unreachable!("layer ordering checked above"),
        }
        Ok(())
    }

    pub fn descendants_at(&self, node: NodeIx, g: Layer) -> Result<Vec<NodeIx>, GraphError> {
        let mut out = Vec::new();
        self.for_each_descendant(node, g, |u| out.push(u))?;
        Ok(out)
    }

    /// Navigational neighbourhood of a set of documents: the anchors
    /// themselves plus every document linked from one of their components.
    pub fn nav_neighbors(&self, anchors: &[NodeIx]) -> Result<BTreeSet<NodeIx>, GraphError> {
        let mut out = BTreeSet::new();
        for &a in anchors {
            self.check(a)?;
            if a.layer != Layer::Document {
                return Err(GraphError::NotADocument(self.node_id(a).to_string()));
            }
            out.insert(a);
            for &c in &self.doc(a.idx).components {
                out.extend(self.comp(c).links.iter().map(|&d| NodeIx::doc(d)));
            }
        }
        Ok(out)
    }

    pub fn node_content(&self, ix: NodeIx) -> Result<NodeContent<'_>, GraphError> {
        self.check(ix)?;
        Ok(match ix.layer {
            Layer::Document => NodeContent::Summary(&self.doc(ix.idx).summary),
            Layer::Component => NodeContent::Payload(&self.comp(ix.idx).content),
            Layer::Subcomponent => NodeContent::Text(&self.sub(ix.idx).content),
        })
    }

    // ---- snapshot ----

    pub fn to_snapshot(&self) -> GraphSnapshot {
        GraphSnapshot {
            format: GRAPH_FORMAT.to_string(),
            documents: self
                .docs
                .iter()
                .map(|d| DocRow { doc_id: d.doc_id.clone(), title: d.title.clone(), summary: d.summary.clone() })
                .collect(),
            components: self
                .comps
                .iter()
                .map(|c| CompRow { component_id: c.component_id.clone(), content: c.content.clone() })
                .collect(),
            subcomponents: self
                .subs
                .iter()
                .map(|s| SubRow { sub_id: s.sub_id.clone(), content: s.content.clone() })
                .collect(),
            hierarchical_edges: HierEdges {
                document_component: self
                    .docs
                    .iter()
                    .enumerate()
                    .flat_map(|(d, n)| n.components.iter().map(move |&c| [d as u32, c]))
                    .collect(),
                component_subcomponent: self
                    .comps
                    .iter()
                    .enumerate()
                    .flat_map(|(c, n)| n.subcomponents.iter().map(move |&s| [c as u32, s]))
                    .collect(),
            },
            navigational_edges: self.navigational_edges().map(|(c, d)| [c.idx, d.idx]).collect(),
        }
    }

    pub fn to_snapshot_string(&self) -> String {
        serde_json::to_string(&self.to_snapshot()).expect("graph snapshot always serializes")
    }

    pub fn from_snapshot(snap: GraphSnapshot) -> Result<Self, GraphError> {
        if snap.format != GRAPH_FORMAT {
            return Err(GraphError::Snapshot(format!("unsupported format tag `{}`", snap.format)));
        }
        let bad = |m: String| GraphError::Snapshot(m);
        let mut docs: Vec<DocNode> = snap
            .documents
            .into_iter()
            .map(|d| DocNode { doc_id: d.doc_id, title: d.title, summary: d.summary, components: vec![] })
            .collect();
        let mut comp_parent: Vec<Option<u32>> = vec![None; snap.components.len()];
        for [d, c] in snap.hierarchical_edges.document_component {
            let slot = comp_parent
                .get_mut(c as usize)
                .ok_or_else(|| bad(format!("component row {c} out of range")))?;
            if slot.replace(d).is_some() {
                return Err(bad(format!("component row {c} has two parents")));
            }
            docs.get_mut(d as usize)
                .ok_or_else(|| bad(format!("document row {d} out of range")))?
                .components
                .push(c);
        }
        let mut comps = Vec::with_capacity(snap.components.len());
        for (i, (row, parent)) in snap.components.into_iter().zip(comp_parent).enumerate() {
            let doc = parent.ok_or_else(|| bad(format!("component row {i} has no parent")))?;
            comps.push(CompNode {
                doc,
                component_id: row.component_id,
                content: row.content,
                subcomponents: vec![],
                links: vec![],
            });
        }
        let mut sub_parent: Vec<Option<u32>> = vec![None; snap.subcomponents.len()];
        for [c, s] in snap.hierarchical_edges.component_subcomponent {
            let slot = sub_parent
                .get_mut(s as usize)
                .ok_or_else(|| bad(format!("subcomponent row {s} out of range")))?;
            if slot.replace(c).is_some() {
                return Err(bad(format!("subcomponent row {s} has two parents")));
            }
            comps.get_mut(c as usize)
                .ok_or_else(|| bad(format!("component row {c} out of range")))?
                .subcomponents
                .push(s);
        }
        let mut subs = Vec::with_capacity(snap.subcomponents.len());
        for (i, (row, parent)) in snap.subcomponents.into_iter().zip(sub_parent).enumerate() {
            let comp = parent.ok_or_else(|| bad(format!("subcomponent row {i} has no parent")))?;
            subs.push(SubNode { comp, sub_id: row.sub_id, content: row.content });
        }
        for [c, d] in snap.navigational_edges {
            if d as usize >= docs.len() {
                return Err(bad(format!("navigational target row {d} out of range")));
            }
            comps.get_mut(c as usize)
                .ok_or_else(|| bad(format!("navigational source row {c} out of range")))?
                .links
                .push(d);
        }
        Ok(LayeredGraph::from_tables(docs, comps, subs))
    }

    pub fn from_snapshot_str(s: &str) -> Result<Self, GraphError> {
        let snap: GraphSnapshot = serde_json::from_str(s).map_err(|e| GraphError::Snapshot(e.to_string()))?;
        Self::from_snapshot(snap)
    }
}

pub const GRAPH_FORMAT: &str = "anchorhop.graph.v1";

/// Serialized graph: per-layer node tables plus edge lists of row indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSnapshot {
    pub format: String,
    pub documents: Vec<DocRow>,
    pub components: Vec<CompRow>,
    pub subcomponents: Vec<SubRow>,
    pub hierarchical_edges: HierEdges,
    pub navigational_edges: Vec<[u32; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocRow {
    pub doc_id: String,
    pub title: String,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompRow {
    pub component_id: String,
    pub content: ModalPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubRow {
    pub sub_id: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierEdges {
    pub document_component: Vec<[u32; 2]>,
    pub component_subcomponent: Vec<[u32; 2]>,
}

//! Per-node embeddings for every graph layer, similarity, descendant-max
//! scoring and exact top-k search.

use std::cmp::Ordering;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbedInput, EmbedderProvider, Fingerprint, ProviderError, Vector};
use crate::graph::{GraphError, Layer, LayeredGraph, NodeId, NodeIx};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("node {0} has no descendants at the requested layer")]
    EmptyDescendants(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("embedding failed for node {node}: {cause}")]
    EmbedderFailure { node: String, cause: ProviderError },
    #[error("index was built with {index}, configured embedder is {configured}")]
    FingerprintMismatch { index: Fingerprint, configured: Fingerprint },
    #[error("index does not match graph: {0}")]
    GraphMismatch(String),
    #[error("index snapshot line {line}: {reason}")]
    Snapshot { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    Dot,
}

/// Cosine similarity. A zero vector has similarity 0 with everything.
pub fn similarity(a: &Vector, b: &Vector) -> Result<f64, IndexError> {
    if a.dim() != b.dim() {
        return Err(IndexError::DimensionMismatch { left: a.dim(), right: b.dim() });
    }
    Ok(cosine(&a.0, &b.0))
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

impl Metric {
    pub fn score(self, a: &[f32], b: &[f32]) -> f64 {
        match self {
            Metric::Cosine => cosine(a, b),
            Metric::Dot => dot(a, b),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dimension: usize,
    fingerprint: Fingerprint,
    metric: Metric,
    layers: [Vec<Vector>; 3],
}

#[derive(Debug, Clone)]
pub struct IndexBuildOptions {
    pub batch_size: usize,
    pub retries: usize,
    pub parallelism: usize,
}

impl Default for IndexBuildOptions {
    fn default() -> Self {
        IndexBuildOptions { batch_size: 32, retries: 2, parallelism: 4 }
    }
}

fn node_input(graph: &LayeredGraph, ix: NodeIx) -> EmbedInput {
    match ix.layer {
        Layer::Document => EmbedInput::Text(graph.doc(ix.idx).summary.clone()),
        Layer::Component => EmbedInput::from_payload(&graph.comp(ix.idx).content),
        Layer::Subcomponent => EmbedInput::Text(graph.sub(ix.idx).content.clone()),
    }
}

fn embed_with_retry(
    embedder: &dyn EmbedderProvider,
    inputs: &[EmbedInput],
    retries: usize,
) -> Result<Vec<Vector>, ProviderError> {
    let mut last = None;
    for _ in 0..=retries {
        match embedder.embed(inputs) {
            Ok(v) if v.len() == inputs.len() => return Ok(v),
            Ok(v) => {
                last = Some(ProviderError::BadResponse(format!("expected {} vectors, got {}", inputs.len(), v.len())))
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Embeds every node of every layer. Batches run on up to
/// `opts.parallelism` threads; results are keyed by node, so arrival order
/// does not matter. A batch that still fails after its retries is re-run one
/// node at a time to name the failing node.
pub fn build_index(
    graph: &LayeredGraph,
    embedder: &dyn EmbedderProvider,
    opts: &IndexBuildOptions,
) -> Result<VectorIndex, IndexError> {
    let dim = embedder.dimension();
    let nodes: Vec<NodeIx> = Layer::ALL.iter().flat_map(|&l| graph.layer_nodes(l)).collect();
    let batches: Vec<&[NodeIx]> = nodes.chunks(opts.batch_size.max(1)).collect();
    let results: Vec<Mutex<Option<Vec<Vector>>>> = batches.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let failure: Mutex<Option<IndexError>> = Mutex::new(None);

    let worker = || loop {
        let b = next.fetch_add(1, AtomicOrdering::SeqCst);
        if b >= batches.len() || failure.lock().unwrap().is_some() {
            break;
        }
        let batch = batches[b];
        let inputs: Vec<EmbedInput> = batch.iter().map(|&ix| node_input(graph, ix)).collect();
        let outcome = embed_with_retry(embedder, &inputs, opts.retries).or_else(|_| {
            // isolate the failing node
            let mut out = Vec::with_capacity(inputs.len());
            for (input, &ix) in inputs.iter().zip(batch) {
                match embed_with_retry(embedder, std::slice::from_ref(input), opts.retries) {
                    Ok(mut v) => out.push(v.remove(0)),
                    Err(cause) => {
                        return Err(IndexError::EmbedderFailure { node: graph.node_id(ix).to_string(), cause })
                    }
                }
            }
            Ok(out)
        });
        match outcome {
            Ok(vectors) => {
                if let Some((v, &ix)) = vectors.iter().zip(batch).find(|(v, _)| v.dim() != dim) {
                    let err = IndexError::EmbedderFailure {
                        node: graph.node_id(ix).to_string(),
                        cause: ProviderError::BadResponse(format!("vector of dimension {} (expected {dim})", v.dim())),
                    };
                    failure.lock().unwrap().get_or_insert(err);
                    break;
                }
                *results[b].lock().unwrap() = Some(vectors);
            }
            Err(e) => {
                failure.lock().unwrap().get_or_insert(e);
                break;
            }
        }
    };

    let threads = opts.parallelism.max(1).min(batches.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(worker);
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }

    let mut layers: [Vec<Vector>; 3] = Default::default();
    for (batch, slot) in batches.iter().zip(results) {
        let vectors = slot.into_inner().unwrap().expect("every batch completed");
        for (&ix, v) in batch.iter().zip(vectors) {
            layers[ix.layer as usize].push(v);
        }
    }
    Ok(VectorIndex { dimension: dim, fingerprint: embedder.fingerprint(), metric: Metric::Cosine, layers })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopK {
    pub hits: Vec<(NodeIx, f64)>,
    /// Candidates with nothing to score at the requested layer.
    pub skipped: Vec<NodeIx>,
}

impl VectorIndex {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn fingerprint(&self) -> &Fingerprint {
        &self.fingerprint
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn with_metric(mut self, metric: Metric) -> Self {
        self.metric = metric;
        self
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vector(&self, ix: NodeIx) -> &Vector {
        &self.layers[ix.layer as usize][ix.idx as usize]
    }

    /// Refuses queries when the configured embedder differs from the one
    /// the index was built with.
    pub fn check_embedder(&self, embedder: &dyn EmbedderProvider) -> Result<(), IndexError> {
        let configured = embedder.fingerprint();
        if configured != self.fingerprint || embedder.dimension() != self.dimension {
            return Err(IndexError::FingerprintMismatch { index: self.fingerprint.clone(), configured });
        }
        Ok(())
    }

    pub fn check_graph(&self, graph: &LayeredGraph) -> Result<(), IndexError> {
        for l in Layer::ALL {
            if self.layers[l as usize].len() != graph.layer_len(l) {
                return Err(IndexError::GraphMismatch(format!(
                    "layer {l}: {} vectors for {} nodes",
                    self.layers[l as usize].len(),
                    graph.layer_len(l)
                )));
            }
        }
        Ok(())
    }

    /// Max similarity between `q` and any descendant of `v` at layer `g`.
    pub fn score_vec(&self, graph: &LayeredGraph, q: &Vector, v: NodeIx, g: Layer) -> Result<f64, IndexError> {
        if q.dim() != self.dimension {
            return Err(IndexError::DimensionMismatch { left: q.dim(), right: self.dimension });
        }
        let mut best: Option<f64> = None;
        graph.for_each_descendant(v, g, |u| {
            let s = self.metric.score(&q.0, &self.vector(u).0);
            best = Some(best.map_or(s, |b| b.max(s)));
        })?;
        best.ok_or_else(|| IndexError::EmptyDescendants(graph.node_id(v).to_string()))
    }

    /// Top-k candidates by `score_vec` at layer `g`, descending, ties broken
    /// by ascending [`NodeId`]. Unscorable candidates are reported in
    /// `skipped` instead of failing the search.
    pub fn topk_nodes(
        &self,
        graph: &LayeredGraph,
        q: &Vector,
        candidates: &[NodeIx],
        g: Layer,
        k: usize,
    ) -> Result<TopK, IndexError> {
        let mut scored = Vec::with_capacity(candidates.len());
        let mut skipped = Vec::new();
        for &c in candidates {
            match self.score_vec(graph, q, c, g) {
                Ok(s) => scored.push((c, s)),
                Err(IndexError::EmptyDescendants(_)) => skipped.push(c),
                Err(e) => return Err(e),
            }
        }
        let cmp = |a: &(NodeIx, f64), b: &(NodeIx, f64)| rank_order(graph, a, b);
        if k < scored.len() {
            scored.select_nth_unstable_by(k, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(TopK { hits: scored, skipped })
    }

    // ---- snapshot: a header line followed by one line per node ----

    pub fn write_snapshot<W: Write>(&self, graph: &LayeredGraph, mut out: W) -> Result<(), IndexError> {
        self.check_graph(graph)?;
        let header = IndexHeader {
            format: INDEX_FORMAT.into(),
            dimension: self.dimension,
            fingerprint: self.fingerprint.clone(),
            metric: self.metric,
        };
        writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        for l in Layer::ALL {
            for ix in graph.layer_nodes(l) {
                let rec = IndexRecordRef { node: graph.node_id(ix), vector: self.vector(ix) };
                writeln!(out, "{}", serde_json::to_string(&rec).expect("record serializes"))?;
            }
        }
        Ok(())
    }

    /// Loads a snapshot, refusing it when the fingerprint differs from the
    /// configured embedder's.
    pub fn read_snapshot<R: BufRead>(
        input: R,
        graph: &LayeredGraph,
        embedder: &dyn EmbedderProvider,
    ) -> Result<Self, IndexError> {
        let mut lines = input.lines();
        let header_line = lines.next().ok_or(IndexError::Snapshot { line: 1, reason: "empty file".into() })??;
        let header: IndexHeader =
            serde_json::from_str(&header_line).map_err(|e| IndexError::Snapshot { line: 1, reason: e.to_string() })?;
        if header.format != INDEX_FORMAT {
            return Err(IndexError::Snapshot { line: 1, reason: format!("unsupported format `{}`", header.format) });
        }
        let configured = embedder.fingerprint();
        if header.fingerprint != configured {
            return Err(IndexError::FingerprintMismatch { index: header.fingerprint, configured });
        }
        let mut layers: [Vec<Option<Vector>>; 3] = Layer::ALL.map(|l| vec![None; graph.layer_len(l)]);
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: IndexRecord =
                serde_json::from_str(&line).map_err(|e| IndexError::Snapshot { line: line_no, reason: e.to_string() })?;
            if rec.vector.dim() != header.dimension {
                return Err(IndexError::Snapshot { line: line_no, reason: "vector dimension differs from header".into() });
            }
            let ix = graph
                .resolve(&rec.node)
                .ok_or_else(|| IndexError::Snapshot { line: line_no, reason: format!("unknown node {}", rec.node) })?;
            layers[ix.layer as usize][ix.idx as usize] = Some(rec.vector);
        }
        let mut out: [Vec<Vector>; 3] = Default::default();
        for l in Layer::ALL {
            for (i, v) in std::mem::take(&mut layers[l as usize]).into_iter().enumerate() {
                let v = v.ok_or_else(|| {
                    IndexError::GraphMismatch(format!("no vector for {}", graph.node_id(NodeIx { layer: l, idx: i as u32 })))
                })?;
                out[l as usize].push(v);
            }
        }
        Ok(VectorIndex { dimension: header.dimension, fingerprint: header.fingerprint, metric: header.metric, layers: out })
    }
}

/// Descending score, then ascending node identity.
pub fn rank_order(graph: &LayeredGraph, a: &(NodeIx, f64), b: &(NodeIx, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| graph.id_parts(a.0).cmp(&graph.id_parts(b.0)))
}

pub const INDEX_FORMAT: &str = "anchorhop.index.v1";

#[derive(Debug, Serialize, Deserialize)]
struct IndexHeader {
    format: String,
    dimension: usize,
    fingerprint: Fingerprint,
    metric: Metric,
}

#[derive(Serialize)]
struct IndexRecordRef<'a> {
    node: NodeId,
    vector: &'a Vector,
}

#[derive(Deserialize)]
struct IndexRecord {
    node: NodeId,
    vector: Vector,
}

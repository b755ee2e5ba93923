//! Benchmark harness: retrieval and QA metrics, dataset files, and reports
//! with per-query cost rows.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::llm::{ChatRequest, LlmProvider};
use crate::config::EngineConfig;
use crate::cost::CostReport;
use crate::embed::EmbedderProvider;
use crate::engine::{run_query, Providers, TerminalReason};
use crate::graph::LayeredGraph;
use crate::index::VectorIndex;
use crate::memory::preview;

/// System prompt of the answer generator; the user turn carries the
/// question and evidence.
pub const GENERATOR_SYSTEM: &str = "Answer the question using only the evidence.";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GoldComponent {
    pub doc_id: String,
    pub component_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub qid: String,
    pub question: String,
    pub gold_components: Vec<GoldComponent>,
    #[serde(default)]
    pub gold_answer: String,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("duplicate qid `{0}`")]
    DuplicateQid(String),
    #[error("query `{qid}`: gold component {doc_id}/{component_id} is not in the graph")]
    UnknownGold { qid: String, doc_id: String, component_id: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One JSON record per non-blank line; qids are unique.
pub fn parse_dataset<R: BufRead>(input: R) -> Result<Vec<BenchmarkItem>, DatasetError> {
    let mut items = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: BenchmarkItem =
            serde_json::from_str(&line).map_err(|e| DatasetError::Parse { line: i + 1, reason: e.to_string() })?;
        if !seen.insert(item.qid.clone()) {
            return Err(DatasetError::DuplicateQid(item.qid));
        }
        items.push(item);
    }
    Ok(items)
}

pub fn write_dataset(items: &[BenchmarkItem]) -> String {
    items.iter().map(|i| serde_json::to_string(i).expect("items serialize") + "\n").collect()
}

pub fn check_gold(items: &[BenchmarkItem], graph: &LayeredGraph) -> Result<(), DatasetError> {
    for item in items {
        for g in &item.gold_components {
            if graph.comp_ix(&g.doc_id, &g.component_id).is_none() {
                return Err(DatasetError::UnknownGold {
                    qid: item.qid.clone(),
                    doc_id: g.doc_id.clone(),
                    component_id: g.component_id.clone(),
                });
            }
        }
    }
    Ok(())
}

/// 1 iff a gold component is among the first `k`.
pub fn recall_at_k(ranked: &[GoldComponent], gold: &BTreeSet<GoldComponent>, k: usize) -> u8 {
    u8::from(ranked.iter().take(k).any(|c| gold.contains(c)))
}

/// Reciprocal 1-based rank of the first gold component within `k`, else 0.
pub fn mrr_at_k(ranked: &[GoldComponent], gold: &BTreeSet<GoldComponent>, k: usize) -> f64 {
    ranked.iter().take(k).position(|c| gold.contains(c)).map_or(0.0, |r| 1.0 / (r + 1) as f64)
}

/// Lowercase, punctuation removed, articles dropped, whitespace collapsed.
pub fn normalize_answer(text: &str) -> String {
    let lower: String = text.to_lowercase().chars().filter(|c| !c.is_ascii_punctuation()).collect();
    lower.split_whitespace().filter(|w| !matches!(*w, "a" | "an" | "the")).collect::<Vec<_>>().join(" ")
}

pub fn exact_match(pred: &str, gold: &str) -> u8 {
    u8::from(normalize_answer(pred) == normalize_answer(gold))
}

pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let (p, g) = (normalize_answer(pred), normalize_answer(gold));
    let (p, g): (Vec<&str>, Vec<&str>) = (p.split_whitespace().collect(), g.split_whitespace().collect());
    if p.is_empty() || g.is_empty() {
        return f64::from(u8::from(p.is_empty() && g.is_empty()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &p {
        if let Some(c) = counts.get_mut(t).filter(|c| **c > 0) {
            *c -= 1;
            overlap += 1;
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / p.len() as f64;
    let recall = overlap as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub recall_ks: Vec<usize>,
    pub mrr_k: usize,
}

impl Default for MetricSpec {
    fn default() -> Self {
        MetricSpec { recall_ks: vec![1, 2, 5, 10], mrr_k: 10 }
    }
}

/// Per-query metrics are fractions in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub qid: String,
    pub recall: BTreeMap<usize, u8>,
    pub mrr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub em: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prediction: Option<String>,
    pub terminal: Option<TerminalReason>,
    pub steps: usize,
    pub retrieved: Vec<GoldComponent>,
    pub cost: CostReport,
    pub error: Option<String>,
}

/// Metric means are percentages; cost is reported both summed and averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub queries: usize,
    pub errors: usize,
    pub recall: BTreeMap<usize, f64>,
    pub mrr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub em: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    pub cost_total: CostReport,
    pub cost_mean: CostReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub variant: String,
    pub config: EngineConfig,
    pub metrics: MetricSpec,
    pub aggregate: Aggregate,
    pub rows: Vec<QueryRow>,
}

pub fn aggregate(rows: &[QueryRow], spec: &MetricSpec) -> Aggregate {
    let n = rows.len().max(1) as f64;
    let pct = |sum: f64| 100.0 * sum / n;
    let recall = spec
        .recall_ks
        .iter()
        .map(|&k| (k, pct(rows.iter().map(|r| f64::from(r.recall.get(&k).copied().unwrap_or(0))).sum())))
        .collect();
    let has_qa = rows.iter().any(|r| r.em.is_some());
    let mut cost_total = CostReport::default();
    for r in rows {
        cost_total += &r.cost;
    }
    let cost_mean = CostReport {
        total_ms: cost_total.total_ms / n,
        llm_ms: cost_total.llm_ms / n,
        vector_search_ms: cost_total.vector_search_ms / n,
        embedding_ms: cost_total.embedding_ms / n,
        llm_calls: cost_total.llm_calls / rows.len().max(1) as u64,
        input_tokens: cost_total.input_tokens / rows.len().max(1) as u64,
        output_tokens: cost_total.output_tokens / rows.len().max(1) as u64,
        estimated_cost: cost_total.estimated_cost / n,
    };
    Aggregate {
        queries: rows.len(),
        errors: rows.iter().filter(|r| r.error.is_some()).count(),
        recall,
        mrr: pct(rows.iter().map(|r| r.mrr).sum()),
        em: has_qa.then(|| pct(rows.iter().map(|r| f64::from(r.em.unwrap_or(0))).sum())),
        f1: has_qa.then(|| pct(rows.iter().map(|r| r.f1.unwrap_or(0.0)).sum())),
        cost_total,
        cost_mean,
    }
}

fn generator_request(question: &str, evidence: &[String]) -> ChatRequest {
    let lines: Vec<String> = evidence.iter().map(|e| format!("- {}", preview(e))).collect();
    ChatRequest {
        system: GENERATOR_SYSTEM.into(),
        user: format!("Question: {question}\nEvidence:\n{}", lines.join("\n")),
        ..Default::default()
    }
}

pub struct BenchContext<'a> {
    pub graph: &'a LayeredGraph,
    pub index: &'a VectorIndex,
    pub embedder: &'a dyn EmbedderProvider,
    pub llm: &'a dyn LlmProvider,
    /// Answers questions from the top-ranked components when present.
    pub generator: Option<&'a dyn LlmProvider>,
}

fn run_row(ctx: &BenchContext<'_>, item: &BenchmarkItem, config: &EngineConfig, spec: &MetricSpec) -> QueryRow {
    let mut row = QueryRow {
        qid: item.qid.clone(),
        recall: spec.recall_ks.iter().map(|&k| (k, 0)).collect(),
        mrr: 0.0,
        em: None,
        f1: None,
        prediction: None,
        terminal: None,
        steps: 0,
        retrieved: vec![],
        cost: CostReport::default(),
        error: None,
    };
    let providers = Providers { embedder: ctx.embedder, llm: ctx.llm };
    let result = match run_query(ctx.graph, ctx.index, providers, &item.question, config) {
        Ok(r) => r,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    let ranked: Vec<GoldComponent> = result
        .ranked
        .iter()
        .map(|c| GoldComponent { doc_id: c.doc_id.clone(), component_id: c.component_id.clone() })
        .collect();
    let gold: BTreeSet<GoldComponent> = item.gold_components.iter().cloned().collect();
    row.recall = spec.recall_ks.iter().map(|&k| (k, recall_at_k(&ranked, &gold, k))).collect();
    row.mrr = mrr_at_k(&ranked, &gold, spec.mrr_k);
    row.terminal = Some(result.terminal);
    row.steps = result.memory.history.len();
    row.cost = result.cost;
    if let Some(generator) = ctx.generator {
        let evidence: Vec<String> = ranked
            .iter()
            .take(config.top_k_final)
            .filter_map(|c| ctx.graph.comp_ix(&c.doc_id, &c.component_id))
            .map(|n| ctx.graph.comp(n.idx).content.as_text())
            .collect();
        match generator.complete(&generator_request(&item.question, &evidence)) {
            Ok(resp) => {
                let pred = resp.text.trim().to_string();
                row.em = Some(exact_match(&pred, &item.gold_answer));
                row.f1 = Some(token_f1(&pred, &item.gold_answer));
                row.prediction = Some(pred);
            }
            Err(e) => {
                row.em = Some(0);
                row.f1 = Some(0.0);
                row.error = Some(format!("generator: {e}"));
            }
        }
    }
    row.retrieved = ranked;
    row
}

/// Runs every item on up to `parallelism` threads; failures become error
/// rows. Rows are sorted by qid.
pub fn run_benchmark(
    ctx: &BenchContext<'_>,
    items: &[BenchmarkItem],
    config: &EngineConfig,
    spec: &MetricSpec,
    parallelism: usize,
) -> BenchmarkReport {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(parallelism.max(1)).build().expect("thread pool builds");
    let mut rows: Vec<QueryRow> = pool.install(|| items.par_iter().map(|i| run_row(ctx, i, config, spec)).collect());
    rows.sort_by(|a, b| a.qid.cmp(&b.qid));
    BenchmarkReport {
        variant: config.ablations.tag(),
        config: config.clone(),
        metrics: spec.clone(),
        aggregate: aggregate(&rows, spec),
        rows,
    }
}

impl BenchmarkReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// One row per query; QA columns only when a generator ran.
    pub fn to_csv(&self) -> String {
        let qa = self.aggregate.em.is_some();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = vec!["qid".into(), "variant".into()];
        header.extend(self.metrics.recall_ks.iter().map(|k| format!("R@{k}")));
        header.push(format!("MRR@{}", self.metrics.mrr_k));
        if qa {
            header.extend(["EM".into(), "F1".into()]);
        }
        header.extend(
            [
                "terminal", "steps", "total_ms", "llm_ms", "vector_search_ms", "embedding_ms", "llm_calls",
                "input_tokens", "output_tokens", "estimated_cost", "error",
            ]
            .map(String::from),
        );
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let mut rec: Vec<String> = vec![r.qid.clone(), self.variant.clone()];
            rec.extend(self.metrics.recall_ks.iter().map(|k| r.recall.get(k).copied().unwrap_or(0).to_string()));
            rec.push(r.mrr.to_string());
            if qa {
                rec.push(r.em.unwrap_or(0).to_string());
                rec.push(r.f1.unwrap_or(0.0).to_string());
            }
            let c = &r.cost;
            rec.extend([
                r.terminal.map_or(String::new(), |t| t.as_str().to_string()),
                r.steps.to_string(),
                c.total_ms.to_string(),
                c.llm_ms.to_string(),
                c.vector_search_ms.to_string(),
                c.embedding_ms.to_string(),
                c.llm_calls.to_string(),
                c.input_tokens.to_string(),
                c.output_tokens.to_string(),
                c.estimated_cost.to_string(),
                r.error.clone().unwrap_or_default(),
            ]);
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

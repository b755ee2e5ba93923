//! Python bindings. Corpora, datasets, snapshots and configs cross the
//! boundary as text in their on-disk formats; results come back as plain
//! dicts and lists.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::io::Cursor;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use anchorhop::agents::llm::LlmProvider;
use anchorhop::config::{Ablations, AppConfig, Policy};
use anchorhop::corpus::parse_corpus_str;
use anchorhop::embed::EmbedderProvider;
use anchorhop::engine::{run_query, Providers};
use anchorhop::eval::{self, check_gold, parse_dataset, run_benchmark, write_dataset, BenchContext, GoldComponent, MetricSpec};
use anchorhop::graph::{build_graph, LayeredGraph, SummaryOptions};
use anchorhop::http::{embedder_from_config, llm_from_config};
use anchorhop::index::{build_index, VectorIndex};
use anchorhop::synth::{generate, SynthOptions};

fn err(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_config(toml: Option<&str>) -> PyResult<AppConfig> {
    toml.map_or(Ok(AppConfig::default()), |t| AppConfig::from_toml_str(t).map_err(err))
}

fn from_json<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn policy(name: &str) -> Result<Policy, String> {
    match name {
        "heuristic" => Ok(Policy::Heuristic),
        "llm" => Ok(Policy::Llm),
        other => Err(format!("unknown policy `{other}` (expected heuristic or llm)")),
    }
}

fn gold_list(pairs: Vec<(String, String)>) -> Vec<GoldComponent> {
    pairs.into_iter().map(|(doc_id, component_id)| GoldComponent { doc_id, component_id }).collect()
}

/// Three-layer document graph built from a line-delimited corpus.
#[pyclass(name = "Graph", frozen)]
struct PyGraph {
    inner: LayeredGraph,
}

#[pymethods]
impl PyGraph {
    #[staticmethod]
    fn from_corpus(jsonl: &str) -> PyResult<Self> {
        let corpus = parse_corpus_str(jsonl).map_err(err)?;
        let inner = build_graph(&corpus, None, &SummaryOptions::default()).map_err(err)?;
        Ok(PyGraph { inner })
    }

    #[staticmethod]
    fn from_snapshot(text: &str) -> PyResult<Self> {
        Ok(PyGraph { inner: LayeredGraph::from_snapshot_str(text).map_err(err)? })
    }

    fn snapshot(&self) -> String {
        self.inner.to_snapshot_string()
    }

    /// Node counts per layer and the number of navigational links.
    fn counts(&self) -> (usize, usize, usize, usize) {
        let g = &self.inner;
        (g.docs().len(), g.comps().len(), g.subs().len(), g.navigational_edges().count())
    }

    fn __repr__(&self) -> String {
        let (d, c, s, l) = self.counts();
        format!("Graph(documents={d}, components={c}, subcomponents={s}, links={l})")
    }
}

/// A graph, its embeddings and the configured providers.
#[pyclass(name = "Engine", unsendable)]
struct PyEngine {
    cfg: AppConfig,
    graph: LayeredGraph,
    index: VectorIndex,
    embedder: Box<dyn EmbedderProvider>,
    llm: Box<dyn LlmProvider>,
}

#[pymethods]
impl PyEngine {
    /// Embeds the graph unless an index snapshot is given. `config` is TOML
    /// text; defaults use the hash embedder and the lexical mock LLM.
    #[new]
    #[pyo3(signature = (graph, config=None, index=None))]
    fn new(graph: &PyGraph, config: Option<&str>, index: Option<&str>) -> PyResult<Self> {
        let cfg = parse_config(config)?;
        let graph = graph.inner.clone();
        let embedder = embedder_from_config(&cfg.embedder).map_err(err)?;
        let llm = llm_from_config(&cfg.llm).map_err(err)?;
        let index = match index {
            Some(text) => VectorIndex::read_snapshot(Cursor::new(text), &graph, embedder.as_ref()).map_err(err)?,
            None => build_index(&graph, embedder.as_ref(), &cfg.index.options()).map_err(err)?,
        }
        .with_metric(cfg.engine.similarity);
        Ok(PyEngine { cfg, graph, index, embedder, llm })
    }

    fn index_snapshot(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.index.write_snapshot(&self.graph, &mut buf).map_err(err)?;
        String::from_utf8(buf).map_err(err)
    }

    /// Runs one query; returns the ranked components, memory and cost.
    #[pyo3(signature = (text, variant=None, policy=None))]
    fn query<'py>(&self, py: Python<'py>, text: &str, variant: Option<&str>, policy: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
        let engine = self.engine_config(variant, policy)?;
        let providers = Providers { embedder: self.embedder.as_ref(), llm: self.llm.as_ref() };
        let result = run_query(&self.graph, &self.index, providers, text, &engine).map_err(err)?;
        from_json(py, &serde_json::to_string(&result).map_err(err)?)
    }

    /// Scores a line-delimited dataset; returns the report as a dict.
    #[pyo3(signature = (dataset, variant="full", ks=vec![1, 2, 5, 10], mrr_k=10, answers=false, parallel=1, policy=None))]
    #[allow(clippy::too_many_arguments)]
    fn bench<'py>(
        &self,
        py: Python<'py>,
        dataset: &str,
        variant: &str,
        ks: Vec<usize>,
        mrr_k: usize,
        answers: bool,
        parallel: usize,
        policy: Option<&str>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let engine = self.engine_config(Some(variant), policy)?;
        let items = parse_dataset(Cursor::new(dataset)).map_err(err)?;
        check_gold(&items, &self.graph).map_err(err)?;
        let generator = if answers { Some(llm_from_config(&self.cfg.llm).map_err(err)?) } else { None };
        let ctx = BenchContext {
            graph: &self.graph,
            index: &self.index,
            embedder: self.embedder.as_ref(),
            llm: self.llm.as_ref(),
            generator: generator.as_deref(),
        };
        let report = run_benchmark(&ctx, &items, &engine, &MetricSpec { recall_ks: ks, mrr_k }, parallel);
        from_json(py, &report.to_json())
    }
}

impl PyEngine {
    fn engine_config(&self, variant: Option<&str>, name: Option<&str>) -> PyResult<anchorhop::config::EngineConfig> {
        let mut engine = self.cfg.engine.clone();
        if let Some(v) = variant {
            engine.ablations = Ablations::from_variants(v).map_err(err)?;
        }
        if let Some(p) = name {
            engine.policy = policy(p).map_err(err)?;
        }
        Ok(engine)
    }
}

/// Seeded synthetic corpus and two-hop dataset, as JSONL text.
#[pyfunction]
#[pyo3(signature = (documents=40, questions=12, seed=7))]
fn synth(documents: usize, questions: usize, seed: u64) -> (String, String) {
    let (corpus, items) = generate(&SynthOptions { documents, questions, seed });
    (corpus.to_jsonl_string(), write_dataset(&items))
}

#[pyfunction]
fn recall_at_k(ranked: Vec<(String, String)>, gold: Vec<(String, String)>, k: usize) -> u8 {
    let gold: BTreeSet<GoldComponent> = gold_list(gold).into_iter().collect();
    eval::recall_at_k(&gold_list(ranked), &gold, k)
}

#[pyfunction]
fn mrr_at_k(ranked: Vec<(String, String)>, gold: Vec<(String, String)>, k: usize) -> f64 {
    let gold: BTreeSet<GoldComponent> = gold_list(gold).into_iter().collect();
    eval::mrr_at_k(&gold_list(ranked), &gold, k)
}

#[pyfunction]
fn exact_match(pred: &str, gold: &str) -> u8 {
    eval::exact_match(pred, gold)
}

#[pyfunction]
fn token_f1(pred: &str, gold: &str) -> f64 {
    eval::token_f1(pred, gold)
}

#[pymodule]
#[pyo3(name = "anchorhop")]
fn anchorhop_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyEngine>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(mrr_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(exact_match, m)?)?;
    m.add_function(wrap_pyfunction!(token_f1, m)?)?;
    Ok(())
}

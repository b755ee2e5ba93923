//! Command-line front end: ingest a corpus, embed it, run queries and
//! benchmarks.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use anchorhop::agents::summarizer::LlmSummarizer;
use anchorhop::config::{Ablations, AppConfig, Policy};
use anchorhop::corpus::{parse_corpus, validate_corpus};
use anchorhop::embed::EmbedderProvider;
use anchorhop::engine::{run_query, Providers};
use anchorhop::eval::{check_gold, parse_dataset, run_benchmark, write_dataset, BenchContext, BenchmarkReport, MetricSpec};
use anchorhop::graph::{build_graph, LayeredGraph, Summarizer, SummaryOptions};
use anchorhop::http::{embedder_from_config, llm_from_config};
use anchorhop::index::{build_index, VectorIndex};
use anchorhop::synth::{generate, SynthOptions};

#[derive(Parser)]
#[command(name = "anchorhop", version, about = "Agentic retrieval over layered multimodal document graphs")]
struct Cli {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a graph snapshot from a line-delimited corpus.
    Ingest {
        corpus: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Ask the configured LLM for summaries the corpus lacks.
        #[arg(long)]
        summarize: bool,
    },
    /// Embed every node of a graph snapshot.
    Index {
        snapshot: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run one query and print the ranked components.
    Query {
        snapshot: PathBuf,
        index: PathBuf,
        #[arg(long = "q")]
        query: String,
        /// heuristic or llm.
        #[arg(long)]
        policy: Option<String>,
        /// Comma-separated ablation flags.
        #[arg(long)]
        variant: Option<String>,
        /// Write the step trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Print the full result as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Score a dataset under one variant.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated ablation flags, or `full`.
        #[arg(long, default_value = "full")]
        variant: String,
        /// Report JSON path; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Score a dataset under several variants and print a comparison table.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Variants to compare; `full` plus every single flag when omitted.
        #[arg(long, value_delimiter = ';')]
        variant: Vec<String>,
        /// Directory for per-variant JSON and CSV reports.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Write a seeded synthetic corpus and two-hop dataset.
    Synth {
        #[arg(long, default_value_t = 40)]
        docs: usize,
        #[arg(long, default_value_t = 12)]
        questions: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    dataset: PathBuf,
    #[arg(long)]
    snapshot: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10")]
    k: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    mrr_k: usize,
    #[arg(long, default_value_t = 4)]
    parallel: usize,
    /// Generate answers from the top components and score EM/F1.
    #[arg(long)]
    answers: bool,
    #[arg(long)]
    policy: Option<String>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = load_config(cli.config.as_deref())?;
    match cli.cmd {
        Cmd::Ingest { corpus, output, summarize } => ingest(&cfg, &corpus, &output, summarize),
        Cmd::Index { snapshot, output } => index(&cfg, &snapshot, &output),
        Cmd::Query { snapshot, index, query: q, policy, variant, trace, json } => {
            let mut cfg = cfg;
            apply_overrides(&mut cfg, policy.as_deref(), variant.as_deref())?;
            query(&cfg, &snapshot, &index, &q, trace.as_deref(), json)
        }
        Cmd::Bench { run, variant, output, csv } => {
            let mut cfg = cfg;
            apply_overrides(&mut cfg, run.policy.as_deref(), Some(&variant))?;
            let report = bench(&cfg, &run)?;
            let a = &report.aggregate;
            eprintln!("{}: {} queries, {} errors, MRR@{} {:.2}", report.variant, a.queries, a.errors, run.mrr_k, a.mrr);
            match output {
                Some(p) => write(&p, &report.to_json())?,
                None => print!("{}", report.to_json()),
            }
            if let Some(p) = csv {
                write(&p, &report.to_csv())?;
            }
            Ok(())
        }
        Cmd::Ablate { run, variant, out_dir } => ablate(cfg, &run, variant, out_dir.as_deref()),
        Cmd::Synth { docs, questions, seed, corpus, dataset } => {
            let (c, items) = generate(&SynthOptions { documents: docs, questions, seed });
            write(&corpus, &c.to_jsonl_string())?;
            write(&dataset, &write_dataset(&items))?;
            eprintln!("wrote {} documents and {} questions", c.documents.len(), items.len());
            Ok(())
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<AppConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            AppConfig::from_toml_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(AppConfig::default()),
    }
}

fn apply_overrides(cfg: &mut AppConfig, policy: Option<&str>, variant: Option<&str>) -> Result<()> {
    if let Some(p) = policy {
        cfg.engine.policy = match p {
            "heuristic" => Policy::Heuristic,
            "llm" => Policy::Llm,
            other => bail!("unknown policy `{other}` (expected heuristic or llm)"),
        };
    }
    if let Some(v) = variant {
        cfg.engine.ablations = Ablations::from_variants(v)?;
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn ingest(cfg: &AppConfig, corpus_path: &Path, output: &Path, summarize: bool) -> Result<()> {
    let file = File::open(corpus_path).with_context(|| format!("opening {}", corpus_path.display()))?;
    let corpus = parse_corpus(BufReader::new(file))?;
    let report = validate_corpus(&corpus);
    for d in &report.dangling_links {
        eprintln!("warning: {}/{} links to unknown document {}", d.doc_id, d.component_id, d.target);
    }
    for id in &report.empty_payloads {
        eprintln!("warning: empty content in {id}");
    }
    let llm = if summarize { Some(llm_from_config(&cfg.llm)?) } else { None };
    let summarizer = llm.as_deref().map(|llm| LlmSummarizer { llm, max_chars: 2000 });
    let graph = build_graph(&corpus, summarizer.as_ref().map(|s| s as &dyn Summarizer), &SummaryOptions::default())?;
    write(output, &graph.to_snapshot_string())?;
    eprintln!(
        "{} documents, {} components, {} subcomponents, {} links",
        graph.docs().len(),
        graph.comps().len(),
        graph.subs().len(),
        graph.navigational_edges().count()
    );
    Ok(())
}

fn load_graph(path: &Path) -> Result<LayeredGraph> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    LayeredGraph::from_snapshot_str(&text).with_context(|| format!("loading graph {}", path.display()))
}

fn load_index(cfg: &AppConfig, path: &Path, graph: &LayeredGraph, embedder: &dyn EmbedderProvider) -> Result<VectorIndex> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let index = VectorIndex::read_snapshot(BufReader::new(file), graph, embedder)
        .with_context(|| format!("loading index {}", path.display()))?;
    Ok(index.with_metric(cfg.engine.similarity))
}

fn index(cfg: &AppConfig, snapshot: &Path, output: &Path) -> Result<()> {
    let graph = load_graph(snapshot)?;
    let embedder = embedder_from_config(&cfg.embedder)?;
    let index = build_index(&graph, embedder.as_ref(), &cfg.index.options())?;
    let file = File::create(output).with_context(|| format!("creating {}", output.display()))?;
    let mut out = BufWriter::new(file);
    index.write_snapshot(&graph, &mut out)?;
    out.flush()?;
    eprintln!("embedded {} nodes with {} (dimension {})", index.len(), index.fingerprint(), index.dimension());
    Ok(())
}

fn query(cfg: &AppConfig, snapshot: &Path, index_path: &Path, q: &str, trace: Option<&Path>, json: bool) -> Result<()> {
    let graph = load_graph(snapshot)?;
    let embedder = embedder_from_config(&cfg.embedder)?;
    let index = load_index(cfg, index_path, &graph, embedder.as_ref())?;
    let llm = llm_from_config(&cfg.llm)?;
    let providers = Providers { embedder: embedder.as_ref(), llm: llm.as_ref() };
    let result = run_query(&graph, &index, providers, q, &cfg.engine)?;
    if let Some(p) = trace {
        write(p, &result.memory.to_trace_jsonl())?;
    }
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&result)?);
        return Ok(());
    }
    println!(
        "terminal: {} after {} steps, {} LLM calls, {} tokens",
        result.terminal.as_str(),
        result.memory.history.len(),
        result.cost.llm_calls,
        result.cost.input_tokens + result.cost.output_tokens
    );
    for (i, c) in result.ranked.iter().enumerate() {
        println!("{:>3}  {}/{}  {:.4}", i + 1, c.doc_id, c.component_id, c.score);
    }
    Ok(())
}

fn bench(cfg: &AppConfig, run: &RunArgs) -> Result<BenchmarkReport> {
    let graph = load_graph(&run.snapshot)?;
    let file = File::open(&run.dataset).with_context(|| format!("opening {}", run.dataset.display()))?;
    let items = parse_dataset(BufReader::new(file))?;
    check_gold(&items, &graph)?;
    let embedder = embedder_from_config(&cfg.embedder)?;
    let index = load_index(cfg, &run.index, &graph, embedder.as_ref())?;
    let llm = llm_from_config(&cfg.llm)?;
    let generator = if run.answers { Some(llm_from_config(&cfg.llm)?) } else { None };
    let ctx = BenchContext {
        graph: &graph,
        index: &index,
        embedder: embedder.as_ref(),
        llm: llm.as_ref(),
        generator: generator.as_deref(),
    };
    let spec = MetricSpec { recall_ks: run.k.clone(), mrr_k: run.mrr_k };
    Ok(run_benchmark(&ctx, &items, &cfg.engine, &spec, run.parallel))
}

fn ablate(mut cfg: AppConfig, run: &RunArgs, variants: Vec<String>, out_dir: Option<&Path>) -> Result<()> {
    let variants = if variants.is_empty() {
        std::iter::once("full").chain(Ablations::VARIANTS).map(String::from).collect()
    } else {
        variants
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    apply_overrides(&mut cfg, run.policy.as_deref(), None)?;
    let mut header = vec!["variant".to_string()];
    header.extend(run.k.iter().map(|k| format!("R@{k}")));
    header.extend([format!("MRR@{}", run.mrr_k), "calls/q".into(), "errors".into()]);
    println!("{}", header.join("\t"));
    for v in &variants {
        cfg.engine.ablations = Ablations::from_variants(v)?;
        let report = bench(&cfg, run)?;
        let a = &report.aggregate;
        let mut line = vec![report.variant.clone()];
        line.extend(run.k.iter().map(|k| format!("{:.2}", a.recall.get(k).copied().unwrap_or(0.0))));
        line.push(format!("{:.2}", a.mrr));
        line.push(format!("{:.2}", a.cost_total.llm_calls as f64 / a.queries.max(1) as f64));
        line.push(a.errors.to_string());
        println!("{}", line.join("\t"));
        if let Some(dir) = out_dir {
            let stem = report.variant.replace(',', "+");
            write(&dir.join(format!("{stem}.json")), &report.to_json())?;
            write(&dir.join(format!("{stem}.csv")), &report.to_csv())?;
        }
    }
    Ok(())
}

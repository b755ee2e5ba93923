//! Offline model that reads the rendered prompts and answers by lexical
//! overlap. Deterministic: the same request always gets the same reply.

use std::collections::BTreeSet;

use serde_json::{json, Value};

use super::heuristic::ladder;
use super::llm::{mock_usage, ChatRequest, ChatResponse, LlmProvider, UsageCounters, UsageSnapshot};
use super::prompts::PromptKind;
use super::summarizer::SUMMARIZER_SYSTEM;
use crate::embed::{tokenize, ProviderError};
use crate::eval::GENERATOR_SYSTEM;

/// Fraction of query terms the evidence must cover to count as an answer:
/// all of them, so a partial match on the wrong entity never qualifies.
pub const ANSWER_COVERAGE: f64 = 1.0;

pub fn terms(text: &str) -> BTreeSet<String> {
    tokenize(text).collect()
}

/// Terms of a subtask query; a trailing `; exclude: ...` clause names dead
/// ends, not content to match.
pub fn query_terms(text: &str) -> BTreeSet<String> {
    terms(text.split("; exclude:").next().unwrap_or(text))
}

/// Share of `query` terms present in `text`; 0 for a query with no terms.
pub fn coverage(query: &BTreeSet<String>, text: &BTreeSet<String>) -> f64 {
    if query.is_empty() {
        return 0.0;
    }
    query.intersection(text).count() as f64 / query.len() as f64
}

/// Body under the first `# {header}...` line, up to the next header or the
/// trailing `Output:`.
fn section<'a>(user: &'a str, header: &str) -> &'a str {
    let marker = format!("# {header}");
    let Some(start) = user.find(&marker) else { return "" };
    let body = &user[start..];
    let body = body.find('\n').map_or("", |i| &body[i + 1..]);
    let end = [body.find("\n# "), body.find("\nOutput:")].into_iter().flatten().min().unwrap_or(body.len());
    body[..end].trim_end_matches('\n')
}

fn candidates(body: &str) -> Vec<(usize, Value)> {
    body.lines()
        .filter_map(|l| {
            let (i, rest) = l.split_once(": ")?;
            Some((i.trim().parse().ok()?, serde_json::from_str(rest).ok()?))
        })
        .collect()
}

fn field<'a>(v: &'a Value, k: &str) -> &'a str {
    v.get(k).and_then(Value::as_str).unwrap_or("")
}

/// Sentences, lines and table rows of a text.
fn segments(text: &str) -> impl Iterator<Item = &str> {
    text.split(['\n', '.', ';']).map(str::trim).filter(|s| !s.is_empty())
}

struct Seg<'a> {
    owner: usize,
    text: &'a str,
    terms: BTreeSet<String>,
}

fn split_segs<'a>(texts: impl IntoIterator<Item = (usize, &'a str)>) -> Vec<Seg<'a>> {
    texts
        .into_iter()
        .flat_map(|(owner, t)| segments(t).map(move |text| Seg { owner, text, terms: terms(text) }))
        .collect()
}

/// Coverage of `q` by `a` alone, or by `a` and `b` together when they share
/// a term outside `q`: the bridge entity of a two-hop chain. Two segments
/// without a bridge are not joint evidence, so an entity's own attribute
/// table cannot stand in for its neighbor's.
fn support(q: &BTreeSet<String>, a: &Seg, b: Option<&Seg>) -> f64 {
    match b {
        None => coverage(q, &a.terms),
        Some(b) if a.terms.intersection(&b.terms).any(|t| !q.contains(t)) => {
            let joint: BTreeSet<String> = a.terms.union(&b.terms).cloned().collect();
            coverage(q, &joint)
        }
        Some(_) => 0.0,
    }
}

/// Best support involving a segment owned by `owner` (any segment when
/// `None`), with the segment pair that achieves it.
fn best_support<'s, 'a>(q: &BTreeSet<String>, segs: &'s [Seg<'a>], owner: Option<usize>) -> Option<(f64, &'s Seg<'a>, Option<&'s Seg<'a>>)> {
    let mut best: Option<(f64, &Seg, Option<&Seg>)> = None;
    for (i, a) in segs.iter().enumerate() {
        if owner.is_some_and(|o| o != a.owner) {
            continue;
        }
        let partners = segs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, b)| Some(b));
        for b in std::iter::once(None).chain(partners) {
            let s = support(q, a, b);
            if s > 0.0 && best.is_none_or(|(c, _, _)| s > c) {
                best = Some((s, a, b));
            }
        }
    }
    best
}

/// Answer text from the best chain: a table row's value wins, else the
/// segment carrying more of the query.
fn extract_answer<'a>(query: &BTreeSet<String>, texts: impl Iterator<Item = &'a str>) -> Option<String> {
    let segs = split_segs(texts.enumerate());
    let (_, a, b) = best_support(query, &segs, None)?;
    let seg = match b {
        Some(b) if b.text.contains('|') && !a.text.contains('|') => b,
        Some(b) if coverage(query, &b.terms) > coverage(query, &a.terms) && !a.text.contains('|') => b,
        _ => a,
    };
    Some(seg.text.rsplit('|').next().unwrap_or(seg.text).trim().to_string())
}

/// Candidates by descending support, ties by index.
fn rank<'a>(query: &BTreeSet<String>, cands: &'a [(usize, Value)], text: impl Fn(&Value) -> String) -> Vec<(usize, f64, &'a Value)> {
    let texts: Vec<String> = cands.iter().map(|(_, v)| text(v)).collect();
    let segs = split_segs(texts.iter().map(String::as_str).enumerate());
    let mut scored: Vec<(usize, f64, &Value)> = cands
        .iter()
        .enumerate()
        .map(|(pos, (i, v))| (*i, best_support(query, &segs, Some(pos)).map_or(0.0, |b| b.0), v))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored
}

struct LedgerLine<'a> {
    index: usize,
    resolved: bool,
    text: &'a str,
}

fn ledger(body: &str) -> Vec<LedgerLine<'_>> {
    body.lines()
        .filter_map(|l| {
            let (n, rest) = l.split_once(". [")?;
            let (status, text) = rest.split_once("] ")?;
            let text = text.split(" -> answer: ").next().unwrap_or(text);
            Some(LedgerLine { index: n.trim().parse().ok()?, resolved: status == "answerable", text })
        })
        .collect()
}

#[derive(Debug, Default)]
pub struct LexicalMockLlm {
    counters: UsageCounters,
}

impl LexicalMockLlm {
    pub fn new() -> Self {
        Self::default()
    }

    fn respond(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        if req.system.starts_with(GENERATOR_SYSTEM) {
            return Ok(generate(&req.user));
        }
        if req.system.starts_with(SUMMARIZER_SYSTEM) {
            return Ok(summarize(&req.user));
        }
        let kind = PromptKind::detect(&req.system).ok_or_else(|| ProviderError::Other("unrecognized prompt".into()))?;
        let u = req.user.as_str();
        let out = match kind {
            PromptKind::Planner => json!({ "tasks": [section(u, "Original Query")] }),
            PromptKind::DocTraverser | PromptKind::CompTraverser => {
                let q = query_terms(section(u, "Subtask Query"));
                let max: usize = section(u, "Max results").trim().parse().unwrap_or(1);
                let cands = candidates(section(u, "Candidate"));
                let docs = kind == PromptKind::DocTraverser;
                let text = |v: &Value| {
                    if docs {
                        format!("{} {}", field(v, "title"), field(v, "summary"))
                    } else {
                        field(v, "content").to_string()
                    }
                };
                let selection: Vec<Value> = rank(&q, &cands, text)
                    .into_iter()
                    .filter(|(_, s, _)| *s > 0.0)
                    .take(max)
                    .map(|(i, s, v)| {
                        let mut o = json!({"index": i, "filename": field(v, "filename"), "score": s});
                        if !docs {
                            o["component_id"] = json!(field(v, "component_id"));
                        }
                        o
                    })
                    .collect();
                json!({ "selection": selection })
            }
            PromptKind::Evaluator => {
                let cands = candidates(section(u, "Retrieved components"));
                let contents: Vec<&str> = cands.iter().map(|(_, v)| field(v, "content")).collect();
                let segs = split_segs(contents.iter().copied().enumerate());
                let answers = |q: &BTreeSet<String>| best_support(q, &segs, None).is_some_and(|b| b.0 >= ANSWER_COVERAGE);
                let answerable = answers(&query_terms(section(u, "Subtask Query")));
                let updates: Vec<Value> = ledger(section(u, "Subtask status"))
                    .into_iter()
                    .filter(|e| !e.resolved)
                    .filter_map(|e| {
                        let t = terms(e.text);
                        if !answers(&t) {
                            return None;
                        }
                        let answer = extract_answer(&t, contents.iter().copied())?;
                        Some(json!({"index": e.index, "status": "answerable", "answer": answer}))
                    })
                    .collect();
                json!({
                    "status": if answerable { "answerable" } else { "not answerable" },
                    "updated_subtasks": updates,
                })
            }
            PromptKind::Reranker => {
                let q = terms(section(u, "User Query"));
                let k: usize = section(u, "Top-K").trim().parse().unwrap_or(10);
                let cands = candidates(section(u, "Candidate Components"));
                let ranking: Vec<Value> = rank(&q, &cands, |v| field(v, "content").to_string())
                    .into_iter()
                    .take(k)
                    .map(|(i, s, v)| {
                        json!({"index": i, "filename": field(v, "filename"), "component_id": field(v, "component_id"), "score": s})
                    })
                    .collect();
                json!({ "ranking": ranking })
            }
            PromptKind::Orchestrator => orchestrate(u),
        };
        Ok(out.to_string())
    }
}

/// Climbs the ladder on the earliest unresolved subtask, one level per
/// recorded attempt, and stops when none is left or L5 was spent.
fn orchestrate(user: &str) -> Value {
    let stop = json!({"action": {"next_action": "stop", "next_retrieval_subtask": null, "document_search_mode": null, "component_search_mode": null}});
    let entries = ledger(section(user, "Split Retrieval Subtasks"));
    let Some(target) = entries.iter().find(|e| !e.resolved) else { return stop };
    let attempts = section(user, "Serialized Retrieval Memory").matches(&format!("search subtask {} ", target.index)).count();
    if attempts >= 5 {
        return stop;
    }
    let has_neighbors = !matches!(section(user, "Neighbor Docs").trim(), "" | "(none)");
    let level = if attempts == 0 && !has_neighbors { 2 } else { attempts as u8 + 1 };
    let (d, c, g) = ladder(level);
    json!({"action": {
        "next_action": "search",
        "next_retrieval_subtask": target.text,
        "document_search_mode": d.prompt_str(),
        "component_search_mode": c.prompt_str(),
        "anchor": null,
        "vector_granularity": g.as_str(),
    }})
}

/// Free-text answer from the `Evidence:` lines.
fn generate(user: &str) -> String {
    let question = user.lines().find_map(|l| l.strip_prefix("Question:")).unwrap_or("");
    let evidence = user.split_once("Evidence:").map_or("", |(_, e)| e);
    extract_answer(&terms(question), evidence.lines()).unwrap_or_else(|| "unknown".into())
}

/// Title plus the first segment of the body.
fn summarize(user: &str) -> String {
    let (title, body) = user.split_once("\n\n").unwrap_or((user, ""));
    let title = title.strip_prefix("Title: ").unwrap_or(title).trim();
    match segments(body).next() {
        Some(first) => format!("{title}. {first}."),
        None => format!("{title}."),
    }
}

impl LlmProvider for LexicalMockLlm {
    fn name(&self) -> String {
        "lexical-mock".into()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let text = self.respond(request)?;
        let usage = mock_usage(request, &text);
        self.counters.record(usage);
        Ok(ChatResponse { text, usage })
    }

    fn usage(&self) -> UsageSnapshot {
        self.counters.snapshot()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::evaluator::{evaluate_traversal, EvalCandidate, EvalStatus};
    use crate::agents::planner::plan_subqueries;
    use crate::agents::reranker::{rerank_final, RerankCandidate};

    fn cand(doc: &str, comp: &str, content: &str) -> EvalCandidate {
        EvalCandidate { doc_id: doc.into(), component_id: comp.into(), content: content.into() }
    }

    #[test]
    fn evaluator_needs_joint_coverage_and_extracts_table_values() {
        let llm = LexicalMockLlm::new();
        let q = "What is the founding year of the partner of Kaxo?";
        let ledger = format!("1. [unknown] {q}\n");
        let only_link = [cand("d1", "p0", "Kaxo is a city whose partner is Lumi")];
        let r = evaluate_traversal(&llm, q, q, &only_link, &ledger, 1, 0).unwrap().value;
        assert_eq!(r.status, EvalStatus::NotAnswerable);
        let both = [only_link[0].clone(), cand("d2", "t0", "Lumi founding year | 1234\nLumi area | 77")];
        let r = evaluate_traversal(&llm, q, q, &both, &ledger, 1, 0).unwrap().value;
        assert_eq!(r.status, EvalStatus::Answerable);
        assert_eq!(r.updated_subtasks[0].answer, "1234");
        let rewritten = format!("{q}; exclude: Mirrow, Quent");
        let r = evaluate_traversal(&llm, q, &rewritten, &both, &ledger, 1, 0).unwrap().value;
        assert_eq!(r.status, EvalStatus::Answerable);
        let own_table = [only_link[0].clone(), cand("d1", "t0", "Kaxo founding year | 9")];
        let r = evaluate_traversal(&llm, q, q, &own_table, &ledger, 1, 0).unwrap().value;
        assert_eq!(r.status, EvalStatus::NotAnswerable);
    }

    #[test]
    fn planner_and_reranker_round_trip_through_real_parsers() {
        let llm = LexicalMockLlm::new();
        assert_eq!(plan_subqueries(&llm, "where is X", "M", 0).unwrap().value, vec!["where is X"]);
        let c = |id: &str, content: &str| RerankCandidate {
            doc_id: "d".into(),
            component_id: id.into(),
            content: content.into(),
            retrieval_score: 0.0,
        };
        let (ranked, warnings) =
            rerank_final(&llm, "river length", &[c("a", "a city"), c("b", "river length 9")], 2, 0).unwrap().value;
        assert!(warnings.is_empty());
        assert_eq!(ranked[0].index, 1);
        assert_eq!(llm.usage().calls, 2);
    }

    #[test]
    fn unknown_prompts_are_errors() {
        let llm = LexicalMockLlm::new();
        let req = ChatRequest { system: "hello".into(), ..Default::default() };
        assert!(llm.complete(&req).is_err());
        assert_eq!(llm.usage().calls, 0);
    }
}

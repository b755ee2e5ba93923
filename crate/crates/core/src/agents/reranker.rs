//! Final reranking over every component gathered during a run.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::candidate_line;
use super::llm::LlmProvider;
use super::prompts::{render, PromptKind};
use super::structured::{complete_structured, AgentCall};
use super::AgentError;

#[derive(Debug, Clone, PartialEq)]
pub struct RerankCandidate {
    pub doc_id: String,
    pub component_id: String,
    pub content: String,
    /// Best retrieval score seen for this component; orders the fallback.
    pub retrieval_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    /// Position in the candidate list.
    pub index: usize,
    pub score: f64,
}

#[derive(Debug, Deserialize)]
struct RankingOut {
    ranking: Vec<crate::agents::structured::Selection>,
}

/// Drops later occurrences of the same (doc_id, component_id); order is
/// first-retrieved order.
pub fn dedup_candidates(candidates: impl IntoIterator<Item = RerankCandidate>) -> Vec<RerankCandidate> {
    let mut out: Vec<RerankCandidate> = Vec::new();
    let mut seen = BTreeSet::new();
    for c in candidates {
        if seen.insert((c.doc_id.clone(), c.component_id.clone())) {
            out.push(c);
        } else if let Some(prev) = out.iter_mut().find(|p| p.doc_id == c.doc_id && p.component_id == c.component_id) {
            prev.retrieval_score = prev.retrieval_score.max(c.retrieval_score);
        }
    }
    out
}

/// Without an LLM: retrieval score descending, first-retrieved order on ties.
pub fn rank_by_score(candidates: &[RerankCandidate], top_k: usize) -> Vec<Ranked> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| candidates[b].retrieval_score.total_cmp(&candidates[a].retrieval_score).then(a.cmp(&b)));
    order.into_iter().take(top_k).map(|i| Ranked { index: i, score: candidates[i].retrieval_score }).collect()
}

/// Up to `top_k` results, descending score. Invalid, mismatched and
/// duplicate selections are dropped; if fewer than `top_k` remain, unselected
/// candidates follow in first-retrieved order with score 0.
pub fn rerank_final(
    llm: &dyn LlmProvider,
    query: &str,
    candidates: &[RerankCandidate],
    top_k: usize,
    retries: usize,
) -> Result<AgentCall<(Vec<Ranked>, Vec<String>)>, AgentError> {
    if candidates.is_empty() {
        return Ok(AgentCall { value: (vec![], vec![]), exchanges: vec![] });
    }
    let lines: Vec<String> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            candidate_line(
                i,
                serde_json::json!({"filename": c.doc_id, "component_id": c.component_id, "content": c.content}),
            )
        })
        .collect();
    let k = top_k.to_string();
    let req = render(PromptKind::Reranker, &[("query", query), ("candidates", &lines.join("\n")), ("top_k", &k)])?;
    complete_structured(llm, &req, retries, |o: RankingOut| {
        let mut warnings = Vec::new();
        let mut seen = BTreeSet::new();
        let mut ranked = Vec::new();
        for s in o.ranking {
            let Some(c) = usize::try_from(s.index).ok().and_then(|i| candidates.get(i)) else {
                warnings.push(format!("dropped out-of-range index {}", s.index));
                continue;
            };
            if s.filename.as_deref().is_some_and(|f| f != c.doc_id)
                || s.component_id.as_deref().is_some_and(|x| x != c.component_id)
            {
                warnings.push(format!("dropped index {}: identifiers do not match", s.index));
                continue;
            }
            let index = s.index as usize;
            if !seen.insert(index) {
                warnings.push(format!("dropped duplicate index {index}"));
                continue;
            }
            ranked.push(Ranked { index, score: s.score.unwrap_or(0.0).clamp(0.0, 1.0) });
        }
        ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
        ranked.truncate(top_k);
        for i in 0..candidates.len() {
            if ranked.len() >= top_k {
                break;
            }
            if !seen.contains(&i) {
                ranked.push(Ranked { index: i, score: 0.0 });
            }
        }
        Ok((ranked, warnings))
    })
}

//! Document summaries for corpora that ship without them.

use super::llm::{ChatRequest, LlmProvider};
use crate::corpus::Document;
use crate::graph::Summarizer;

pub const SUMMARIZER_SYSTEM: &str =
    "Write a two-sentence summary of the document below that names its main entity and what it covers. Output the summary only.";

/// Asks `llm` for a summary of the title and the first `max_chars`
/// characters of the component text.
pub struct LlmSummarizer<'a> {
    pub llm: &'a dyn LlmProvider,
    pub max_chars: usize,
}

impl Summarizer for LlmSummarizer<'_> {
    fn summarize(&self, doc: &Document) -> Result<String, String> {
        let body: String = doc
            .components
            .iter()
            .map(|c| c.content.as_text())
            .collect::<Vec<_>>()
            .join("\n")
            .chars()
            .take(self.max_chars)
            .collect();
        let req = ChatRequest {
            system: SUMMARIZER_SYSTEM.into(),
            user: format!("Title: {}\n\n{body}", doc.title),
            ..Default::default()
        };
        let text = self.llm.complete(&req).map_err(|e| e.to_string())?.text;
        let text = text.trim();
        if text.is_empty() {
            return Err("empty summary".into());
        }
        Ok(text.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::llm::ScriptedLlm;
    use crate::graph::{build_graph, SummaryOptions};
    use crate::synth::{toy, toy_corpus};

    #[test]
    fn missing_summaries_are_generated_and_empty_replies_fall_back() {
        let mut corpus = toy_corpus(&[("a", &[toy("p", &[], &[])]), ("b", &[toy("p", &[], &[])])]);
        for d in &mut corpus.documents {
            d.summary = None;
        }
        let llm = ScriptedLlm::new(["  A is a thing.  ", "   "]);
        let s = LlmSummarizer { llm: &llm, max_chars: 100 };
        let g = build_graph(&corpus, Some(&s), &SummaryOptions::default()).unwrap();
        assert_eq!(g.doc(0).summary, "A is a thing.");
        assert_eq!(g.doc(1).summary, "Title b: content of b/p");
        assert!(llm.requests()[0].user.starts_with("Title: Title a\n\ncontent of a/p"));
    }
}

//! Engine, ablation and provider configuration, loadable from TOML.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{ClockKind, Prices};
use crate::graph::Layer;
use crate::index::{IndexBuildOptions, Metric};
use crate::traverser::{CompMode, DocMode, StrategyTuple, TraverseConfig};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("config value `{0}` must be at least 1")]
    Zero(&'static str),
    #[error("unknown ablation variant `{0}`")]
    UnknownVariant(String),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Llm,
    #[default]
    Heuristic,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    pub no_backtracking: bool,
    pub no_llm_traversal_reasoning: bool,
    pub no_global_hop: bool,
    pub no_vector_granularity: bool,
    pub no_planner: bool,
}

impl Ablations {
    pub const VARIANTS: [&'static str; 5] =
        ["no_backtracking", "no_llm_traversal_reasoning", "no_global_hop", "no_vector_granularity", "no_planner"];

    pub fn from_variant(name: &str) -> Result<Self, ConfigError> {
        let mut a = Ablations::default();
        match name {
            "full" | "none" => {}
            "no_backtracking" => a.no_backtracking = true,
            "no_llm_traversal_reasoning" => a.no_llm_traversal_reasoning = true,
            "no_global_hop" => a.no_global_hop = true,
            "no_vector_granularity" => a.no_vector_granularity = true,
            "no_planner" => a.no_planner = true,
            other => return Err(ConfigError::UnknownVariant(other.to_string())),
        }
        Ok(a)
    }

    /// Union of a comma-separated list of variant names.
    pub fn from_variants(list: &str) -> Result<Self, ConfigError> {
        let mut a = Ablations::default();
        for name in list.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            let b = Ablations::from_variant(name)?;
            a.no_backtracking |= b.no_backtracking;
            a.no_llm_traversal_reasoning |= b.no_llm_traversal_reasoning;
            a.no_global_hop |= b.no_global_hop;
            a.no_vector_granularity |= b.no_vector_granularity;
            a.no_planner |= b.no_planner;
        }
        Ok(a)
    }

    /// Comma-joined active flags, or "full".
    pub fn tag(&self) -> String {
        let on = [
            self.no_backtracking,
            self.no_llm_traversal_reasoning,
            self.no_global_hop,
            self.no_vector_granularity,
            self.no_planner,
        ];
        let names: Vec<&str> = Self::VARIANTS.iter().zip(on).filter(|(_, b)| *b).map(|(n, _)| *n).collect();
        if names.is_empty() {
            "full".into()
        } else {
            names.join(",")
        }
    }

    /// Constrains a strategy before execution. `local_pool` reports whether
    /// neighbors mode would have anchor documents for a given anchor.
    /// Returns the clamped tuple and one note per applied clamp.
    pub fn clamp(&self, tau: StrategyTuple, local_pool: &dyn Fn(Option<usize>) -> bool) -> (StrategyTuple, Vec<String>) {
        let mut t = tau;
        let mut notes = Vec::new();
        if self.no_backtracking && t.anchor.is_some() {
            t.anchor = None;
            notes.push("clamp no_backtracking: anchor -> null".into());
        }
        if self.no_llm_traversal_reasoning {
            if t.document_mode == DocMode::LlmReasoning {
                t.document_mode = DocMode::VectorSearch;
                notes.push("clamp no_llm_traversal_reasoning: document_mode -> vector_search".into());
            }
            if t.component_mode == CompMode::LlmReasoning {
                t.component_mode = CompMode::VectorSearch;
                notes.push("clamp no_llm_traversal_reasoning: component_mode -> vector_search".into());
            }
        }
        if self.no_global_hop && t.document_mode != DocMode::Neighbors && local_pool(t.anchor) {
            notes.push(format!("clamp no_global_hop: document_mode {} -> neighbors", t.document_mode.as_str()));
            t.document_mode = DocMode::Neighbors;
        }
        if self.no_vector_granularity && t.granularity != Layer::Document {
            notes.push(format!("clamp no_vector_granularity: granularity {} -> document", t.granularity.as_str()));
            t.granularity = Layer::Document;
        }
        (t, notes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub k_shortlist: usize,
    pub top_k_final: usize,
    pub max_steps: usize,
    pub max_llm_retries: usize,
    /// Stop once a run has made this many LLM calls.
    pub max_llm_calls: Option<u64>,
    pub policy: Policy,
    pub ablations: Ablations,
    pub memory_budget: usize,
    pub similarity: Metric,
    pub max_docs: usize,
    pub max_components: usize,
    pub send_images: bool,
    /// Use the LLM reranker at the end of a run; otherwise order by score.
    pub llm_rerank: bool,
    pub clock: ClockKind,
    pub prices: Prices,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            k_shortlist: 30,
            top_k_final: 10,
            max_steps: 12,
            max_llm_retries: 2,
            max_llm_calls: None,
            policy: Policy::Heuristic,
            ablations: Ablations::default(),
            memory_budget: 6000,
            similarity: Metric::Cosine,
            max_docs: 5,
            max_components: 8,
            send_images: false,
            llm_rerank: true,
            clock: ClockKind::System,
            prices: Prices::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let counts = [
            ("k_shortlist", self.k_shortlist),
            ("top_k_final", self.top_k_final),
            ("max_steps", self.max_steps),
            ("memory_budget", self.memory_budget),
            ("max_docs", self.max_docs),
            ("max_components", self.max_components),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(ConfigError::Zero(name));
            }
        }
        if self.max_llm_calls == Some(0) {
            return Err(ConfigError::Zero("max_llm_calls"));
        }
        Ok(())
    }

    pub fn traverse_config(&self) -> TraverseConfig {
        TraverseConfig {
            k: self.k_shortlist,
            max_docs: self.max_docs,
            max_components: self.max_components,
            send_images: self.send_images,
            max_llm_retries: self.max_llm_retries,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmKind {
    /// Offline deterministic mock.
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub kind: LlmKind,
    pub endpoint: Option<String>,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub supports_images: bool,
    pub timeout_secs: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            kind: LlmKind::Mock,
            endpoint: None,
            model: "mock".into(),
            api_key_env: "ANCHORHOP_LLM_API_KEY".into(),
            supports_images: false,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    Hash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dimension: usize,
    pub seed: u64,
    pub endpoint: Option<String>,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            kind: EmbedderKind::Hash,
            dimension: 256,
            seed: 0,
            endpoint: None,
            model: "hash".into(),
            api_key_env: "ANCHORHOP_EMBED_API_KEY".into(),
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    pub batch_size: usize,
    pub retries: usize,
    pub parallelism: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        let d = IndexBuildOptions::default();
        IndexConfig { batch_size: d.batch_size, retries: d.retries, parallelism: d.parallelism }
    }
}

impl IndexConfig {
    pub fn options(&self) -> IndexBuildOptions {
        IndexBuildOptions { batch_size: self.batch_size, retries: self.retries, parallelism: self.parallelism }
    }
}

/// Whole configuration file. Credentials are never stored here, only the
/// names of the environment variables holding them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub engine: EngineConfig,
    pub llm: LlmConfig,
    pub embedder: EmbedderConfig,
    pub index: IndexConfig,
}

impl AppConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: AppConfig = toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.engine.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l5() -> StrategyTuple {
        StrategyTuple::new(DocMode::LlmReasoning, CompMode::LlmReasoning, Layer::Component, Some(2))
    }

    #[test]
    fn defaults() {
        let c = EngineConfig::default();
        assert_eq!((c.k_shortlist, c.top_k_final, c.max_steps, c.max_llm_retries), (30, 10, 12, 2));
        assert!(c.validate().is_ok());
        assert_eq!(EngineConfig { max_steps: 0, ..c }.validate(), Err(ConfigError::Zero("max_steps")));
    }

    #[test]
    fn no_llm_clamps_l5_to_l3() {
        let a = Ablations { no_llm_traversal_reasoning: true, ..Default::default() };
        let (t, notes) = a.clamp(l5(), &|_| true);
        assert_eq!(t, StrategyTuple::new(DocMode::VectorSearch, CompMode::VectorSearch, Layer::Component, Some(2)));
        assert_eq!(notes.len(), 2);
    }

    #[test]
    fn no_global_hop_only_when_local_pool_exists() {
        let a = Ablations { no_global_hop: true, ..Default::default() };
        assert_eq!(a.clamp(l5(), &|_| true).0.document_mode, DocMode::Neighbors);
        assert_eq!(a.clamp(l5(), &|_| false).0.document_mode, DocMode::LlmReasoning);
    }

    #[test]
    fn no_backtracking_nulls_anchor_before_pool_check() {
        let a = Ablations { no_backtracking: true, no_global_hop: true, ..Default::default() };
        let (t, _) = a.clamp(l5(), &|anchor| anchor.is_none());
        assert_eq!(t.anchor, None);
        assert_eq!(t.document_mode, DocMode::Neighbors);
    }

    #[test]
    fn no_vector_granularity_pins_document() {
        let a = Ablations { no_vector_granularity: true, ..Default::default() };
        assert_eq!(a.clamp(l5(), &|_| true).0.granularity, Layer::Document);
        let (_, notes) = Ablations::default().clamp(l5(), &|_| true);
        assert!(notes.is_empty());
    }

    #[test]
    fn variants_and_tags() {
        for v in Ablations::VARIANTS {
            assert_eq!(Ablations::from_variant(v).unwrap().tag(), v);
        }
        assert_eq!(Ablations::default().tag(), "full");
        assert!(Ablations::from_variant("nope").is_err());
        assert_eq!(Ablations::from_variants("no_planner, no_backtracking").unwrap().tag(), "no_backtracking,no_planner");
        assert_eq!(Ablations::from_variants("full").unwrap(), Ablations::default());
    }

    #[test]
    fn toml_round_trip() {
        let c = AppConfig::from_toml_str(
            "[engine]\nmax_steps = 5\npolicy = \"llm\"\n[engine.ablations]\nno_planner = true\n[llm]\nkind = \"http\"\nendpoint = \"http://x\"\n",
        )
        .unwrap();
        assert_eq!(c.engine.max_steps, 5);
        assert_eq!(c.engine.policy, Policy::Llm);
        assert!(c.engine.ablations.no_planner);
        assert_eq!(c.llm.kind, LlmKind::Http);
        assert_eq!(c.engine.k_shortlist, 30);
        assert_eq!(AppConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
        assert!(AppConfig::from_toml_str("[engine]\ntop_k_final = 0\n").is_err());
    }
}

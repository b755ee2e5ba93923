//! Agentic retrieval over a three-layer multimodal document graph.
//!
//! A query run is a finite sequence of decisions over an explicit memory:
//! traverse the graph under a chosen strategy, revise the subquery plan, or
//! stop and rerank everything gathered. Failed hops are recorded and drive
//! strategy escalation and re-anchoring to earlier successful contexts.

pub mod agents;
pub mod config;
pub mod corpus;
pub mod cost;
pub mod embed;
pub mod engine;
pub mod eval;
pub mod graph;
pub mod http;
pub mod index;
pub mod memory;
pub mod synth;
pub mod traverser;

//! Hierarchical summary-tree retrieval engine.
//!
//! Builds a RAPTOR-style tree over a chunked corpus (GMM clustering with BIC
//! model selection over dimensionality-reduced embeddings, recursive
//! summarization), indexes every leaf and summary node in a dual dense +
//! keyword store, and answers queries by fusing cosine and BM25 rankings
//! with reciprocal rank fusion. An evaluation harness scores retrieval with
//! substring and token precision/recall and pluggable LLM judges.
//!
//! ```text
//! corpus -> chunks -> embed -> [reduce -> GMM+BIC -> summarize]* -> tree
//!                                                                   |
//!                 query -> cosine + BM25 -> RRF -> contexts <- index
//! ```

pub mod clustering;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod engine;
pub mod error;
pub mod eval;
pub mod index;
pub mod llm;
pub mod retrieval;
pub mod text;
pub mod tree;

pub use config::EngineConfig;
pub use engine::{build_corpus_index, BuildReport, Engine, QueryMode, QueryOptions};
pub use error::{Error, Result};

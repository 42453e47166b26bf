//! End-to-end composition: corpus -> chunks -> tree -> index on the build
//! side, and a loaded-index query facade on the read side. The CLI and the
//! C bindings are thin wrappers around this module.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::corpus::{chunk_corpus, load_corpus};
use crate::embedding::{build_embedder, Embedder};
use crate::error::{Error, Result};
use crate::index::{build_index, load_index, save_index, Index};
use crate::llm::RemoteLlmClient;
use crate::retrieval::{raptor_collapsed, raptor_tree_traversal, trex_retrieve, QueryResult};
use crate::tree::{build_summarizer, build_tree, HierarchyTree, LevelReport, UsageSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    #[default]
    Trex,
    Traversal,
    Collapsed,
}

/// Per-query overrides on top of the engine config.
#[derive(Debug, Clone, Copy, Default)]
pub struct QueryOptions {
    pub mode: QueryMode,
    /// Trex: fused context count. Traversal/collapsed: per-level k.
    pub top_n: Option<usize>,
    pub token_budget: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildReport {
    pub documents: usize,
    pub chunks: usize,
    pub nodes_per_level: Vec<usize>,
    pub total_nodes: usize,
    pub depth: usize,
    pub level_reports: Vec<LevelReport>,
    pub summarizer_usage: UsageSnapshot,
    pub seed: u64,
    pub index_dir: PathBuf,
    pub manifest_checksum: String,
}

/// Build the tree and index for a corpus and persist them to `index_dir`.
pub fn build_corpus_index(
    config: &EngineConfig,
    corpus_path: &Path,
    index_dir: &Path,
    seed: u64,
) -> Result<BuildReport> {
    config.validate()?;
    let documents = load_corpus(corpus_path, config.corpus.format)?;
    if !config.corpus.allow_empty_documents {
        if let Some(doc) = documents.iter().find(|d| d.text.trim().is_empty()) {
            return Err(Error::InvalidArgument(format!(
                "document `{}` is empty and empty documents are disallowed",
                doc.doc_id
            )));
        }
    }
    let tokenizer = config.corpus.tokenizer.build();
    let chunks = chunk_corpus(
        &documents,
        config.corpus.max_tokens,
        config.corpus.overlap_tokens,
        tokenizer.as_ref(),
    )?;
    if chunks.is_empty() {
        return Err(Error::InvalidArgument(
            "corpus produced no chunks (all documents empty?)".into(),
        ));
    }
    let embedder = build_embedder(&config.embedder)?;
    let summarizer = build_summarizer(
        &config.summarizer,
        config.corpus.tokenizer,
        config.llm.as_ref(),
    )?;
    let built = build_tree(
        &chunks,
        embedder.as_ref(),
        summarizer.as_ref(),
        tokenizer.as_ref(),
        &config.clustering,
        seed,
    )?;
    let index = build_index(&built.tree)?;
    let manifest_checksum = save_index(&index, index_dir)?;
    Ok(BuildReport {
        documents: documents.len(),
        chunks: chunks.len(),
        nodes_per_level: built.tree.levels.iter().map(Vec::len).collect(),
        total_nodes: built.tree.node_count(),
        depth: built.tree.depth,
        level_reports: built.level_reports,
        summarizer_usage: summarizer.usage(),
        seed,
        index_dir: index_dir.to_path_buf(),
        manifest_checksum,
    })
}

/// A loaded index plus the embedder and retrieval settings needed to answer
/// queries. Read-only and shareable across threads.
pub struct Engine {
    config: EngineConfig,
    index: Index,
    embedder: Box<dyn Embedder>,
    tree: OnceLock<HierarchyTree>,
}

impl Engine {
    pub fn open(config: EngineConfig, index_dir: &Path) -> Result<Engine> {
        config.validate()?;
        let index = load_index(index_dir)?;
        let embedder = build_embedder(&config.embedder)?;
        if !index.is_empty() && embedder.model_id() != index.model_id() {
            return Err(Error::ModelMismatch {
                expected: index.model_id().to_owned(),
                actual: embedder.model_id().to_owned(),
            });
        }
        Ok(Engine {
            config,
            index,
            embedder,
            tree: OnceLock::new(),
        })
    }

    pub fn index(&self) -> &Index {
        &self.index
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    fn tree(&self) -> Result<&HierarchyTree> {
        if let Some(tree) = self.tree.get() {
            return Ok(tree);
        }
        let tree = self.index.to_tree()?;
        Ok(self.tree.get_or_init(|| tree))
    }

    pub fn query(&self, query: &str, options: &QueryOptions) -> Result<QueryResult> {
        match options.mode {
            QueryMode::Trex => {
                let mut rrf = self.config.retrieval.rrf.clone();
                if let Some(top_n) = options.top_n {
                    rrf.top_n = top_n;
                }
                if options.token_budget.is_some() {
                    rrf.token_budget = options.token_budget;
                }
                trex_retrieve(query, &self.index, self.embedder.as_ref(), &rrf)
            }
            QueryMode::Traversal => {
                let k = options.top_n.unwrap_or(self.config.retrieval.traversal_k);
                let budget = options
                    .token_budget
                    .unwrap_or(self.config.retrieval.traversal_token_budget);
                raptor_tree_traversal(query, self.tree()?, self.embedder.as_ref(), k, budget)
            }
            QueryMode::Collapsed => {
                let k = options.top_n.unwrap_or(self.config.retrieval.traversal_k);
                let budget = options
                    .token_budget
                    .unwrap_or(self.config.retrieval.traversal_token_budget);
                raptor_collapsed(query, &self.index, self.embedder.as_ref(), k, budget)
            }
        }
    }

    /// Forward the retrieved contexts plus the question to the configured
    /// chat model and return its answer.
    pub fn generate(&self, query: &str, result: &QueryResult) -> Result<String> {
        let llm = self.config.llm.as_ref().ok_or_else(|| {
            Error::Config("--generate requires an `llm` config block".into())
        })?;
        let client = RemoteLlmClient::new(llm)?;
        let contexts = result
            .contexts
            .iter()
            .map(|c| c.text.as_str())
            .collect::<Vec<_>>()
            .join("\n\n");
        let prompt = format!(
            "Answer the question using only the provided context.\n\nContext:\n{contexts}\n\nQuestion: {query}\nAnswer:"
        );
        use crate::llm::LlmClient;
        client.complete(&prompt)
    }
}

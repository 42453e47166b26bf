//! Engine configuration: one JSON file drives every stage. Unknown keys are
//! rejected; omitted sections fall back to the documented defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::ClusteringConfig;
use crate::corpus::CorpusFormat;
use crate::embedding::{EmbedderConfig, EmbedderProvider};
use crate::error::{Error, Result};
use crate::llm::LlmConfig;
use crate::retrieval::RrfConfig;
use crate::text::TokenizerKind;
use crate::tree::SummarizerConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub format: CorpusFormat,
    pub max_tokens: usize,
    pub overlap_tokens: usize,
    pub tokenizer: TokenizerKind,
    /// When false, loading fails on documents with empty text instead of
    /// skipping them at chunking time.
    pub allow_empty_documents: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            format: CorpusFormat::Jsonl,
            max_tokens: 600,
            overlap_tokens: 0,
            tokenizer: TokenizerKind::Whitespace,
            allow_empty_documents: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub rrf: RrfConfig,
    /// Per-level fan-in for tree traversal (also the collapsed-mode k).
    pub traversal_k: usize,
    pub traversal_token_budget: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            rrf: RrfConfig::default(),
            traversal_k: 10,
            traversal_token_budget: 3500,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub index_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub corpus: CorpusConfig,
    pub embedder: EmbedderConfig,
    pub summarizer: SummarizerConfig,
    pub clustering: ClusteringConfig,
    pub retrieval: RetrievalConfig,
    pub paths: PathsConfig,
    /// Chat model for the remote summarizer, remote judges, and
    /// `--generate`. Credentials come from the environment, never the file.
    pub llm: Option<LlmConfig>,
}

impl EngineConfig {
    pub fn from_file(path: &Path) -> Result<EngineConfig> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let config: EngineConfig = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.corpus.max_tokens == 0 {
            return Err(Error::Config("corpus.max_tokens must be >= 1".into()));
        }
        if self.corpus.overlap_tokens >= self.corpus.max_tokens {
            return Err(Error::Config(
                "corpus.overlap_tokens must be < corpus.max_tokens".into(),
            ));
        }
        if self.embedder.dimension < 2 {
            return Err(Error::Config("embedder.dimension must be >= 2".into()));
        }
        if self.embedder.batch_size == 0 {
            return Err(Error::Config("embedder.batch_size must be >= 1".into()));
        }
        if self.embedder.provider == EmbedderProvider::RemoteApi
            && (self.embedder.endpoint.is_none() || self.embedder.credential_env_var.is_none())
        {
            return Err(Error::Config(
                "remote embedder needs `endpoint` and `credential_env_var`".into(),
            ));
        }
        if self.summarizer.max_summary_tokens == 0 {
            return Err(Error::Config("summarizer.max_summary_tokens must be >= 1".into()));
        }
        if self.clustering.k_max == 0 {
            return Err(Error::Config("clustering.k_max must be >= 1".into()));
        }
        if self.clustering.max_levels == 0 {
            return Err(Error::Config("clustering.max_levels must be >= 1".into()));
        }
        if self.clustering.gmm.max_iter == 0 || self.clustering.gmm.n_init == 0 {
            return Err(Error::Config(
                "clustering.gmm.max_iter and n_init must be >= 1".into(),
            ));
        }
        if !(self.clustering.soft_threshold > 0.0 && self.clustering.soft_threshold <= 1.0) {
            return Err(Error::Config(
                "clustering.soft_threshold must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let config = EngineConfig::default();
        assert_eq!(config.corpus.max_tokens, 600);
        assert_eq!(config.corpus.overlap_tokens, 0);
        assert_eq!(config.embedder.dimension, 64);
        assert_eq!(config.summarizer.max_summary_tokens, 256);
        assert_eq!(config.clustering.k_max, 50);
        assert_eq!(config.clustering.max_levels, 8);
        assert_eq!(config.clustering.gmm.max_iter, 100);
        assert_eq!(config.clustering.gmm.tol, 1e-4);
        assert_eq!(config.clustering.gmm.n_init, 3);
        assert_eq!(config.clustering.soft_threshold, 0.1);
        assert_eq!(config.retrieval.rrf.k, 60);
        assert_eq!(config.retrieval.rrf.top_k, 10);
        assert_eq!(config.retrieval.rrf.top_n, 5);
        assert_eq!(config.retrieval.traversal_k, 10);
        assert_eq!(config.retrieval.traversal_token_budget, 3500);
        config.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, "{\"corpus\": {\"max_tokens\": 100, \"bogus\": 1}}").unwrap();
        assert!(matches!(
            EngineConfig::from_file(&path),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn partial_file_fills_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(
            &path,
            "{\"corpus\": {\"max_tokens\": 64}, \"clustering\": {\"seed\": 9}}",
        )
        .unwrap();
        let config = EngineConfig::from_file(&path).unwrap();
        assert_eq!(config.corpus.max_tokens, 64);
        assert_eq!(config.clustering.seed, 9);
        assert_eq!(config.retrieval.rrf.k, 60);
    }

    #[test]
    fn invalid_overlap_rejected() {
        let mut config = EngineConfig::default();
        config.corpus.overlap_tokens = 600;
        assert!(config.validate().is_err());
    }
}

//! Query answering: cosine ranking, BM25 keyword ranking, reciprocal rank
//! fusion, and the two tree-native retrieval modes.
//!
//! Everything here is read-only over an immutable [`Index`]; ties are broken
//! by ascending node id everywhere so rankings are fully deterministic.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine_similarity, Embedder};
use crate::error::{Error, Result};
use crate::index::Index;
use crate::text::eval_tokenize;
use crate::tree::{HierarchyTree, NodeKind};

/// BM25 term-frequency saturation.
pub const BM25_K1: f64 = 1.2;
/// BM25 length normalization.
pub const BM25_B: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Vector,
    Keyword,
    Fused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub node_id: String,
    pub score: f64,
    /// 1-based rank.
    pub rank: usize,
}

/// A scored ranking from one modality: scores non-increasing, ranks strictly
/// increasing from 1, node ids unique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub modality: Modality,
    pub entries: Vec<RankEntry>,
}

impl RankedList {
    /// Sort by score descending (ties: ascending node id), truncate to
    /// `top_k`, assign ranks from 1.
    fn from_scored(modality: Modality, mut scored: Vec<(String, f64)>, top_k: usize) -> Self {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(top_k);
        RankedList {
            modality,
            entries: scored
                .into_iter()
                .enumerate()
                .map(|(i, (node_id, score))| RankEntry {
                    node_id,
                    score,
                    rank: i + 1,
                })
                .collect(),
        }
    }

    pub fn rank_of(&self, node_id: &str) -> Option<usize> {
        self.entries
            .iter()
            .find(|e| e.node_id == node_id)
            .map(|e| e.rank)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RrfConfig {
    /// Rank damping constant in `1 / (k + rank)`.
    pub k: u32,
    /// Per-modality candidate depth before fusion.
    pub top_k: usize,
    /// Final fused context count.
    pub top_n: usize,
    /// Optional token budget on the fused context list.
    pub token_budget: Option<usize>,
}

impl Default for RrfConfig {
    fn default() -> Self {
        RrfConfig {
            k: 60,
            top_k: 10,
            top_n: 5,
            token_budget: None,
        }
    }
}

/// Which per-modality ranks put a node into the final context list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub vector_rank: Option<usize>,
    pub keyword_rank: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextEntry {
    pub node_id: String,
    pub text: String,
    pub level: usize,
    pub kind: NodeKind,
    pub score: f64,
    pub token_count: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryResult {
    pub query: String,
    pub contexts: Vec<ContextEntry>,
    pub total_tokens: usize,
}

/// Exact top-k cosine ranking of every indexed node against the query.
pub fn vector_search(
    query: &str,
    index: &Index,
    top_k: usize,
    embedder: &dyn Embedder,
) -> Result<RankedList> {
    if index.is_empty() {
        return Ok(RankedList {
            modality: Modality::Vector,
            entries: Vec::new(),
        });
    }
    if embedder.model_id() != index.model_id() {
        return Err(Error::ModelMismatch {
            expected: index.model_id().to_owned(),
            actual: embedder.model_id().to_owned(),
        });
    }
    let query_vector = embedder.embed_one(query)?;
    let scored = index
        .records()
        .iter()
        .map(|record| {
            cosine_similarity(&query_vector, &record.embedding)
                .map(|score| (record.node_id.clone(), score))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankedList::from_scored(Modality::Vector, scored, top_k))
}

/// Okapi BM25 over the shared-tokenizer terms of the query. Nodes matching
/// no query term are excluded.
pub fn keyword_search(query: &str, index: &Index, top_k: usize) -> RankedList {
    let mut terms: Vec<String> = eval_tokenize(query);
    terms.sort();
    terms.dedup();

    let n = index.len() as f64;
    let avgdl = index.avg_term_count();
    let mut scores: HashMap<&str, f64> = HashMap::new();
    for term in &terms {
        let Some(postings) = index.posting_list(term) else {
            continue;
        };
        let n_t = postings.len() as f64;
        let idf = (1.0 + (n - n_t + 0.5) / (n_t + 0.5)).ln();
        for (node_id, tf) in postings {
            let dl = index
                .get(node_id)
                .map(|r| r.term_count as f64)
                .unwrap_or(0.0);
            let tf = f64::from(*tf);
            let norm = 1.0 - BM25_B + BM25_B * dl / avgdl.max(f64::MIN_POSITIVE);
            let contribution = idf * (tf * (BM25_K1 + 1.0)) / (tf + BM25_K1 * norm);
            *scores.entry(node_id.as_str()).or_insert(0.0) += contribution;
        }
    }
    let scored: Vec<(String, f64)> = scores
        .into_iter()
        .map(|(id, score)| (id.to_owned(), score))
        .collect();
    RankedList::from_scored(Modality::Keyword, scored, top_k)
}

/// Reciprocal rank fusion: `score(d) = sum over lists containing d of
/// 1 / (k + rank(d))`, ranks 1-based. Output is sorted by fused score
/// (ties ascending node id) with ranks reassigned from 1.
pub fn rrf_fuse(rankings: &[RankedList], config: &RrfConfig) -> RankedList {
    let mut scores: HashMap<String, f64> = HashMap::new();
    for list in rankings {
        for entry in &list.entries {
            *scores.entry(entry.node_id.clone()).or_insert(0.0) +=
                1.0 / (f64::from(config.k) + entry.rank as f64);
        }
    }
    let scored: Vec<(String, f64)> = scores.into_iter().collect();
    let total = scored.len();
    RankedList::from_scored(Modality::Fused, scored, total)
}

fn make_context(index: &Index, node_id: &str, score: f64, provenance: Provenance) -> ContextEntry {
    let record = index.get(node_id).expect("ranked node exists in index");
    ContextEntry {
        node_id: record.node_id.clone(),
        text: record.text.clone(),
        level: record.level,
        kind: record.kind,
        score,
        token_count: record.token_count,
        provenance,
    }
}

/// Hybrid retrieval: vector and keyword rankings fused with RRF, truncated
/// to the configured context count (and token budget, when set).
pub fn trex_retrieve(
    query: &str,
    index: &Index,
    embedder: &dyn Embedder,
    config: &RrfConfig,
) -> Result<QueryResult> {
    let (vector, keyword) = rayon::join(
        || vector_search(query, index, config.top_k, embedder),
        || keyword_search(query, index, config.top_k),
    );
    let vector = vector?;
    let fused = rrf_fuse(&[vector.clone(), keyword.clone()], config);

    let mut contexts = Vec::new();
    let mut total_tokens = 0usize;
    for entry in fused.entries.iter().take(config.top_n) {
        let provenance = Provenance {
            vector_rank: vector.rank_of(&entry.node_id),
            keyword_rank: keyword.rank_of(&entry.node_id),
        };
        let context = make_context(index, &entry.node_id, entry.score, provenance);
        if let Some(budget) = config.token_budget {
            if total_tokens + context.token_count > budget {
                break;
            }
        }
        total_tokens += context.token_count;
        contexts.push(context);
    }
    Ok(QueryResult {
        query: query.to_owned(),
        contexts,
        total_tokens,
    })
}

fn rank_nodes_by_cosine(
    tree: &HierarchyTree,
    ids: &[String],
    query_vector: &crate::embedding::EmbeddingVector,
    top_k: usize,
) -> Result<Vec<RankEntry>> {
    let scored = ids
        .iter()
        .map(|id| {
            let node = tree
                .node(id)
                .ok_or_else(|| Error::Internal(format!("unknown node {id}")))?;
            Ok((id.clone(), cosine_similarity(query_vector, &node.embedding)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankedList::from_scored(Modality::Vector, scored, top_k).entries)
}

/// Top-down traversal: the starting (top) level routes only; from each
/// selected frontier the children are re-ranked by cosine and the selected
/// nodes' texts accumulate greedily in rank order until the token budget or
/// the leaves stop the descent.
pub fn raptor_tree_traversal(
    query: &str,
    tree: &HierarchyTree,
    embedder: &dyn Embedder,
    k: usize,
    token_budget: usize,
) -> Result<QueryResult> {
    let root_node = tree
        .node(&tree.root_id)
        .ok_or_else(|| Error::Internal("tree has no root node".into()))?;
    if embedder.model_id() != root_node.embedding.model_id {
        return Err(Error::ModelMismatch {
            expected: root_node.embedding.model_id.clone(),
            actual: embedder.model_id().to_owned(),
        });
    }
    let query_vector = embedder.embed_one(query)?;

    let top_ids = tree.levels.last().cloned().unwrap_or_default();
    let mut selected: Vec<String> = rank_nodes_by_cosine(tree, &top_ids, &query_vector, k)?
        .into_iter()
        .map(|e| e.node_id)
        .collect();

    let mut contexts = Vec::new();
    let mut total_tokens = 0usize;
    'descend: loop {
        let children: Vec<String> = {
            let mut set = BTreeSet::new();
            for id in &selected {
                if let Some(node) = tree.node(id) {
                    set.extend(node.children.iter().cloned());
                }
            }
            set.into_iter().collect()
        };
        if children.is_empty() {
            break;
        }
        let ranked = rank_nodes_by_cosine(tree, &children, &query_vector, k)?;
        for entry in &ranked {
            let node = tree.node(&entry.node_id).expect("ranked node exists");
            if total_tokens + node.token_count > token_budget {
                break 'descend;
            }
            total_tokens += node.token_count;
            contexts.push(ContextEntry {
                node_id: node.node_id.clone(),
                text: node.text.clone(),
                level: node.level,
                kind: node.kind,
                score: entry.score,
                token_count: node.token_count,
                provenance: Provenance {
                    vector_rank: Some(entry.rank),
                    keyword_rank: None,
                },
            });
        }
        selected = ranked.into_iter().map(|e| e.node_id).collect();
    }
    Ok(QueryResult {
        query: query.to_owned(),
        contexts,
        total_tokens,
    })
}

/// Collapsed-tree retrieval: one flat cosine ranking over every node at
/// every level, greedily accumulated under the token budget.
pub fn raptor_collapsed(
    query: &str,
    index: &Index,
    embedder: &dyn Embedder,
    k: usize,
    token_budget: usize,
) -> Result<QueryResult> {
    let ranked = vector_search(query, index, k, embedder)?;
    let mut contexts = Vec::new();
    let mut total_tokens = 0usize;
    for entry in &ranked.entries {
        let record = index.get(&entry.node_id).expect("ranked node exists");
        if total_tokens + record.token_count > token_budget {
            break;
        }
        total_tokens += record.token_count;
        contexts.push(make_context(
            index,
            &entry.node_id,
            entry.score,
            Provenance {
                vector_rank: Some(entry.rank),
                keyword_rank: None,
            },
        ));
    }
    Ok(QueryResult {
        query: query.to_owned(),
        contexts,
        total_tokens,
    })
}

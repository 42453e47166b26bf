//! Hierarchical summary tree: cluster the current level, summarize each
//! cluster, embed the summaries, recurse until a single root remains.
//!
//! Level 0 holds the corpus chunks; every higher level holds summaries whose
//! children are the nodes one level below. Per-level clustering caps k at
//! half the level size so each level at least halves, which bounds the tree
//! height by log2(n) (plus a configurable hard cap with a forced root).

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::clustering::{
    assign_clusters, default_target_dim, derive_seed, reduce_dimensions, select_num_clusters,
    AssignMode, ClusteringConfig,
};
use crate::corpus::Chunk;
use crate::embedding::{Embedder, EmbeddingVector};
use crate::error::{Error, Result};
use crate::llm::{LlmClient, LlmConfig, RemoteLlmClient};
use crate::text::{truncate_tokens, Tokenizer, TokenizerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Leaf,
    Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub node_id: String,
    pub level: usize,
    pub kind: NodeKind,
    pub text: String,
    pub embedding: EmbeddingVector,
    /// Child node ids, ascending; empty iff leaf.
    pub children: Vec<String>,
    pub token_count: usize,
}

/// The finished tree. Immutable once built.
#[derive(Debug, Clone)]
pub struct HierarchyTree {
    pub nodes: BTreeMap<String, TreeNode>,
    /// Node ids per level, ascending within a level; `levels[0]` is leaves.
    pub levels: Vec<Vec<String>>,
    pub root_id: String,
    /// Root level index; leaves sit at level 0.
    pub depth: usize,
}

impl HierarchyTree {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: &str) -> Option<&TreeNode> {
        self.nodes.get(id)
    }

    /// Check every structural invariant: level arithmetic on each edge, leaf
    /// iff level 0 iff childless, parent counts (exactly one under hard
    /// assignment), reachability from the root, and the node-count identity.
    pub fn validate(&self, single_parent: bool) -> Result<()> {
        let fail = |msg: String| Err(Error::Internal(format!("tree invariant: {msg}")));
        if self.levels.is_empty() {
            return fail("no levels".into());
        }
        if self.depth != self.levels.len() - 1 {
            return fail("depth does not match level count".into());
        }
        let level_total: usize = self.levels.iter().map(Vec::len).sum();
        // Under soft assignment a node may appear under several parents but
        // only once per level listing.
        if level_total != self.nodes.len() {
            return fail(format!(
                "node count {} != level total {level_total}",
                self.nodes.len()
            ));
        }
        let mut parent_counts: BTreeMap<&str, usize> = BTreeMap::new();
        for (level, ids) in self.levels.iter().enumerate() {
            for id in ids {
                let node = match self.nodes.get(id) {
                    Some(n) => n,
                    None => return fail(format!("level {level} lists unknown node {id}")),
                };
                if node.level != level {
                    return fail(format!("node {id} at level {} listed at {level}", node.level));
                }
                let is_leaf = node.kind == NodeKind::Leaf;
                if is_leaf != (level == 0) || is_leaf != node.children.is_empty() {
                    return fail(format!("leaf/level/children disagree for {id}"));
                }
                if !is_leaf && node.text.is_empty() {
                    return fail(format!("summary {id} has empty text"));
                }
                for child in &node.children {
                    let child_node = match self.nodes.get(child) {
                        Some(c) => c,
                        None => return fail(format!("{id} references unknown child {child}")),
                    };
                    if child_node.level + 1 != node.level {
                        return fail(format!(
                            "edge {id} -> {child} spans levels {} -> {}",
                            node.level, child_node.level
                        ));
                    }
                    *parent_counts.entry(child.as_str()).or_insert(0) += 1;
                }
            }
        }
        for (id, node) in &self.nodes {
            let parents = parent_counts.get(id.as_str()).copied().unwrap_or(0);
            if id == &self.root_id {
                if parents != 0 {
                    return fail("root has a parent".into());
                }
                continue;
            }
            if single_parent && parents != 1 {
                return fail(format!("{id} has {parents} parents (level {})", node.level));
            }
            if !single_parent && parents == 0 {
                return fail(format!("{id} is orphaned"));
            }
        }
        // Reachability doubles as the cycle check: level arithmetic already
        // forces edges strictly downward.
        let mut reached = std::collections::BTreeSet::new();
        let mut stack = vec![self.root_id.clone()];
        while let Some(id) = stack.pop() {
            if !reached.insert(id.clone()) {
                continue;
            }
            if let Some(node) = self.nodes.get(&id) {
                stack.extend(node.children.iter().cloned());
            }
        }
        if reached.len() != self.nodes.len() {
            return fail(format!(
                "{} of {} nodes reachable from root",
                reached.len(),
                self.nodes.len()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummarizerProvider {
    RemoteLlm,
    #[default]
    ExtractiveFallback,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SummarizerConfig {
    pub provider: SummarizerProvider,
    pub max_summary_tokens: usize,
    /// Remote only; `{input}` and `{max_tokens}` are substituted.
    pub prompt_template: Option<String>,
}

impl Default for SummarizerConfig {
    fn default() -> Self {
        SummarizerConfig {
            provider: SummarizerProvider::ExtractiveFallback,
            max_summary_tokens: 256,
            prompt_template: None,
        }
    }
}

const DEFAULT_SUMMARY_TEMPLATE: &str = "Summarize the following passages into a single coherent \
summary of at most {max_tokens} tokens:\n\n{input}";

/// Token counters accumulated across summarize calls.
#[derive(Debug, Default)]
pub struct UsageMeter {
    input_tokens: AtomicU64,
    output_tokens: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageSnapshot {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl UsageMeter {
    fn record(&self, input: u64, output: u64) {
        self.input_tokens.fetch_add(input, Ordering::Relaxed);
        self.output_tokens.fetch_add(output, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> UsageSnapshot {
        UsageSnapshot {
            input_tokens: self.input_tokens.load(Ordering::Relaxed),
            output_tokens: self.output_tokens.load(Ordering::Relaxed),
        }
    }
}

/// Produces one summary per cluster of texts.
pub trait Summarizer: Send + Sync {
    fn summarize(&self, texts: &[String]) -> Result<String>;

    fn usage(&self) -> UsageSnapshot;
}

pub fn build_summarizer(
    config: &SummarizerConfig,
    tokenizer: TokenizerKind,
    llm: Option<&LlmConfig>,
) -> Result<Box<dyn Summarizer>> {
    if config.max_summary_tokens == 0 {
        return Err(Error::Config("max_summary_tokens must be >= 1".into()));
    }
    match config.provider {
        SummarizerProvider::ExtractiveFallback => Ok(Box::new(ExtractiveSummarizer::new(
            config.max_summary_tokens,
            tokenizer,
        ))),
        SummarizerProvider::RemoteLlm => {
            let llm = llm.ok_or_else(|| {
                Error::Config("remote_llm summarizer requires an `llm` config block".into())
            })?;
            Ok(Box::new(LlmSummarizer {
                client: Box::new(RemoteLlmClient::new(llm)?),
                template: config
                    .prompt_template
                    .clone()
                    .unwrap_or_else(|| DEFAULT_SUMMARY_TEMPLATE.into()),
                max_summary_tokens: config.max_summary_tokens,
                tokenizer: tokenizer.build(),
                meter: UsageMeter::default(),
            }))
        }
    }
}

/// Deterministic offline summarizer: the first sentence of each input
/// (everything up to and including the first '.', '!' or '?', or the whole
/// text), joined by single spaces and truncated to the token budget.
pub struct ExtractiveSummarizer {
    max_summary_tokens: usize,
    tokenizer: Box<dyn Tokenizer>,
    meter: UsageMeter,
}

impl ExtractiveSummarizer {
    pub fn new(max_summary_tokens: usize, tokenizer: TokenizerKind) -> Self {
        ExtractiveSummarizer {
            max_summary_tokens,
            tokenizer: tokenizer.build(),
            meter: UsageMeter::default(),
        }
    }
}

fn first_sentence(text: &str) -> &str {
    match text.find(['.', '!', '?']) {
        Some(pos) => &text[..pos + 1],
        None => text,
    }
}

fn check_cluster(texts: &[String]) -> Result<()> {
    if texts.is_empty() {
        return Err(Error::InvalidArgument("summarize: empty cluster".into()));
    }
    if texts.iter().any(|t| t.is_empty()) {
        return Err(Error::InvalidArgument("summarize: empty text in cluster".into()));
    }
    Ok(())
}

impl Summarizer for ExtractiveSummarizer {
    fn summarize(&self, texts: &[String]) -> Result<String> {
        check_cluster(texts)?;
        let joined = texts
            .iter()
            .map(|t| first_sentence(t).trim())
            .collect::<Vec<_>>()
            .join(" ");
        let summary = truncate_tokens(&joined, self.max_summary_tokens, self.tokenizer.as_ref());
        let input: u64 = texts.iter().map(|t| self.tokenizer.count(t) as u64).sum();
        self.meter.record(input, self.tokenizer.count(summary) as u64);
        Ok(summary.to_owned())
    }

    fn usage(&self) -> UsageSnapshot {
        self.meter.snapshot()
    }
}

/// Remote summarizer: applies the prompt template to the concatenated
/// cluster texts and returns the model output.
pub struct LlmSummarizer {
    client: Box<dyn LlmClient>,
    template: String,
    max_summary_tokens: usize,
    tokenizer: Box<dyn Tokenizer>,
    meter: UsageMeter,
}

impl Summarizer for LlmSummarizer {
    fn summarize(&self, texts: &[String]) -> Result<String> {
        check_cluster(texts)?;
        let prompt = self
            .template
            .replace("{max_tokens}", &self.max_summary_tokens.to_string())
            .replace("{input}", &texts.join("\n\n"));
        let summary = self.client.complete(&prompt)?;
        let summary = summary.trim().to_owned();
        if summary.is_empty() {
            return Err(Error::Internal("summarizer returned empty text".into()));
        }
        let input: u64 = texts.iter().map(|t| self.tokenizer.count(t) as u64).sum();
        self.meter.record(input, self.tokenizer.count(&summary) as u64);
        Ok(summary)
    }

    fn usage(&self) -> UsageSnapshot {
        self.meter.snapshot()
    }
}

/// Per-level clustering diagnostics captured during a build.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelReport {
    /// The summary level produced (1-based).
    pub level: usize,
    pub input_nodes: usize,
    pub clusters: usize,
    /// BIC of the selected fit; absent when the level was forced (size-1
    /// input or the level cap).
    pub bic: Option<f64>,
    pub log_likelihood: Option<f64>,
    pub converged: Option<bool>,
    pub em_iterations: Option<usize>,
}

#[derive(Debug)]
pub struct TreeBuild {
    pub tree: HierarchyTree,
    pub level_reports: Vec<LevelReport>,
}

/// Seed stream for one tree level, exposed so diagnostics can re-run a
/// level's clustering outside the builder.
pub fn derive_level_seed(seed: u64, level: usize) -> u64 {
    derive_seed(seed, level as u64)
}

/// Build the full tree bottom-up from corpus chunks.
pub fn build_tree(
    chunks: &[Chunk],
    embedder: &dyn Embedder,
    summarizer: &dyn Summarizer,
    tokenizer: &dyn Tokenizer,
    config: &ClusteringConfig,
    seed: u64,
) -> Result<TreeBuild> {
    if chunks.is_empty() {
        return Err(Error::InvalidArgument("build_tree: no chunks".into()));
    }
    let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
    let embeddings = embedder.embed_batch(&texts)?;

    let mut nodes: BTreeMap<String, TreeNode> = BTreeMap::new();
    for (chunk, embedding) in chunks.iter().zip(embeddings) {
        let node = TreeNode {
            node_id: chunk.chunk_id.clone(),
            level: 0,
            kind: NodeKind::Leaf,
            text: chunk.text.clone(),
            embedding,
            children: Vec::new(),
            token_count: chunk.token_count,
        };
        if nodes.insert(node.node_id.clone(), node).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate chunk id `{}`",
                chunk.chunk_id
            )));
        }
    }
    let mut levels: Vec<Vec<String>> = vec![nodes.keys().cloned().collect()];
    let mut level_reports = Vec::new();

    loop {
        let current = levels.last().expect("levels non-empty").clone();
        if current.len() == 1 && levels.len() > 1 {
            break;
        }
        let next_level = levels.len();
        if next_level > config.max_levels {
            return Err(Error::Internal("level cap exceeded without a root".into()));
        }
        let level_seed = derive_level_seed(seed, next_level);
        let forced_single = next_level == config.max_levels;

        let (clusters, report) = if forced_single {
            let report = LevelReport {
                level: next_level,
                input_nodes: current.len(),
                clusters: 1,
                bic: None,
                log_likelihood: None,
                converged: None,
                em_iterations: None,
            };
            (vec![current.clone()], report)
        } else {
            cluster_level(&nodes, &current, config, level_seed, next_level)?
        };

        let mut new_ids = Vec::new();
        for (component, members) in clusters.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let node_id = format!("L{next_level}/C{component}");
            let child_texts: Vec<String> =
                members.iter().map(|id| nodes[id].text.clone()).collect();
            let summary = summarizer.summarize(&child_texts)?;
            let token_count = tokenizer.count(&summary);
            nodes.insert(
                node_id.clone(),
                TreeNode {
                    node_id: node_id.clone(),
                    level: next_level,
                    kind: NodeKind::Summary,
                    text: summary,
                    embedding: EmbeddingVector {
                        values: Vec::new(),
                        model_id: String::new(),
                    },
                    children: members.clone(),
                    token_count,
                },
            );
            new_ids.push(node_id);
        }
        new_ids.sort();
        let summary_texts: Vec<String> =
            new_ids.iter().map(|id| nodes[id].text.clone()).collect();
        let summary_embeddings = embedder.embed_batch(&summary_texts)?;
        for (id, embedding) in new_ids.iter().zip(summary_embeddings) {
            nodes.get_mut(id).expect("just inserted").embedding = embedding;
        }
        level_reports.push(report);
        levels.push(new_ids);
    }

    let root_id = levels.last().expect("levels non-empty")[0].clone();
    let tree = HierarchyTree {
        depth: levels.len() - 1,
        root_id,
        levels,
        nodes,
    };
    tree.validate(config.assign == AssignMode::Hard)?;
    Ok(TreeBuild {
        tree,
        level_reports,
    })
}

type Clusters = Vec<Vec<String>>;

fn cluster_level(
    nodes: &BTreeMap<String, TreeNode>,
    current: &[String],
    config: &ClusteringConfig,
    level_seed: u64,
    next_level: usize,
) -> Result<(Clusters, LevelReport)> {
    let n = current.len();
    let d = nodes[&current[0]].embedding.dimension();
    let mut x = DMatrix::zeros(n, d);
    for (i, id) in current.iter().enumerate() {
        let embedding = &nodes[id].embedding;
        if embedding.dimension() != d {
            return Err(Error::DimensionMismatch {
                left: d,
                right: embedding.dimension(),
            });
        }
        for (j, &v) in embedding.values.iter().enumerate() {
            x[(i, j)] = f64::from(v);
        }
    }
    let target = config
        .target_dim
        .unwrap_or_else(|| default_target_dim(n, d))
        .min(d)
        .max(1);
    let reduced = reduce_dimensions(&x, target, &config.reducer, level_seed)?;
    // Cap k at half the level size so every level at least halves.
    let k_cap = config.k_max.min(n.div_ceil(2)).max(1);
    let (k, params, fit) = select_num_clusters(&reduced, k_cap, &config.gmm, level_seed)?;
    let assignment = assign_clusters(&params, &reduced, config.assign, config.soft_threshold)?;

    let mut clusters: Clusters = vec![Vec::new(); k];
    for (i, members) in assignment.memberships.iter().enumerate() {
        for membership in members {
            clusters[membership.cluster].push(current[i].clone());
        }
    }
    for members in &mut clusters {
        members.sort();
    }
    let report = LevelReport {
        level: next_level,
        input_nodes: n,
        clusters: clusters.iter().filter(|c| !c.is_empty()).count(),
        bic: Some(fit.bic),
        log_likelihood: Some(fit.final_log_likelihood),
        converged: Some(fit.converged),
        em_iterations: Some(fit.iterations),
    };
    Ok((clusters, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{EmbedderConfig, HashEmbedder};
    use crate::text::WhitespaceTokenizer;

    fn chunk(id: &str, text: &str) -> Chunk {
        Chunk {
            chunk_id: id.into(),
            doc_id: "d".into(),
            seq: 0,
            text: text.into(),
            token_count: crate::text::count_tokens(text),
        }
    }

    fn embedder() -> HashEmbedder {
        HashEmbedder::new(&EmbedderConfig::default()).unwrap()
    }

    fn summarizer() -> ExtractiveSummarizer {
        ExtractiveSummarizer::new(256, TokenizerKind::Whitespace)
    }

    #[test]
    fn extractive_takes_first_sentence() {
        let s = summarizer();
        let out = s.summarize(&["Revenue grew. Margins fell.".into()]).unwrap();
        assert_eq!(out, "Revenue grew.");
    }

    #[test]
    fn extractive_joins_under_budget() {
        let s = summarizer();
        let out = s
            .summarize(&["Alpha one.".into(), "Beta two.".into()])
            .unwrap();
        assert_eq!(out, "Alpha one. Beta two.");
    }

    #[test]
    fn extractive_truncates_to_exact_budget() {
        let s = ExtractiveSummarizer::new(20, TokenizerKind::Whitespace);
        let long: Vec<String> = (0..5)
            .map(|i| {
                (0..50)
                    .map(|j| format!("w{i}x{j}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let out = s.summarize(&long).unwrap();
        assert_eq!(crate::text::count_tokens(&out), 20);
    }

    #[test]
    fn extractive_rejects_empty_cluster() {
        let s = summarizer();
        assert!(s.summarize(&[]).is_err());
        assert!(s.summarize(&["ok.".into(), String::new()]).is_err());
    }

    #[test]
    fn usage_meter_accumulates() {
        let s = summarizer();
        s.summarize(&["one two three.".into()]).unwrap();
        s.summarize(&["four five.".into()]).unwrap();
        let usage = s.usage();
        assert_eq!(usage.input_tokens, 5);
        assert!(usage.output_tokens > 0);
    }

    #[test]
    fn single_chunk_gets_leaf_plus_root() {
        let chunks = vec![chunk("a#0", "Only one chunk here.")];
        let built = build_tree(
            &chunks,
            &embedder(),
            &summarizer(),
            &WhitespaceTokenizer,
            &ClusteringConfig::default(),
            0,
        )
        .unwrap();
        let tree = &built.tree;
        assert_eq!(tree.depth, 1);
        assert_eq!(tree.node_count(), 2);
        assert_eq!(tree.root_id, "L1/C0");
        assert_eq!(tree.nodes[&tree.root_id].children, vec!["a#0".to_string()]);
        tree.validate(true).unwrap();
    }

    #[test]
    fn identical_chunks_collapse_to_one_summary() {
        let chunks: Vec<Chunk> = (0..4)
            .map(|i| chunk(&format!("a#{i}"), "Same text in every chunk."))
            .collect();
        let built = build_tree(
            &chunks,
            &embedder(),
            &summarizer(),
            &WhitespaceTokenizer,
            &ClusteringConfig::default(),
            0,
        )
        .unwrap();
        assert_eq!(built.tree.depth, 1);
        assert_eq!(built.tree.node_count(), 5);
        assert_eq!(built.tree.levels[1].len(), 1);
    }

    #[test]
    fn build_is_deterministic() {
        let chunks: Vec<Chunk> = (0..12)
            .map(|i| chunk(&format!("a#{i}"), &format!("Topic {} body text.", i % 3)))
            .collect();
        let config = ClusteringConfig::default();
        let a = build_tree(&chunks, &embedder(), &summarizer(), &WhitespaceTokenizer, &config, 5)
            .unwrap();
        let b = build_tree(&chunks, &embedder(), &summarizer(), &WhitespaceTokenizer, &config, 5)
            .unwrap();
        assert_eq!(a.tree.nodes, b.tree.nodes);
        assert_eq!(a.tree.levels, b.tree.levels);
    }

    #[test]
    fn level_sizes_strictly_decrease() {
        let chunks: Vec<Chunk> = (0..20)
            .map(|i| chunk(&format!("a#{i}"), &format!("Subject {} sentence {}.", i % 4, i)))
            .collect();
        let built = build_tree(
            &chunks,
            &embedder(),
            &summarizer(),
            &WhitespaceTokenizer,
            &ClusteringConfig::default(),
            3,
        )
        .unwrap();
        for pair in built.tree.levels.windows(2) {
            assert!(pair[1].len() < pair[0].len());
        }
    }

    #[test]
    fn empty_chunk_list_is_an_error() {
        assert!(build_tree(
            &[],
            &embedder(),
            &summarizer(),
            &WhitespaceTokenizer,
            &ClusteringConfig::default(),
            0
        )
        .is_err());
    }
}

//! Dual-modality node index: dense vectors for cosine search plus an
//! inverted keyword index, with checksummed on-disk persistence.
//!
//! On-disk layout (all four files live in one directory):
//!
//! * `manifest.json` — format version, embedder model id, dimension, node
//!   count, SHA-256 of every other file;
//! * `nodes.json` — id/level/kind/text/children/token_count per node,
//!   ordered by (level, id);
//! * `vectors.f32` — little-endian f32 rows, row i = node i in `nodes.json`
//!   order;
//! * `postings.json` — term -> [(node_id, term_frequency)].

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::text::eval_tokenize;
use crate::tree::{HierarchyTree, NodeKind, TreeNode};

pub const FORMAT_VERSION: u32 = 1;

const MANIFEST_FILE: &str = "manifest.json";
const NODES_FILE: &str = "nodes.json";
const VECTORS_FILE: &str = "vectors.f32";
const POSTINGS_FILE: &str = "postings.json";

/// One indexed node: tree metadata plus its keyword term frequencies.
#[derive(Debug, Clone)]
pub struct IndexRecord {
    pub node_id: String,
    pub level: usize,
    pub kind: NodeKind,
    pub text: String,
    pub embedding: EmbeddingVector,
    pub children: Vec<String>,
    pub token_count: usize,
    /// Term frequencies under the shared lowercase-alphanumeric tokenizer.
    pub terms: BTreeMap<String, u32>,
    /// Total term occurrences (keyword-search document length).
    pub term_count: usize,
}

impl IndexRecord {
    /// Build a record, deriving the term frequencies from `text` with the
    /// shared tokenizer so postings stay rebuildable.
    pub fn new(
        node_id: String,
        level: usize,
        kind: NodeKind,
        text: String,
        embedding: EmbeddingVector,
        children: Vec<String>,
        token_count: usize,
    ) -> IndexRecord {
        let tokens = eval_tokenize(&text);
        let term_count = tokens.len();
        let mut terms = BTreeMap::new();
        for token in tokens {
            *terms.entry(token).or_insert(0u32) += 1;
        }
        IndexRecord {
            node_id,
            level,
            kind,
            text,
            embedding,
            children,
            token_count,
            terms,
            term_count,
        }
    }

    fn from_node(node: &TreeNode) -> IndexRecord {
        IndexRecord::new(
            node.node_id.clone(),
            node.level,
            node.kind,
            node.text.clone(),
            node.embedding.clone(),
            node.children.clone(),
            node.token_count,
        )
    }
}

pub type Postings = BTreeMap<String, Vec<(String, u32)>>;

/// Read-only store over every leaf and summary node. Built once, then safe
/// to query from any number of threads.
#[derive(Debug, Clone)]
pub struct Index {
    records: Vec<IndexRecord>,
    by_id: HashMap<String, usize>,
    postings: Postings,
    model_id: String,
    dimension: usize,
    avg_term_count: f64,
}

impl Index {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in persisted order: level ascending, node id ascending.
    pub fn records(&self) -> &[IndexRecord] {
        &self.records
    }

    pub fn get(&self, node_id: &str) -> Option<&IndexRecord> {
        self.by_id.get(node_id).map(|&i| &self.records[i])
    }

    pub fn postings(&self) -> &Postings {
        &self.postings
    }

    pub fn posting_list(&self, term: &str) -> Option<&[(String, u32)]> {
        self.postings.get(term).map(Vec::as_slice)
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Mean keyword-token length over all records (BM25's avgdl).
    pub fn avg_term_count(&self) -> f64 {
        self.avg_term_count
    }

    /// Recompute the inverted index from the records. The stored postings
    /// must always equal this (no hidden state).
    pub fn rebuild_postings(&self) -> Postings {
        postings_from_records(&self.records)
    }

    /// Reconstruct the hierarchy from the indexed nodes (children and levels
    /// are persisted, so the tree view is recoverable from the index alone).
    pub fn to_tree(&self) -> Result<HierarchyTree> {
        if self.records.is_empty() {
            return Err(Error::CorruptIndex("empty index has no tree".into()));
        }
        let depth = self.records.iter().map(|r| r.level).max().unwrap_or(0);
        let mut levels: Vec<Vec<String>> = vec![Vec::new(); depth + 1];
        let mut nodes = BTreeMap::new();
        for record in &self.records {
            levels[record.level].push(record.node_id.clone());
            nodes.insert(
                record.node_id.clone(),
                TreeNode {
                    node_id: record.node_id.clone(),
                    level: record.level,
                    kind: record.kind,
                    text: record.text.clone(),
                    embedding: record.embedding.clone(),
                    children: record.children.clone(),
                    token_count: record.token_count,
                },
            );
        }
        let top = &levels[depth];
        if top.len() != 1 {
            return Err(Error::CorruptIndex(format!(
                "expected a single root, found {} nodes at level {depth}",
                top.len()
            )));
        }
        let tree = HierarchyTree {
            root_id: top[0].clone(),
            depth,
            levels,
            nodes,
        };
        tree.validate(false)?;
        Ok(tree)
    }
}

fn postings_from_records(records: &[IndexRecord]) -> Postings {
    let mut postings: Postings = BTreeMap::new();
    for record in records {
        for (term, &tf) in &record.terms {
            postings
                .entry(term.clone())
                .or_default()
                .push((record.node_id.clone(), tf));
        }
    }
    for list in postings.values_mut() {
        list.sort_by(|a, b| a.0.cmp(&b.0));
    }
    postings
}

fn index_from_records(records: Vec<IndexRecord>, postings: Postings) -> Result<Index> {
    let mut by_id = HashMap::with_capacity(records.len());
    let mut model_id: Option<&str> = None;
    let mut dimension: Option<usize> = None;
    for (i, record) in records.iter().enumerate() {
        if by_id.insert(record.node_id.clone(), i).is_some() {
            return Err(Error::CorruptIndex(format!(
                "duplicate node id `{}`",
                record.node_id
            )));
        }
        match model_id {
            None => model_id = Some(&record.embedding.model_id),
            Some(expected) if expected != record.embedding.model_id => {
                return Err(Error::ModelMismatch {
                    expected: expected.to_owned(),
                    actual: record.embedding.model_id.clone(),
                })
            }
            _ => {}
        }
        match dimension {
            None => dimension = Some(record.embedding.dimension()),
            Some(d) if d != record.embedding.dimension() => {
                return Err(Error::DimensionMismatch {
                    left: d,
                    right: record.embedding.dimension(),
                })
            }
            _ => {}
        }
    }
    let n = records.len();
    let avg_term_count = if n == 0 {
        0.0
    } else {
        records.iter().map(|r| r.term_count as f64).sum::<f64>() / n as f64
    };
    Ok(Index {
        model_id: model_id.unwrap_or_default().to_owned(),
        dimension: dimension.unwrap_or(0),
        avg_term_count,
        by_id,
        postings,
        records,
    })
}

impl Index {
    /// Assemble an index from prebuilt records (persisted order is imposed
    /// here); the inverted postings are derived from the records.
    pub fn from_records(mut records: Vec<IndexRecord>) -> Result<Index> {
        records.sort_by(|a, b| a.level.cmp(&b.level).then_with(|| a.node_id.cmp(&b.node_id)));
        let postings = postings_from_records(&records);
        index_from_records(records, postings)
    }
}

/// Index every node of the tree, leaves and summaries alike.
pub fn build_index(tree: &HierarchyTree) -> Result<Index> {
    let records: Vec<IndexRecord> = tree.nodes.values().map(IndexRecord::from_node).collect();
    Index::from_records(records)
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    model_id: String,
    dimension: usize,
    node_count: usize,
    files: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeEntry {
    id: String,
    level: usize,
    kind: NodeKind,
    text: String,
    children: Vec<String>,
    token_count: usize,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Persist the index; returns the SHA-256 of the written manifest.
pub fn save_index(index: &Index, dir: &Path) -> Result<String> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let entries: Vec<NodeEntry> = index
        .records
        .iter()
        .map(|r| NodeEntry {
            id: r.node_id.clone(),
            level: r.level,
            kind: r.kind,
            text: r.text.clone(),
            children: r.children.clone(),
            token_count: r.token_count,
        })
        .collect();
    let nodes_bytes = serde_json::to_vec_pretty(&entries)
        .map_err(|e| Error::Internal(format!("serialize nodes: {e}")))?;

    let mut vector_bytes = Vec::with_capacity(index.len() * index.dimension * 4);
    for record in &index.records {
        for &v in &record.embedding.values {
            vector_bytes.extend_from_slice(&v.to_le_bytes());
        }
    }

    let postings_bytes = serde_json::to_vec_pretty(&index.postings)
        .map_err(|e| Error::Internal(format!("serialize postings: {e}")))?;

    let mut files = BTreeMap::new();
    for (name, bytes) in [
        (NODES_FILE, &nodes_bytes),
        (VECTORS_FILE, &vector_bytes),
        (POSTINGS_FILE, &postings_bytes),
    ] {
        std::fs::write(dir.join(name), bytes).map_err(|e| Error::io(dir.join(name), e))?;
        files.insert(name.to_owned(), sha256_hex(bytes));
    }

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        model_id: index.model_id.clone(),
        dimension: index.dimension,
        node_count: index.len(),
        files,
    };
    let manifest_bytes = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| Error::Internal(format!("serialize manifest: {e}")))?;
    std::fs::write(dir.join(MANIFEST_FILE), &manifest_bytes)
        .map_err(|e| Error::io(dir.join(MANIFEST_FILE), e))?;
    Ok(sha256_hex(&manifest_bytes))
}

pub fn load_index(dir: &Path) -> Result<Index> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::MissingIndexFile(manifest_path));
    }
    let manifest_bytes =
        std::fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| Error::CorruptIndex(format!("manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found: manifest.format_version,
        });
    }

    let mut contents: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
    for name in [NODES_FILE, VECTORS_FILE, POSTINGS_FILE] {
        let path = dir.join(name);
        if !path.is_file() {
            return Err(Error::MissingIndexFile(path));
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let expected = manifest
            .files
            .get(name)
            .ok_or_else(|| Error::CorruptIndex(format!("manifest lists no checksum for {name}")))?;
        let actual = sha256_hex(&bytes);
        if &actual != expected {
            return Err(Error::ChecksumMismatch {
                file: name.to_owned(),
                expected: expected.clone(),
                actual,
            });
        }
        contents.insert(name, bytes);
    }

    let entries: Vec<NodeEntry> = serde_json::from_slice(&contents[NODES_FILE])
        .map_err(|e| Error::CorruptIndex(format!("nodes: {e}")))?;
    if entries.len() != manifest.node_count {
        return Err(Error::CorruptIndex(format!(
            "manifest says {} nodes, nodes.json has {}",
            manifest.node_count,
            entries.len()
        )));
    }
    let vector_bytes = &contents[VECTORS_FILE];
    let expected_len = entries.len() * manifest.dimension * 4;
    if vector_bytes.len() != expected_len {
        return Err(Error::CorruptIndex(format!(
            "vectors.f32 is {} bytes, expected {expected_len}",
            vector_bytes.len()
        )));
    }

    let records: Vec<IndexRecord> = entries
        .into_iter()
        .enumerate()
        .map(|(i, entry)| {
            let offset = i * manifest.dimension * 4;
            let values: Vec<f32> = (0..manifest.dimension)
                .map(|j| {
                    let at = offset + j * 4;
                    f32::from_le_bytes(vector_bytes[at..at + 4].try_into().expect("4 bytes"))
                })
                .collect();
            let tokens = eval_tokenize(&entry.text);
            let term_count = tokens.len();
            let mut terms = BTreeMap::new();
            for token in tokens {
                *terms.entry(token).or_insert(0u32) += 1;
            }
            IndexRecord {
                node_id: entry.id,
                level: entry.level,
                kind: entry.kind,
                text: entry.text,
                embedding: EmbeddingVector {
                    values,
                    model_id: manifest.model_id.clone(),
                },
                children: entry.children,
                token_count: entry.token_count,
                terms,
                term_count,
            }
        })
        .collect();

    let postings: Postings = serde_json::from_slice(&contents[POSTINGS_FILE])
        .map_err(|e| Error::CorruptIndex(format!("postings: {e}")))?;
    index_from_records(records, postings)
}

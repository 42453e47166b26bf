//! Corpus loading and token-bounded chunking.
//!
//! Documents come from a JSONL file (one object per line with `id`, `text`,
//! optional `metadata`) or a directory of plain-text files. Chunking slices
//! each document at token boundaries of the configured tokenizer so that
//! reassembling the chunks (minus overlap) reproduces the document's token
//! sequence exactly.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::Tokenizer;

/// One source document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

/// A token-bounded slice of a document. Chunks become the tree's leaves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    /// `<doc_id>#<seq>`; stable across runs so query results carry provenance.
    pub chunk_id: String,
    pub doc_id: String,
    pub seq: usize,
    pub text: String,
    pub token_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    #[default]
    Jsonl,
    PlainDir,
}

#[derive(Debug, Deserialize)]
struct JsonlRecord {
    id: String,
    text: String,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

/// Load a corpus from `path`.
///
/// JSONL: one record per line, blank lines skipped, malformed lines and
/// duplicate ids are errors naming the offending line. Plain dir: every
/// regular file in the directory is one document (doc_id = file name),
/// loaded in file-name order.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<Document>> {
    match format {
        CorpusFormat::Jsonl => load_jsonl(path),
        CorpusFormat::PlainDir => load_plain_dir(path),
    }
}

fn load_jsonl(path: &Path) -> Result<Vec<Document>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut docs = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonlRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                path: path.to_path_buf(),
                line: line_no,
                reason: e.to_string(),
            })?;
        if record.id.is_empty() {
            return Err(Error::MalformedRecord {
                path: path.to_path_buf(),
                line: line_no,
                reason: "empty `id`".into(),
            });
        }
        if seen.insert(record.id.clone(), line_no).is_some() {
            return Err(Error::DuplicateDocId {
                path: path.to_path_buf(),
                line: line_no,
                doc_id: record.id,
            });
        }
        docs.push(Document {
            doc_id: record.id,
            text: record.text,
            metadata: record.metadata,
        });
    }
    Ok(docs)
}

fn load_plain_dir(path: &Path) -> Result<Vec<Document>> {
    let entries = std::fs::read_dir(path).map_err(|e| Error::io(path, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        let file_type = entry.file_type().map_err(|e| Error::io(entry.path(), e))?;
        if file_type.is_file() {
            files.push(entry.path());
        }
    }
    files.sort();
    let mut docs = Vec::new();
    for file in files {
        let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let doc_id = file
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        docs.push(Document {
            doc_id,
            text,
            metadata: BTreeMap::new(),
        });
    }
    Ok(docs)
}

/// Split one document into chunks of at most `max_tokens` tokens where
/// consecutive chunks share exactly `overlap_tokens` tokens (except possibly
/// the last). Empty documents yield no chunks.
pub fn chunk_document(
    doc: &Document,
    max_tokens: usize,
    overlap_tokens: usize,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<Chunk>> {
    if max_tokens == 0 {
        return Err(Error::InvalidArgument("max_tokens must be >= 1".into()));
    }
    if overlap_tokens >= max_tokens {
        return Err(Error::InvalidArgument(format!(
            "overlap_tokens ({overlap_tokens}) must be < max_tokens ({max_tokens})"
        )));
    }
    let spans = tokenizer.token_spans(&doc.text);
    let n = spans.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let stride = max_tokens - overlap_tokens;
    let mut chunks = Vec::new();
    let mut start = 0usize;
    let mut seq = 0usize;
    loop {
        let end = (start + max_tokens).min(n);
        let text = &doc.text[spans[start].0..spans[end - 1].1];
        chunks.push(Chunk {
            chunk_id: format!("{}#{}", doc.doc_id, seq),
            doc_id: doc.doc_id.clone(),
            seq,
            text: text.to_owned(),
            token_count: end - start,
        });
        if end == n {
            break;
        }
        start += stride;
        seq += 1;
    }
    Ok(chunks)
}

/// Chunk every document of a corpus. Empty documents are skipped with a
/// warning; per-document work runs in parallel and results keep corpus order.
pub fn chunk_corpus(
    docs: &[Document],
    max_tokens: usize,
    overlap_tokens: usize,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<Chunk>> {
    use rayon::prelude::*;
    let per_doc: Vec<Result<Vec<Chunk>>> = docs
        .par_iter()
        .map(|doc| chunk_document(doc, max_tokens, overlap_tokens, tokenizer))
        .collect();
    let mut chunks = Vec::new();
    for (doc, result) in docs.iter().zip(per_doc) {
        let doc_chunks = result?;
        if doc_chunks.is_empty() {
            log::warn!("document `{}` is empty, skipping", doc.doc_id);
            continue;
        }
        chunks.extend(doc_chunks);
    }
    Ok(chunks)
}

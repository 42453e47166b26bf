//! Tokenizers shared across the engine.
//!
//! Two distinct tokenizations exist and must not be conflated:
//!
//! * the *budget* tokenizer ([`Tokenizer`], default [`WhitespaceTokenizer`])
//!   counts tokens for chunk boundaries, summary truncation, and context
//!   budgets;
//! * [`eval_tokenize`] (lowercase, split on non-alphanumeric) feeds keyword
//!   postings, the hashed embedder, and the evaluation metrics. Using one
//!   definition for all three avoids silent skew between search and scoring.

use serde::{Deserialize, Serialize};

/// Byte span `[start, end)` of a token inside its source string.
pub type Span = (usize, usize);

/// Counts and locates tokens for budget purposes.
///
/// Implementations must be deterministic. Chunking slices documents at span
/// boundaries, so spans must cover whole tokens in order.
pub trait Tokenizer: Send + Sync {
    fn token_spans(&self, text: &str) -> Vec<Span>;

    fn count(&self, text: &str) -> usize {
        self.token_spans(text).len()
    }
}

/// Default tokenizer: a token is a maximal run of non-whitespace characters.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn token_spans(&self, text: &str) -> Vec<Span> {
        let mut spans = Vec::new();
        let mut start = None;
        for (i, ch) in text.char_indices() {
            if ch.is_whitespace() {
                if let Some(s) = start.take() {
                    spans.push((s, i));
                }
            } else if start.is_none() {
                start = Some(i);
            }
        }
        if let Some(s) = start {
            spans.push((s, text.len()));
        }
        spans
    }
}

/// Named tokenizer selection for config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerKind {
    #[default]
    Whitespace,
}

impl TokenizerKind {
    pub fn build(self) -> Box<dyn Tokenizer> {
        match self {
            TokenizerKind::Whitespace => Box::new(WhitespaceTokenizer),
        }
    }
}

/// Token count under the default whitespace tokenizer.
pub fn count_tokens(text: &str) -> usize {
    WhitespaceTokenizer.count(text)
}

/// Truncate `text` to at most `max_tokens` tokens of `tokenizer`, slicing at
/// the end of the last kept token so intra-token text is preserved.
pub fn truncate_tokens<'a>(text: &'a str, max_tokens: usize, tokenizer: &dyn Tokenizer) -> &'a str {
    if max_tokens == 0 {
        return "";
    }
    let spans = tokenizer.token_spans(text);
    if spans.len() <= max_tokens {
        return text;
    }
    let (first, _) = spans[0];
    let (_, last) = spans[max_tokens - 1];
    &text[first..last]
}

/// Lowercase alphanumeric tokenization: maximal runs of alphanumeric
/// characters after lowercasing, everything else a separator.
pub fn eval_tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lower in ch.to_lowercase() {
                current.push(lower);
            }
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

//! Pluggable token counting.
//!
//! Every token budget in the pipeline (chunk size, sampling window, length
//! filters, packing length) is measured in the units of the active tokenizer.
//! A tokenizer maps text to a list of byte spans; counting, chunking and
//! truncation are all derived from those spans, so they can never disagree.

use std::collections::HashSet;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::CorpusError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerKind {
    /// One token per maximal run of non-whitespace characters.
    WhitespaceReference,
    /// Greedy longest-match over an external subword vocabulary.
    ExternalVocab,
}

/// Serializable description of a tokenizer, as it appears in run configs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub kind: TokenizerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_path: Option<PathBuf>,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self { kind: TokenizerKind::WhitespaceReference, vocab_path: None }
    }
}

impl TokenizerConfig {
    pub fn build(&self) -> Result<TokenizerSpec, CorpusError> {
        match self.kind {
            TokenizerKind::WhitespaceReference => Ok(TokenizerSpec::Whitespace),
            TokenizerKind::ExternalVocab => {
                let path = self
                    .vocab_path
                    .as_ref()
                    .ok_or_else(|| CorpusError::Vocab("external-vocab tokenizer requires vocab_path".into()))?;
                TokenizerSpec::from_vocab_file(path)
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub enum TokenizerSpec {
    #[default]
    Whitespace,
    Vocab(Arc<VocabTokenizer>),
}

impl TokenizerSpec {
    pub fn kind(&self) -> TokenizerKind {
        match self {
            TokenizerSpec::Whitespace => TokenizerKind::WhitespaceReference,
            TokenizerSpec::Vocab(_) => TokenizerKind::ExternalVocab,
        }
    }

    pub fn from_vocab_file(path: &Path) -> Result<Self, CorpusError> {
        Ok(TokenizerSpec::Vocab(Arc::new(VocabTokenizer::load(path)?)))
    }

    pub fn from_vocab<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        TokenizerSpec::Vocab(Arc::new(VocabTokenizer::new(tokens)))
    }

    /// Byte ranges of each token, in order. Ranges never overlap.
    pub fn token_spans(&self, text: &str) -> Vec<Range<usize>> {
        match self {
            TokenizerSpec::Whitespace => whitespace_spans(text),
            TokenizerSpec::Vocab(v) => v.spans(text),
        }
    }

    pub fn count(&self, text: &str) -> usize {
        match self {
            TokenizerSpec::Whitespace => text.split_whitespace().count(),
            TokenizerSpec::Vocab(v) => v.spans(text).len(),
        }
    }

    /// Longest prefix of `text` holding at most `max_tokens` tokens.
    pub fn truncate<'a>(&self, text: &'a str, max_tokens: usize) -> &'a str {
        if max_tokens == 0 {
            return "";
        }
        let spans = self.token_spans(text);
        if spans.len() <= max_tokens {
            return text;
        }
        &text[..spans[max_tokens - 1].end]
    }

    /// Longest suffix of `text` holding at most `max_tokens` tokens.
    pub fn tail<'a>(&self, text: &'a str, max_tokens: usize) -> &'a str {
        let spans = self.token_spans(text);
        if spans.len() <= max_tokens {
            return text;
        }
        if max_tokens == 0 {
            return "";
        }
        &text[spans[spans.len() - max_tokens].start..]
    }
}

/// Counts tokens of `text` under `tok`.
pub fn count_tokens(text: &str, tok: &TokenizerSpec) -> usize {
    tok.count(text)
}

fn whitespace_spans(text: &str) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        match (ch.is_whitespace(), start) {
            (true, Some(s)) => {
                spans.push(s..i);
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push(s..text.len());
    }
    spans
}

/// Greedy longest-match subword tokenizer over a fixed vocabulary.
///
/// Accepts either a JSON object mapping token strings to ids (the common
/// `vocab.json` layout) or a plain text file with one token per line.
/// Byte-level markers `Ġ` (space) and `Ċ` (newline) are decoded. Characters
/// not covered by the vocabulary become single-character tokens.
#[derive(Debug)]
pub struct VocabTokenizer {
    tokens: HashSet<String>,
    max_chars: usize,
}

impl VocabTokenizer {
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: HashSet<String> =
            tokens.into_iter().map(|t| decode_byte_markers(&t.into())).filter(|t| !t.is_empty()).collect();
        let max_chars = tokens.iter().map(|t| t.chars().count()).max().unwrap_or(1);
        Self { tokens, max_chars }
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
        let trimmed = raw.trim_start();
        if trimmed.starts_with('{') {
            let map: serde_json::Map<String, serde_json::Value> =
                serde_json::from_str(trimmed).map_err(|e| CorpusError::Vocab(format!("{}: {e}", path.display())))?;
            Ok(Self::new(map.into_iter().map(|(k, _)| k)))
        } else {
            Ok(Self::new(raw.lines().filter(|l| !l.is_empty()).map(str::to_owned)))
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn spans(&self, text: &str) -> Vec<Range<usize>> {
        let mut spans = Vec::new();
        // Byte offsets of every char boundary, so candidate lengths can be tried
        // longest first without re-walking the string.
        let bounds: Vec<usize> = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len())).collect();
        let n_chars = bounds.len() - 1;
        let mut pos = 0;
        while pos < n_chars {
            let longest = self.max_chars.min(n_chars - pos);
            let mut taken = 1;
            for len in (2..=longest).rev() {
                if self.tokens.contains(&text[bounds[pos]..bounds[pos + len]]) {
                    taken = len;
                    break;
                }
            }
            spans.push(bounds[pos]..bounds[pos + taken]);
            pos += taken;
        }
        spans
    }
}

fn decode_byte_markers(token: &str) -> String {
    token.replace('Ġ', " ").replace('Ċ', "\n")
}

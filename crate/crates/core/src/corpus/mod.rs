//! Document collections: ingestion, chunking and length-based sampling.

mod tokenizer;

pub use tokenizer::{count_tokens, TokenizerConfig, TokenizerKind, TokenizerSpec, VocabTokenizer};

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate document id {id:?}")]
    DuplicateId { id: String, line: usize },
    #[error("line {line}: document {id:?} has empty text")]
    EmptyText { id: String, line: usize },
    #[error("max_tokens must be at least 1, got {0}")]
    InvalidChunkSize(usize),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("probability must lie in [0, 1], got {0}")]
    InvalidProbability(f64),
    #[error("invalid token range: min {min} > max {max}")]
    InvalidRange { min: usize, max: usize },
    #[error("vocabulary: {0}")]
    Vocab(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub source: String,
    pub token_count: usize,
}

/// A contiguous piece of a parent document.
///
/// `index` is the chunk's position in its parent's chunk list; for windows
/// drawn by [`Corpus::sample_random_chunk`] it is the token offset of the
/// window start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TextChunk {
    pub parent_id: String,
    pub index: usize,
    pub text: String,
    pub token_count: usize,
}

#[derive(Deserialize)]
struct CorpusRecord {
    id: String,
    text: String,
    #[serde(default)]
    source: Option<String>,
}

#[derive(Serialize)]
struct CorpusRecordOut<'a> {
    id: &'a str,
    text: &'a str,
    #[serde(skip_serializing_if = "str::is_empty")]
    source: &'a str,
}

/// Splits `text` greedily left to right into chunks of at most `max_tokens`.
///
/// Whitespace between two chunks stays with the earlier one, so the chunks
/// concatenate back to `text` byte for byte. Empty input yields no chunks;
/// whitespace-only input yields a single zero-token chunk.
pub fn chunk_text(text: &str, max_tokens: usize, tok: &TokenizerSpec) -> Result<Vec<TextChunk>, CorpusError> {
    if max_tokens < 1 {
        return Err(CorpusError::InvalidChunkSize(max_tokens));
    }
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let spans = tok.token_spans(text);
    if spans.len() <= max_tokens {
        return Ok(vec![TextChunk {
            parent_id: String::new(),
            index: 0,
            text: text.to_owned(),
            token_count: spans.len(),
        }]);
    }
    let starts: Vec<usize> = spans.chunks(max_tokens).map(|group| group[0].start).collect();
    let mut chunks = Vec::with_capacity(starts.len());
    for (index, group) in spans.chunks(max_tokens).enumerate() {
        let begin = if index == 0 { 0 } else { starts[index] };
        let end = starts.get(index + 1).copied().unwrap_or(text.len());
        chunks.push(TextChunk {
            parent_id: String::new(),
            index,
            text: text[begin..end].to_owned(),
            token_count: group.len(),
        });
    }
    Ok(chunks)
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, source: impl Into<String>, tok: &TokenizerSpec) -> Self {
        let text = text.into();
        let token_count = tok.count(&text);
        Self { id: id.into(), text, source: source.into(), token_count }
    }

    pub fn chunks(&self, max_tokens: usize, tok: &TokenizerSpec) -> Result<Vec<TextChunk>, CorpusError> {
        let mut chunks = chunk_text(&self.text, max_tokens, tok)?;
        for c in &mut chunks {
            c.parent_id.clone_from(&self.id);
        }
        Ok(chunks)
    }
}

/// An immutable, ordered document collection with a fixed tokenizer.
#[derive(Debug, Clone)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
    tokenizer: TokenizerSpec,
}

/// Shared read-only corpus.
pub type CorpusHandle = Arc<Corpus>;

impl Corpus {
    /// Builds a corpus from in-memory `(id, text, source)` triples.
    pub fn from_records<I, A, B, C>(records: I, tokenizer: TokenizerSpec) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = (A, B, C)>,
        A: Into<String>,
        B: Into<String>,
        C: Into<String>,
    {
        let mut corpus = Corpus { docs: Vec::new(), by_id: HashMap::new(), tokenizer };
        for (i, (id, text, source)) in records.into_iter().enumerate() {
            corpus.push(id.into(), text.into(), source.into(), i + 1)?;
        }
        Ok(corpus)
    }

    fn push(&mut self, id: String, text: String, source: String, line: usize) -> Result<(), CorpusError> {
        if text.is_empty() {
            return Err(CorpusError::EmptyText { id, line });
        }
        if self.by_id.contains_key(&id) {
            return Err(CorpusError::DuplicateId { id, line });
        }
        let doc = Document::new(id.clone(), text, source, &self.tokenizer);
        self.by_id.insert(id, self.docs.len());
        self.docs.push(doc);
        Ok(())
    }

    fn from_docs(docs: Vec<Document>, tokenizer: TokenizerSpec) -> Self {
        let by_id = docs.iter().enumerate().map(|(i, d)| (d.id.clone(), i)).collect();
        Corpus { docs, by_id, tokenizer }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }

    pub fn tokenizer(&self) -> &TokenizerSpec {
        &self.tokenizer
    }

    pub fn total_tokens(&self) -> usize {
        self.docs.iter().map(|d| d.token_count).sum()
    }

    /// Draws a window of at most `chunk_tokens` tokens from a uniformly chosen
    /// document, starting at a uniformly chosen token offset.
    pub fn sample_random_chunk(&self, chunk_tokens: usize, seed: u64) -> Result<TextChunk, CorpusError> {
        if self.docs.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        if chunk_tokens < 1 {
            return Err(CorpusError::InvalidChunkSize(chunk_tokens));
        }
        let mut rng = seed::rng(seed);
        let doc = &self.docs[rng.gen_range(0..self.docs.len())];
        let spans = self.tokenizer.token_spans(&doc.text);
        if spans.len() <= chunk_tokens {
            return Ok(TextChunk {
                parent_id: doc.id.clone(),
                index: 0,
                text: doc.text.clone(),
                token_count: spans.len(),
            });
        }
        let start = rng.gen_range(0..=spans.len() - chunk_tokens);
        let end = start + chunk_tokens;
        Ok(TextChunk {
            parent_id: doc.id.clone(),
            index: start,
            text: doc.text[spans[start].start..spans[end - 1].end].to_owned(),
            token_count: chunk_tokens,
        })
    }

    /// Keeps every document with at least `threshold_tokens` tokens and each
    /// shorter one independently with probability `keep_p`.
    pub fn downsample_short(&self, threshold_tokens: usize, keep_p: f64, seed: u64) -> Result<Corpus, CorpusError> {
        if !(0.0..=1.0).contains(&keep_p) {
            return Err(CorpusError::InvalidProbability(keep_p));
        }
        let mut rng = seed::rng(seed);
        let docs = self
            .docs
            .iter()
            .filter(|d| {
                if d.token_count >= threshold_tokens {
                    return true;
                }
                // Draw even when keep_p is 0 or 1 so the stream position only
                // depends on the document sequence.
                rng.gen::<f64>() < keep_p
            })
            .cloned()
            .collect();
        Ok(Corpus::from_docs(docs, self.tokenizer.clone()))
    }

    /// Documents with `min_tokens <= token_count <= max_tokens`, in corpus order.
    pub fn select_by_length(&self, min_tokens: usize, max_tokens: usize) -> Result<Vec<&Document>, CorpusError> {
        if min_tokens > max_tokens {
            return Err(CorpusError::InvalidRange { min: min_tokens, max: max_tokens });
        }
        Ok(self.docs.iter().filter(|d| (min_tokens..=max_tokens).contains(&d.token_count)).collect())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let io_err = |source| CorpusError::Io { path: path.to_path_buf(), source };
        let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
        for d in &self.docs {
            let rec = CorpusRecordOut { id: &d.id, text: &d.text, source: &d.source };
            serde_json::to_writer(&mut out, &rec).map_err(|e| io_err(e.into()))?;
            out.write_all(b"\n").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }
}

/// Reads a corpus file. Blank lines are skipped; line numbers in errors are
/// 1-based physical lines.
pub fn ingest_corpus(path: &Path, format: CorpusFormat, tokenizer: TokenizerSpec) -> Result<CorpusHandle, CorpusError> {
    let CorpusFormat::Jsonl = format;
    let file = File::open(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
    read_jsonl(BufReader::new(file), tokenizer).map(Arc::new).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io { path: path.to_path_buf(), source },
        other => other,
    })
}

pub fn read_jsonl<R: BufRead>(reader: R, tokenizer: TokenizerSpec) -> Result<Corpus, CorpusError> {
    let mut corpus = Corpus { docs: Vec::new(), by_id: HashMap::new(), tokenizer };
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| CorpusError::Io { path: PathBuf::new(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Malformed { line: line_no, message: e.to_string() })?;
        corpus.push(rec.id, rec.text, rec.source.unwrap_or_default(), line_no)?;
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ws() -> TokenizerSpec {
        TokenizerSpec::Whitespace
    }

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn ingest_empty_and_basic() {
        let c = read_jsonl("".as_bytes(), ws()).unwrap();
        assert!(c.is_empty());

        let data = "{\"id\":\"a\",\"text\":\"x y\"}\n{\"id\":\"b\",\"text\":\"z\",\"source\":\"web\"}\n\n{\"id\":\"c\",\"text\":\"q\"}\n";
        let c = read_jsonl(data.as_bytes(), ws()).unwrap();
        let ids: Vec<&str> = c.documents().iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(c.get("a").unwrap().token_count, 2);
        assert_eq!(c.get("b").unwrap().source, "web");
    }

    #[test]
    fn ingest_reports_line_of_missing_text() {
        let data = "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"b\"}\n";
        let err = read_jsonl(data.as_bytes(), ws()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn ingest_rejects_duplicates_and_empty_text() {
        let dup = "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n";
        let err = read_jsonl(dup.as_bytes(), ws()).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { ref id, .. } if id == "a"));
        assert!(err.to_string().contains("\"a\""));

        let empty = "{\"id\":\"a\",\"text\":\"\"}\n";
        assert!(matches!(read_jsonl(empty.as_bytes(), ws()), Err(CorpusError::EmptyText { .. })));
    }

    #[test]
    fn chunk_fits_in_one() {
        let text = words(3000);
        let chunks = chunk_text(&text, 4096, &ws()).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, text);
    }

    #[test]
    fn chunk_boundary_single_tokens() {
        let chunks = chunk_text("x y", 1, &ws()).unwrap();
        let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
        // Trailing whitespace belongs to the earlier chunk.
        assert_eq!(texts, ["x ", "y"]);
        assert_eq!(chunks.iter().map(|c| c.text.trim()).collect::<Vec<_>>(), ["x", "y"]);
    }

    #[test]
    fn chunk_rejects_zero_and_handles_empty() {
        assert!(matches!(chunk_text("a", 0, &ws()), Err(CorpusError::InvalidChunkSize(0))));
        assert!(chunk_text("", 5, &ws()).unwrap().is_empty());
        let ws_only = chunk_text("  \n", 5, &ws()).unwrap();
        assert_eq!(ws_only.len(), 1);
        assert_eq!(ws_only[0].token_count, 0);
    }

    #[test]
    fn random_chunk_is_seeded() {
        let c = Corpus::from_records([("a", words(1000), ""), ("b", words(50), "")], ws()).unwrap();
        let x = c.sample_random_chunk(128, 7).unwrap();
        let y = c.sample_random_chunk(128, 7).unwrap();
        assert_eq!(x, y);
        assert!(x.token_count <= 128);
        assert_eq!(ws().count(&x.text), x.token_count);
        let empty = Corpus::from_records(Vec::<(String, String, String)>::new(), ws()).unwrap();
        assert!(matches!(empty.sample_random_chunk(128, 1), Err(CorpusError::EmptyCorpus)));
    }

    #[test]
    fn downsample_edge_cases() {
        let long = Corpus::from_records((0..20).map(|i| (format!("d{i}"), words(2048), "")), ws()).unwrap();
        assert_eq!(long.downsample_short(2048, 0.05, 3).unwrap().len(), 20);

        let short = Corpus::from_records((0..20).map(|i| (format!("d{i}"), words(10), "")), ws()).unwrap();
        assert_eq!(short.downsample_short(2048, 1.0, 3).unwrap().len(), 20);
        assert_eq!(short.downsample_short(2048, 0.0, 3).unwrap().len(), 0);
        assert!(short.downsample_short(2048, 1.5, 3).is_err());
    }

    #[test]
    fn select_by_length_inclusive() {
        let c = Corpus::from_records(
            [("k1", words(1024), ""), ("k2", words(2048), ""), ("k32", words(32768), ""), ("k40", words(40960), "")],
            ws(),
        )
        .unwrap();
        let ids: Vec<&str> = c.select_by_length(2048, 32768).unwrap().iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["k2", "k32"]);
        assert!(c.select_by_length(10, 5).is_err());

        let small = Corpus::from_records((0..5).map(|i| (format!("s{i}"), words(100), "")), ws()).unwrap();
        assert!(small.select_by_length(2048, 32768).unwrap().is_empty());
    }

    #[test]
    fn write_then_read_preserves_documents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let c = Corpus::from_records([("a", "one two", "s"), ("b", "three", "")], ws()).unwrap();
        c.write_jsonl(&path).unwrap();
        let back = ingest_corpus(&path, CorpusFormat::Jsonl, ws()).unwrap();
        assert_eq!(back.documents(), c.documents());
    }
}

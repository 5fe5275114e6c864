//! Exact brute-force cosine index with JSONL persistence.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embed::{dot, embed_batch, EmbedConfig, EmbeddingBackend, EmbeddingVector};
use super::{Hit, RetrievalError, RetrievalResult};
use crate::corpus::Corpus;

#[derive(Debug, Clone)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    positions: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct IndexRecord {
    id: String,
    vector: Vec<f32>,
}

/// Orders by score descending, then id ascending.
pub(crate) fn rank_order(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

impl VectorIndex {
    pub fn new(dim: usize) -> Self {
        Self { dim, ids: Vec::new(), data: Vec::new(), positions: HashMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.positions.contains_key(id)
    }

    pub fn vector(&self, id: &str) -> Option<&[f32]> {
        self.positions.get(id).map(|&i| self.row(i))
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: &EmbeddingVector) -> Result<(), RetrievalError> {
        let id = id.into();
        if vector.dim() != self.dim {
            return Err(RetrievalError::DimMismatch { expected: self.dim, got: vector.dim() });
        }
        if self.positions.contains_key(&id) {
            return Err(RetrievalError::DuplicateId(id));
        }
        self.positions.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector.values());
        Ok(())
    }

    /// Embeds every corpus document and indexes it under its id.
    pub fn build(corpus: &Corpus, backend: &dyn EmbeddingBackend, cfg: &EmbedConfig) -> Result<Self, RetrievalError> {
        let texts: Vec<String> = corpus.documents().iter().map(|d| d.text.clone()).collect();
        let vectors = embed_batch(&texts, backend, cfg)?;
        let dim = vectors.first().map_or(0, EmbeddingVector::dim);
        let mut index = VectorIndex::new(dim);
        for (doc, v) in corpus.documents().iter().zip(&vectors) {
            index.insert(doc.id.clone(), v)?;
        }
        Ok(index)
    }

    /// The `k` entries most cosine-similar to `query`, ties by ascending id.
    pub fn query_top_k(&self, query: &EmbeddingVector, k: usize) -> Result<RetrievalResult, RetrievalError> {
        if query.dim() != self.dim {
            return Err(RetrievalError::DimMismatch { expected: self.dim, got: query.dim() });
        }
        if k < 1 {
            return Err(RetrievalError::InvalidK);
        }
        let q = query.values();
        let mut scored: Vec<(f64, usize)> = (0..self.len()).map(|i| (dot(q, self.row(i)), i)).collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| rank_order((a.0, &self.ids[a.1]), (b.0, &self.ids[b.1]));
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(RetrievalResult {
            hits: scored.into_iter().map(|(score, i)| Hit { id: self.ids[i].clone(), score }).collect(),
        })
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<(), RetrievalError> {
        let io = |e: std::io::Error| RetrievalError::Io(format!("{}: {e}", path.display()));
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        for (i, id) in self.ids.iter().enumerate() {
            let rec = IndexRecord { id: id.clone(), vector: self.row(i).to_vec() };
            serde_json::to_writer(&mut out, &rec).map_err(|e| io(e.into()))?;
            out.write_all(b"\n").map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn load_jsonl(path: &Path) -> Result<Self, RetrievalError> {
        let io = |e: std::io::Error| RetrievalError::Io(format!("{}: {e}", path.display()));
        let reader = BufReader::new(File::open(path).map_err(io)?);
        let mut index: Option<VectorIndex> = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: IndexRecord = serde_json::from_str(&line)
                .map_err(|e| RetrievalError::Parse { line: i + 1, message: e.to_string() })?;
            let v = EmbeddingVector::from_stored(rec.vector)?;
            index.get_or_insert_with(|| VectorIndex::new(v.dim())).insert(rec.id, &v)?;
        }
        Ok(index.unwrap_or_else(|| VectorIndex::new(0)))
    }
}

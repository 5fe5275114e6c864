//! Dense retrieval: embedding, exact top-k search, reciprocal rank fusion
//! of multi-query results, and embedding-based de-duplication.

mod dedup;
mod embed;
mod fusion;
mod index;

pub use dedup::{dedup_by_embedding, dedup_vectors, DEFAULT_DEDUP_THRESHOLD};
pub use embed::{
    embed_batch, EmbedConfig, EmbeddingBackend, EmbeddingVector, HashEmbedder, HttpEmbedder, HttpEmbedderConfig,
    LookupEmbedder,
};
pub use fusion::{rrf_merge, DEFAULT_K_RRF};
pub use index::VectorIndex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synthesis::InstructionRecord;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("dimension mismatch: index has {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("duplicate id {0:?} in index")]
    DuplicateId(String),
    #[error("id {0:?} appears twice in one ranking")]
    DuplicateInRanking(String),
    #[error("embedding failed for batches {batches:?}: {message}")]
    EmbeddingFailed { batches: Vec<usize>, message: String },
    #[error("invalid vector: {0}")]
    InvalidVector(String),
    #[error("threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("instruction has no search queries")]
    NoQueries,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Io(String),
    #[error("backend setup: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

/// Ranked hits: scores non-increasing, ids distinct.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub hits: Vec<Hit>,
}

impl RetrievalResult {
    pub fn ids(&self) -> Vec<&str> {
        self.hits.iter().map(|h| h.id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

/// Multi-query retrieval: embeds every query, takes `per_query_k` hits for
/// each, and fuses the rankings with RRF (k = 60) down to `out_k`.
pub fn retrieve_for_queries(
    queries: &[String],
    index: &VectorIndex,
    backend: &dyn EmbeddingBackend,
    cfg: &EmbedConfig,
    per_query_k: usize,
    out_k: usize,
) -> Result<RetrievalResult, RetrievalError> {
    if queries.is_empty() {
        return Err(RetrievalError::NoQueries);
    }
    let vectors = embed_batch(queries, backend, cfg)?;
    let rankings = vectors
        .iter()
        .map(|q| Ok(index.query_top_k(q, per_query_k)?.hits.into_iter().map(|h| h.id).collect()))
        .collect::<Result<Vec<Vec<String>>, RetrievalError>>()?;
    rrf_merge(&rankings, DEFAULT_K_RRF, out_k)
}

pub fn retrieve_for_instruction(
    rec: &InstructionRecord,
    index: &VectorIndex,
    backend: &dyn EmbeddingBackend,
    cfg: &EmbedConfig,
    per_query_k: usize,
    out_k: usize,
) -> Result<RetrievalResult, RetrievalError> {
    retrieve_for_queries(&rec.search_queries, index, backend, cfg, per_query_k, out_k)
}

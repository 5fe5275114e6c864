//! Near-duplicate removal by embedding cosine similarity.

use super::embed::{embed_batch, EmbedConfig, EmbeddingBackend, EmbeddingVector};
use super::RetrievalError;

pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.85;

fn check_threshold(threshold: f64) -> Result<(), RetrievalError> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(RetrievalError::InvalidThreshold(threshold))
    }
}

/// Greedy first-seen-leader clustering: an item is dropped iff its cosine
/// similarity to some earlier kept item is at least `threshold`. Returns the
/// kept positions in input order.
pub fn dedup_vectors(vectors: &[EmbeddingVector], threshold: f64) -> Result<Vec<usize>, RetrievalError> {
    check_threshold(threshold)?;
    let mut kept: Vec<usize> = Vec::new();
    for (i, v) in vectors.iter().enumerate() {
        if kept.iter().all(|&j| vectors[j].cosine(v) < threshold) {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// Embeds `(id, text)` items and returns the ids that survive
/// [`dedup_vectors`].
pub fn dedup_by_embedding(
    items: &[(String, String)],
    backend: &dyn EmbeddingBackend,
    cfg: &EmbedConfig,
    threshold: f64,
) -> Result<Vec<String>, RetrievalError> {
    check_threshold(threshold)?;
    let texts: Vec<String> = items.iter().map(|(_, t)| t.clone()).collect();
    let vectors = embed_batch(&texts, backend, cfg)?;
    Ok(dedup_vectors(&vectors, threshold)?.into_iter().map(|i| items[i].0.clone()).collect())
}

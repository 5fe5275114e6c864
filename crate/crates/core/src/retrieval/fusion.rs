//! Reciprocal rank fusion: score(id) = Σ 1/(k + rank), rank 1-based.

use std::collections::{HashMap, HashSet};

use super::index::rank_order;
use super::{Hit, RetrievalError, RetrievalResult};

pub const DEFAULT_K_RRF: u32 = 60;

/// Fuses ranked id lists. Output is sorted by fused score descending with
/// ties broken by ascending id, truncated to `out_k`.
///
/// Each id's contributions are summed in ascending-rank order, so the fused
/// scores (and therefore the output) do not depend on the order of
/// `rankings`.
pub fn rrf_merge<S: AsRef<str>>(
    rankings: &[Vec<S>],
    k_rrf: u32,
    out_k: usize,
) -> Result<RetrievalResult, RetrievalError> {
    let mut ranks: HashMap<&str, Vec<usize>> = HashMap::new();
    for ranking in rankings {
        let mut seen = HashSet::with_capacity(ranking.len());
        for (pos, id) in ranking.iter().enumerate() {
            let id = id.as_ref();
            if !seen.insert(id) {
                return Err(RetrievalError::DuplicateInRanking(id.to_owned()));
            }
            ranks.entry(id).or_default().push(pos + 1);
        }
    }
    let mut fused: Vec<(f64, &str)> = ranks
        .into_iter()
        .map(|(id, mut rs)| {
            rs.sort_unstable();
            let score = rs.iter().map(|&r| 1.0 / (f64::from(k_rrf) + r as f64)).sum();
            (score, id)
        })
        .collect();
    fused.sort_by(|a, b| rank_order(*a, *b));
    fused.truncate(out_k);
    Ok(RetrievalResult { hits: fused.into_iter().map(|(score, id)| Hit { id: id.to_owned(), score }).collect() })
}

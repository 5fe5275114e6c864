use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::corpus::Corpus;
use crate::retrieval::RetrievalResult;
use crate::seed;

pub const MAX_CONTEXT_DOCS: usize = 100;

/// The documents placed in front of a long-input sample's instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextAssembly {
    /// Ids in context order.
    pub doc_ids: Vec<String>,
    pub texts: Vec<String>,
    /// Relevant ids that made it into the context, in rank order.
    pub relevant_ids: Vec<String>,
    pub distractor_ids: Vec<String>,
    /// True when `n_docs` was smaller than the relevant set.
    pub relevant_truncated: bool,
    pub warnings: Vec<String>,
}

/// Uniform draw of the context size in `[min, max]`, clamped to
/// `[1, MAX_CONTEXT_DOCS]`.
pub fn sample_n_docs(seed: u64, min: usize, max: usize) -> usize {
    let lo = min.clamp(1, MAX_CONTEXT_DOCS);
    let hi = max.clamp(lo, MAX_CONTEXT_DOCS);
    seed::rng(seed::derive_named(seed, "n-docs")).gen_range(lo..=hi)
}

/// Builds the context list: the relevant documents (or the top `n_docs` of
/// them), padded with distractors drawn uniformly without replacement from
/// the rest of the corpus, then shuffled.
pub fn assemble_long_input(
    relevant: &RetrievalResult,
    corpus: &Corpus,
    n_docs: usize,
    seed: u64,
) -> Result<ContextAssembly, SynthError> {
    if !(1..=MAX_CONTEXT_DOCS).contains(&n_docs) {
        return Err(SynthError::InvalidDocCount(n_docs));
    }
    for id in relevant.ids() {
        if corpus.get(id).is_none() {
            return Err(SynthError::UnknownDocument(id.to_owned()));
        }
    }
    let relevant_truncated = n_docs < relevant.len();
    let relevant_ids: Vec<String> = relevant.ids().into_iter().take(n_docs).map(str::to_owned).collect();

    let mut rng = seed::rng(seed::derive_named(seed, "assemble"));
    let mut warnings = Vec::new();
    let mut distractor_ids = Vec::new();
    let wanted = n_docs.saturating_sub(relevant_ids.len());
    if wanted > 0 {
        let exclude: HashSet<&str> = relevant.ids().into_iter().collect();
        let pool: Vec<&str> =
            corpus.documents().iter().map(|d| d.id.as_str()).filter(|id| !exclude.contains(id)).collect();
        if pool.len() < wanted {
            warnings.push(format!(
                "corpus has only {} non-relevant documents, {} distractors requested; using all of them",
                pool.len(),
                wanted
            ));
            log::warn!("{}", warnings.last().expect("just pushed"));
        }
        let take = wanted.min(pool.len());
        distractor_ids =
            rand::seq::index::sample(&mut rng, pool.len(), take).into_iter().map(|i| pool[i].to_owned()).collect();
    }

    let mut doc_ids: Vec<String> = relevant_ids.iter().chain(&distractor_ids).cloned().collect();
    doc_ids.shuffle(&mut rng);
    let texts = doc_ids.iter().map(|id| corpus.get(id).expect("checked above").text.clone()).collect();
    Ok(ContextAssembly { doc_ids, texts, relevant_ids, distractor_ids, relevant_truncated, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TokenizerSpec;
    use crate::retrieval::Hit;

    fn corpus(n: usize) -> Corpus {
        let recs: Vec<(String, String, String)> =
            (0..n).map(|i| (format!("d{i:03}"), format!("text of document {i}"), String::new())).collect();
        Corpus::from_records(recs, TokenizerSpec::Whitespace).unwrap()
    }

    fn hits(ids: &[&str]) -> RetrievalResult {
        RetrievalResult { hits: ids.iter().map(|id| Hit { id: id.to_string(), score: 0.0 }).collect() }
    }

    const REL: [&str; 5] = ["d003", "d010", "d042", "d007", "d099"];

    #[test]
    fn exact_relevant_count_is_a_shuffle() {
        let a = assemble_long_input(&hits(&REL), &corpus(200), 5, 1).unwrap();
        let mut got = a.doc_ids.clone();
        got.sort();
        let mut want: Vec<String> = REL.iter().map(|s| s.to_string()).collect();
        want.sort();
        assert_eq!(got, want);
        assert!(a.distractor_ids.is_empty());
        assert!(!a.relevant_truncated);
        assert_eq!(a.texts[0], corpus(200).get(&a.doc_ids[0]).unwrap().text);
    }

    #[test]
    fn one_doc_keeps_rank_one() {
        let a = assemble_long_input(&hits(&REL), &corpus(200), 1, 1).unwrap();
        assert_eq!(a.doc_ids, ["d003"]);
        assert!(a.relevant_truncated);
    }

    #[test]
    fn hundred_docs_get_distinct_distractors() {
        let a = assemble_long_input(&hits(&REL), &corpus(200), 100, 9).unwrap();
        assert_eq!(a.doc_ids.len(), 100);
        let distractors: HashSet<&String> = a.distractor_ids.iter().collect();
        assert_eq!(distractors.len(), 95);
        assert!(REL.iter().all(|r| !distractors.contains(&r.to_string())));
        let all: HashSet<&String> = a.doc_ids.iter().collect();
        assert_eq!(all.len(), 100);
    }

    #[test]
    fn small_corpus_warns() {
        let a = assemble_long_input(&hits(&["d001"]), &corpus(10), 50, 2).unwrap();
        assert_eq!(a.doc_ids.len(), 10);
        assert_eq!(a.warnings.len(), 1);
    }

    #[test]
    fn bad_inputs() {
        let c = corpus(10);
        assert!(matches!(assemble_long_input(&hits(&REL), &c, 0, 0), Err(SynthError::InvalidDocCount(0))));
        assert!(matches!(assemble_long_input(&hits(&REL), &c, 101, 0), Err(SynthError::InvalidDocCount(101))));
        assert!(matches!(assemble_long_input(&hits(&["zz"]), &c, 3, 0), Err(SynthError::UnknownDocument(_))));
    }

    #[test]
    fn n_docs_draws_cover_range() {
        let draws: Vec<usize> = (0..2000).map(|s| sample_n_docs(s, 1, 100)).collect();
        assert!(draws.iter().all(|&n| (1..=100).contains(&n)));
        assert!(draws.contains(&1) && draws.contains(&100));
        assert_eq!(sample_n_docs(3, 7, 7), 7);
        assert!((0..50).all(|s| sample_n_docs(s, 0, 500) <= MAX_CONTEXT_DOCS));
    }
}

//! Deterministic fixtures shared by the benchmarks.

use longweave_core::mixpack::{Category, MixSample, PackInput, Role, Turn};
use longweave_core::retrieval::{EmbeddingVector, VectorIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn text(tokens: usize) -> String {
    const WORDS: [&str; 8] = ["river", "garden", "winter", "engine", "letter", "market", "silver", "window."];
    (0..tokens).map(|i| WORDS[i % WORDS.len()]).collect::<Vec<_>>().join(" ")
}

pub fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingVector {
    EmbeddingVector::new((0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).expect("non-zero")
}

pub fn index(n: usize, dim: usize, seed: u64) -> VectorIndex {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut index = VectorIndex::new(dim);
    for i in 0..n {
        index.insert(format!("doc{i:06}"), &random_vector(&mut rng, dim)).expect("unique ids");
    }
    index
}

pub fn rankings(lists: usize, len: usize, pool: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..lists)
        .map(|_| rand::seq::index::sample(&mut rng, pool, len).into_iter().map(|i| format!("doc{i}")).collect())
        .collect()
}

/// Mostly short chat samples with the occasional long-context one.
pub fn pack_stream(n: usize, seed: u64) -> Vec<PackInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let long = rng.gen_bool(0.1);
            let prompt = if long { rng.gen_range(8_000..60_000) } else { rng.gen_range(50..2_000) };
            let sample = MixSample {
                id: format!("s{i}"),
                source: "bench".into(),
                category: if long { Category::Long } else { Category::Short },
                turns: vec![
                    Turn { role: Role::User, text: text(prompt) },
                    Turn { role: Role::Assistant, text: text(rng.gen_range(20..800)) },
                ],
            };
            let segments = longweave_core::mixpack::make_loss_segments(&sample, sample.category).expect("has response");
            PackInput { sample_id: sample.id, segments }
        })
        .collect()
}

//! Property tests for the invariants each module promises.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use longweave_core::corpus::{chunk_text, Document, TokenizerSpec};
use longweave_core::evalbench::{fit_length_curve, needle_recall};
use longweave_core::llm::mock::FnBackend;
use longweave_core::llm::LlmGateway;
use longweave_core::mixpack::{make_loss_segments, pack_sequences, Category, MixSample, PackInput, Role, Turn};
use longweave_core::retrieval::{dedup_vectors, rrf_merge, EmbeddingVector, VectorIndex};
use longweave_core::synthesis::{recursive_qfs, QfsConfig};
use longweave_core::trainplan::{pose_position_ids, progressive_schedule, ScheduleParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn vocab_tok() -> TokenizerSpec {
    TokenizerSpec::from_vocab(["the", "th", "e", " the", "ing", " ", "an", "and", " and", "\n", "ab", "abc"])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn chunks_concatenate_to_input(text in "[a-c \\n.é]{0,300}", max in 1usize..20, vocab in any::<bool>()) {
        let tok = if vocab { vocab_tok() } else { TokenizerSpec::Whitespace };
        let chunks = chunk_text(&text, max, &tok).unwrap();
        let joined: String = chunks.iter().map(|c| c.text.as_str()).collect();
        prop_assert_eq!(&joined, &text);
        prop_assert!(chunks.iter().all(|c| c.token_count <= max));
        prop_assert_eq!(chunks.iter().map(|c| c.token_count).sum::<usize>(), tok.count(&text));
        for c in &chunks {
            prop_assert_eq!(tok.count(&c.text), c.token_count);
        }
    }

    #[test]
    fn truncate_and_tail_respect_budget(text in "[a-c \\n]{0,200}", n in 0usize..40, vocab in any::<bool>()) {
        let tok = if vocab { vocab_tok() } else { TokenizerSpec::Whitespace };
        let head = tok.truncate(&text, n);
        let tail = tok.tail(&text, n);
        prop_assert!(text.starts_with(head) && text.ends_with(tail));
        prop_assert_eq!(tok.count(head), n.min(tok.count(&text)));
        prop_assert_eq!(tok.count(tail), n.min(tok.count(&text)));
    }

    #[test]
    fn top_k_equals_full_sort(seed in any::<u64>(), n in 1usize..120, dim in 2usize..12, k in 1usize..20, dupes in 0usize..5) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut index = VectorIndex::new(dim);
        let mut raw: Vec<Vec<f32>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).collect();
        // Exact duplicates exercise the id tie-break.
        for d in 0..dupes.min(n) {
            raw.push(raw[d].clone());
        }
        for (i, v) in raw.iter().enumerate() {
            if let Ok(e) = EmbeddingVector::new(v.clone()) {
                index.insert(format!("id{i:04}"), &e).unwrap();
            }
        }
        prop_assume!(!index.is_empty());
        let q = EmbeddingVector::new((0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap();
        let got: Vec<String> = index.query_top_k(&q, k).unwrap().hits.into_iter().map(|h| h.id).collect();
        let mut all: Vec<(f64, String)> = index
            .ids()
            .iter()
            .map(|id| {
                let v = index.vector(id).unwrap();
                (v.iter().zip(q.values()).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum(), id.clone())
            })
            .collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        let want: Vec<String> = all.into_iter().take(k).map(|(_, id)| id).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn rrf_ignores_ranking_order(seed in any::<u64>(), lists in 1usize..6, pool in 1usize..30) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut rankings: Vec<Vec<String>> = (0..lists)
            .map(|_| {
                let len = rng.gen_range(1..=pool);
                rand::seq::index::sample(&mut rng, pool, len).into_iter().map(|i| format!("d{i}")).collect()
            })
            .collect();
        let a = rrf_merge(&rankings, 60, 10).unwrap();
        rankings.reverse();
        let b = rrf_merge(&rankings, 60, 10).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.hits.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn dedup_is_idempotent_and_covering(seed in any::<u64>(), n in 0usize..40, threshold in 0.5f64..1.0) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let base: Vec<Vec<f32>> = (0..4).map(|_| (0..6).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).collect();
        let vs: Vec<EmbeddingVector> = (0..n)
            .map(|_| {
                let b = &base[rng.gen_range(0..base.len())];
                EmbeddingVector::new(b.iter().map(|x| x + rng.gen_range(-0.3f32..0.3)).collect()).unwrap()
            })
            .collect();
        let kept = dedup_vectors(&vs, threshold).unwrap();
        let kept_vs: Vec<EmbeddingVector> = kept.iter().map(|&i| vs[i].clone()).collect();
        prop_assert_eq!(dedup_vectors(&kept_vs, threshold).unwrap(), (0..kept.len()).collect::<Vec<_>>());
        // Every dropped item is near some earlier kept one.
        for i in 0..n {
            if !kept.contains(&i) {
                prop_assert!(kept.iter().any(|&j| j < i && vs[j].cosine(&vs[i]) >= threshold));
            }
        }
    }

    #[test]
    fn packing_invariants(seed in any::<u64>(), n in 0usize..60, max_len in 1usize..200) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let tok = TokenizerSpec::Whitespace;
        let samples: Vec<MixSample> = (0..n)
            .map(|i| {
                let turns = (0..rng.gen_range(1..5))
                    .map(|t| Turn {
                        role: if t % 2 == 0 { Role::User } else { Role::Assistant },
                        text: vec!["w"; rng.gen_range(1..80)].join(" "),
                    })
                    .chain(std::iter::once(Turn { role: Role::Assistant, text: "ok".into() }))
                    .collect();
                let category = if rng.gen_bool(0.5) { Category::Long } else { Category::Short };
                MixSample { id: format!("s{i}"), source: "src".into(), category, turns }
            })
            .collect();
        let inputs: Vec<PackInput> = samples
            .iter()
            .map(|s| PackInput { sample_id: s.id.clone(), segments: make_loss_segments(s, s.category).unwrap() })
            .collect();
        let seqs = pack_sequences(&inputs, max_len, &tok).unwrap();
        let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
        let mut flagged = 0;
        let mut dropped = 0;
        for s in &seqs {
            prop_assert!(s.total_tokens <= max_len);
            prop_assert_eq!(s.total_tokens, s.segments.iter().map(|g| tok.count(&g.text)).sum::<usize>());
            let mut here: Vec<&str> = s.segments.iter().map(|g| g.sample_id.as_str()).collect();
            here.dedup();
            for id in here {
                *ids.entry(id).or_default() += 1;
            }
            flagged += s.segments.iter().filter(|g| g.loss).map(|g| tok.count(&g.text)).sum::<usize>();
            dropped += s.truncated.iter().map(|t| t.dropped_loss_tokens).sum::<usize>();
        }
        prop_assert_eq!(ids.len(), n);
        prop_assert!(ids.values().all(|&c| c == 1));
        let expected: usize = inputs.iter().flat_map(|p| &p.segments).filter(|g| g.loss).map(|g| tok.count(&g.text)).sum();
        prop_assert_eq!(flagged + dropped, expected);
        for t in seqs.iter().flat_map(|s| &s.truncated) {
            prop_assert!(t.original_tokens > max_len && t.kept_tokens <= max_len);
        }
    }

    #[test]
    fn pose_plans_are_valid(train in 0usize..2000, extra in 0usize..5000, seed in any::<u64>()) {
        let plan = pose_position_ids(train, train + extra, seed).unwrap();
        prop_assert!(plan.is_valid());
        prop_assert_eq!(plan.positions.len(), train);
        if let Some(&last) = plan.positions.last() {
            prop_assert!(last < (train + extra) as u64);
        }
    }

    #[test]
    fn schedule_ratios(start in 1u64..1_000_000, theta in 1.0f64..1e7, stages in 1usize..8, cap in 1u64..u64::MAX / 2) {
        let p = ScheduleParams { start_max_position: start, start_theta: theta, n_stages: stages, hardware_cap: cap, ..ScheduleParams::default() };
        let s = progressive_schedule(&p).unwrap();
        for w in s.windows(2) {
            prop_assert_eq!(w[1].max_position, 2 * w[0].max_position);
            prop_assert_eq!(w[1].rope_theta / w[0].rope_theta, 4.0);
        }
        for st in &s {
            prop_assert!(st.train_seq_len <= st.max_position);
            prop_assert_eq!(st.pose, st.train_seq_len < st.max_position);
        }
    }

    #[test]
    fn recall_is_monotone(needle in "[a-e ]{1,40}", out in "[a-e ]{0,60}", more in "[a-e ]{0,30}") {
        let base = needle_recall(&needle, &out);
        let extended = needle_recall(&needle, &format!("{out} {more}"));
        prop_assert!(extended >= base);
        prop_assert!((0.0..=1.0).contains(&base));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn qfs_shrinks_every_nonfinal_round(seed in any::<u64>(), n_docs in 1usize..8, chunk in 32usize..256, budget in 512usize..1500) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let tok = TokenizerSpec::Whitespace;
        let docs: Vec<Document> = (0..n_docs)
            .map(|i| Document::new(format!("d{i}"), vec!["x"; rng.gen_range(1..3000)].join(" "), "", &tok))
            .collect();
        let max_words = rng.gen_range(1..chunk + 40);
        let gw = LlmGateway::offline(Arc::new(FnBackend::new("sized", move |r| {
            let words = 1 + (longweave_core::seed::fnv1a64(r.prompt.as_bytes()) as usize % max_words);
            Ok(vec!["s"; words].join(" "))
        })));
        let cfg = QfsConfig { chunk_tokens: chunk, budget_tokens: budget, min_rounds: 1, ..QfsConfig::default() };
        let out = recursive_qfs(&docs, "q", &gw, &tok, &cfg).unwrap();
        let mut before: usize = docs.iter().map(|d| d.token_count).sum();
        for (i, r) in out.rounds.iter().enumerate() {
            let last = i + 1 == out.rounds.len();
            if !last {
                prop_assert!(r.total_output_tokens < before);
            }
            prop_assert_eq!(r.inputs.len(), r.outputs.len());
            before = r.total_output_tokens;
        }
        prop_assert!(out.context_tokens <= budget);
    }

    #[test]
    fn fit_beats_random_probes(seed in any::<u64>()) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<(f64, f64)> = (0..rng.gen_range(3..40))
            .map(|_| (rng.gen_range(1.0..50_000.0), rng.gen_range(1.0..20_000.0)))
            .collect();
        let fit = fit_length_curve(&pts).unwrap();
        let min_x = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let max_x = pts.iter().map(|p| p.0).fold(0.0, f64::max);
        let mse = |a: f64, b: f64, c: f64| {
            pts.iter().map(|&(x, y)| (y.ln() - a * (x + b).ln() - c).powi(2)).sum::<f64>() / pts.len() as f64
        };
        for _ in 0..1000 {
            let a = rng.gen_range(-2.0..2.0);
            let b = rng.gen_range(-min_x * 0.999..10.0 * max_x);
            let c = rng.gen_range(-5.0..15.0);
            prop_assert!(fit.residual <= mse(a, b, c) + 1e-12);
        }
        prop_assert!(fit.b > -min_x && fit.b <= 10.0 * max_x + 1e-6);
    }
}

#[test]
fn all_ones_mixture_is_a_pure_shuffle() {
    use longweave_core::mixpack::{build_mixture, MixtureSpec, SourceSpec};
    let dir = tempfile::tempdir().unwrap();
    let mut sources = Vec::new();
    let mut expected = HashMap::new();
    for (s, n) in [("a", 30), ("b", 45)] {
        let path = dir.path().join(format!("{s}.jsonl"));
        let lines: Vec<String> =
            (0..n).map(|i| serde_json::json!({"id": format!("{s}{i}"), "text": format!("t{i}")}).to_string()).collect();
        std::fs::write(&path, lines.join("\n")).unwrap();
        for i in 0..n {
            expected.insert(format!("{s}{i}"), ());
        }
        sources.push(SourceSpec { name: s.into(), path, sample_weight: 1.0, category: Category::Long });
    }
    let mix = build_mixture(&MixtureSpec { sources }, 17).unwrap();
    assert_eq!(mix.len(), expected.len());
    assert!(mix.iter().all(|s| expected.contains_key(&s.id)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn config_round_trips(
        seed in 0u64..=i64::MAX as u64,
        keep_p in 0.0f64..=1.0,
        top_k in 1usize..50,
        n_docs in (1usize..=100, 0usize..100),
        dedup in 0.01f64..=1.0,
        budget in 512usize..100_000,
        max_len in 1usize..10_000_000,
        weight in 0.0f64..=1.0,
    ) {
        use longweave_core::config::RunConfig;
        let mut cfg = RunConfig { seed, ..RunConfig::default() };
        cfg.corpus.keep_p = keep_p;
        cfg.synthesis.top_k = top_k;
        cfg.synthesis.n_docs_min = n_docs.0;
        cfg.synthesis.n_docs_max = (n_docs.0 + n_docs.1).min(100);
        cfg.synthesis.dedup_threshold = dedup;
        cfg.synthesis.qfs.budget_tokens = budget;
        cfg.packing.max_len = max_len;
        cfg.mixture.sources[0].sample_weight = weight;
        let text = cfg.to_toml_string();
        prop_assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }
}

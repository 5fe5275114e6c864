use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use longweave_bench::{index, pack_stream, random_vector, rankings, text};
use longweave_core::corpus::{chunk_text, TokenizerSpec};
use longweave_core::evalbench::needle_recall;
use longweave_core::mixpack::pack_sequences;
use longweave_core::retrieval::rrf_merge;
use rand::SeedableRng;
use std::hint::black_box;

fn chunking(c: &mut Criterion) {
    let tok = TokenizerSpec::Whitespace;
    let mut g = c.benchmark_group("chunk_text");
    for tokens in [16_384, 131_072] {
        let t = text(tokens);
        g.throughput(Throughput::Elements(tokens as u64));
        g.bench_with_input(BenchmarkId::from_parameter(tokens), &t, |b, t| {
            b.iter(|| chunk_text(black_box(t), 4096, &tok).unwrap())
        });
    }
    g.finish();
}

fn top_k(c: &mut Criterion) {
    let mut g = c.benchmark_group("query_top_k");
    for n in [1_000, 20_000] {
        let idx = index(n, 256, 1);
        let q = random_vector(&mut rand_chacha::ChaCha8Rng::seed_from_u64(2), 256);
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::from_parameter(n), &idx, |b, idx| {
            b.iter(|| idx.query_top_k(black_box(&q), 5).unwrap())
        });
    }
    g.finish();
}

fn rrf(c: &mut Criterion) {
    let lists = rankings(8, 50, 500, 3);
    c.bench_function("rrf_merge/8x50", |b| b.iter(|| rrf_merge(black_box(&lists), 60, 5).unwrap()));
}

fn packing(c: &mut Criterion) {
    let stream = pack_stream(500, 4);
    let tok = TokenizerSpec::Whitespace;
    c.bench_function("pack_sequences/500", |b| b.iter(|| pack_sequences(black_box(&stream), 262_144, &tok).unwrap()));
}

fn recall(c: &mut Criterion) {
    let needle = "The best thing to do in San Francisco is eat a sandwich and sit in Dolores Park on a sunny day.";
    let output = format!("{} {needle} {}", text(200), text(200));
    c.bench_function("needle_recall", |b| b.iter(|| needle_recall(black_box(needle), black_box(&output))));
}

criterion_group!(benches, chunking, top_k, rrf, packing, recall);
criterion_main!(benches);

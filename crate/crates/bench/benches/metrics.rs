use std::collections::BTreeMap;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use simeval_bench::{real_and_sim, uniform};
use simeval_core::embeddings::{embed_sessions, EmbedLayout};
use simeval_core::realism::{frechet_distance, ks_statistic, mmd2, normalized_levenshtein, wasserstein1};
use simeval_core::reliability::{kendall_tau, rate_aggregate, tau_ap, RateConfig};

fn marginals(c: &mut Criterion) {
    let mut g = c.benchmark_group("marginals");
    for n in [1_000, 10_000, 100_000] {
        let a = uniform(n, 1);
        let b = uniform(n, 2);
        g.bench_with_input(BenchmarkId::new("w1", n), &n, |bch, _| bch.iter(|| wasserstein1(black_box(&a), black_box(&b))));
        g.bench_with_input(BenchmarkId::new("ks", n), &n, |bch, _| bch.iter(|| ks_statistic(black_box(&a), black_box(&b))));
    }
    g.finish();
}

fn embedding_distances(c: &mut Criterion) {
    let mut g = c.benchmark_group("embedding");
    g.sample_size(10);
    for n in [200, 1_000] {
        let (real, sim) = real_and_sim(n, 3);
        let x = embed_sessions(&real.sessions, &EmbedLayout::ActSeqV1).unwrap();
        let y = embed_sessions(&sim.sessions, &EmbedLayout::ActSeqV1).unwrap();
        g.bench_with_input(BenchmarkId::new("mmd2_unbiased", n), &n, |b, _| b.iter(|| mmd2(black_box(&x), black_box(&y), true)));
        g.bench_with_input(BenchmarkId::new("frechet", n), &n, |b, _| b.iter(|| frechet_distance(black_box(&x), black_box(&y))));
        g.bench_with_input(BenchmarkId::new("nlev", n), &n, |b, _| {
            b.iter(|| normalized_levenshtein(black_box(&real.sessions), black_box(&sim.sessions)))
        });
    }
    g.finish();
}

fn rankings(c: &mut Criterion) {
    let truth = uniform(50, 4);
    let other = uniform(50, 5);
    c.bench_function("kendall_tau_50", |b| b.iter(|| kendall_tau(black_box(&truth), black_box(&other))));
    c.bench_function("tau_ap_50", |b| b.iter(|| tau_ap(black_box(&truth), black_box(&other))));

    let systems: Vec<String> = (0..50).map(|i| format!("s{i}")).collect();
    let panel: BTreeMap<String, Vec<f64>> = (0..8).map(|t| (format!("t{t}"), uniform(50, 10 + t))).collect();
    c.bench_function("rate_8x50", |b| {
        b.iter(|| rate_aggregate(black_box(&panel), &systems, &RateConfig::default()))
    });
}

criterion_group!(benches, marginals, embedding_distances, rankings);
criterion_main!(benches);

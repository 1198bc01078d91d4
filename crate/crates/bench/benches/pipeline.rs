use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use simeval_bench::{real_and_sim, real_corpus, testbed};
use simeval_core::embeddings::EmbedLayout;
use simeval_core::realism::{run_b1, B1Config};
use simeval_core::simulators::{simulate_corpus, ClickSimulator, SimulatorConfig, SimulatorKind};
use simeval_core::testbed::click_derived_ndcg;

fn simulate(c: &mut Criterion) {
    let (real, qrels) = real_corpus(1_000, 7);
    let mut g = c.benchmark_group("simulate_1000");
    g.sample_size(20);
    for kind in [SimulatorKind::Pbm, SimulatorKind::Dbn, SimulatorKind::Heuristic, SimulatorKind::Llm] {
        let cfg = SimulatorConfig::of_kind(kind);
        g.bench_function(kind.default_id(), |b| b.iter(|| simulate_corpus(black_box(&real), &qrels, &cfg)));
    }
    g.finish();
}

fn b1_cell(c: &mut Criterion) {
    let (real, sim) = real_and_sim(400, 8);
    let cfg = B1Config {
        resamples: 100,
        ..B1Config::default()
    };
    let mut g = c.benchmark_group("b1");
    g.sample_size(10);
    g.bench_function("cell_400_sessions", |b| {
        b.iter(|| run_b1(black_box(&real.sessions), black_box(&sim.sessions), &EmbedLayout::ActSeqV1, &cfg))
    });
    g.finish();
}

fn click_replay(c: &mut Criterion) {
    let tb = testbed(50, 9);
    let tester = ClickSimulator::new(SimulatorConfig::of_kind(SimulatorKind::Dbn))
        .unwrap()
        .for_testbed();
    let run = &tb.systems[0];
    let mut g = c.benchmark_group("testbed");
    g.sample_size(20);
    g.bench_function("click_ndcg_50q_8replays", |b| {
        b.iter(|| click_derived_ndcg(black_box(&tb), run, &tester, 8, 9, 10))
    });
    g.finish();
}

criterion_group!(benches, simulate, b1_cell, click_replay);
criterion_main!(benches);

//! Shared fixtures for the criterion benches.

use simeval_core::ingest::{generate_synthetic_dataset, Qrels, SynthRelevance, SynthSpec};
use simeval_core::schema::SessionCorpus;
use simeval_core::simulators::{simulate_corpus, SimulatorConfig, SimulatorKind};
use simeval_core::testbed::{build_testbed, synthetic_qrels, SyntheticQrelsSpec, Testbed, TestbedConfig};

pub fn synth_spec(n_sessions: usize) -> SynthSpec {
    SynthSpec {
        dataset_id: "bench".into(),
        n_sessions,
        relevance: Some(SynthRelevance {
            p_relevant_by_rank: vec![0.7, 0.6, 0.5, 0.4, 0.35, 0.3, 0.25, 0.2, 0.15, 0.1],
            nonrelevant_click_scale: 0.1,
        }),
        ..SynthSpec::default()
    }
}

/// A synthetic real corpus with qrels.
pub fn real_corpus(n_sessions: usize, seed: u64) -> (SessionCorpus, Qrels) {
    let d = generate_synthetic_dataset(&synth_spec(n_sessions), seed).expect("synthetic dataset");
    (d.corpus, d.qrels)
}

/// A real corpus and its PBM replay.
pub fn real_and_sim(n_sessions: usize, seed: u64) -> (SessionCorpus, SessionCorpus) {
    let (real, qrels) = real_corpus(n_sessions, seed);
    let cfg = SimulatorConfig {
        seed,
        ..SimulatorConfig::of_kind(SimulatorKind::Pbm)
    };
    let sim = simulate_corpus(&real, &qrels, &cfg).expect("simulate");
    (real, sim)
}

pub fn testbed(n_queries: usize, seed: u64) -> Testbed {
    let qrels = synthetic_qrels(
        &SyntheticQrelsSpec {
            n_queries,
            ..SyntheticQrelsSpec::default()
        },
        seed,
    );
    build_testbed(
        &qrels,
        &TestbedConfig {
            n_queries,
            seed,
            ..TestbedConfig::default()
        },
    )
    .expect("testbed")
}

/// Deterministic pseudo-random values in [0, 1) without pulling in an RNG.
pub fn uniform(n: usize, salt: u64) -> Vec<f64> {
    let mut x = salt.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..n)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            (x >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect()
}

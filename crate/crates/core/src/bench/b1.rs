use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{gate_error, gate_structure, load_dataset, provenance, BenchConfig, BenchReport, BenchResults, LoadedDataset};
use crate::classifier::AuditConfig;
use crate::error::{Error, Result};
use crate::ingest::Qrels;
use crate::realism::{run_b1, B1Config, RealismReport};
use crate::schema::{read_jsonl, ReadMode, SessionCorpus};
use crate::simulators::{simulate_corpus, SimulatorConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct B1Cell {
    pub dataset: String,
    pub simulator: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shard: Option<usize>,
    pub report: RealismReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct B1Results {
    pub b1: Vec<B1Cell>,
}

impl B1Results {
    pub fn cell(&self, dataset: &str, simulator: &str, seed: u64) -> Option<&B1Cell> {
        self.b1
            .iter()
            .find(|c| c.dataset == dataset && c.simulator == simulator && c.seed == seed)
    }
}

pub(crate) fn b1_config(cfg: &BenchConfig, seed: u64) -> B1Config {
    B1Config {
        resamples: cfg.bootstrap.resamples,
        seed,
        mmd_unbiased: cfg.metrics.mmd_unbiased,
        classifier: cfg.metrics.classifier,
        audit: AuditConfig {
            folds: cfg.folds,
            seed,
            leakage_auc: cfg.thresholds.leakage_auc,
            include_timestamps: cfg.metrics.include_timestamps,
            ..AuditConfig::default()
        },
        metrics: cfg.metrics.b1.clone(),
    }
}

pub(crate) fn seeded(sim: &SimulatorConfig, seed: u64) -> SimulatorConfig {
    SimulatorConfig {
        seed,
        ..sim.clone()
    }
}

enum Source<'a> {
    Builtin(&'a SimulatorConfig),
    External(String, SessionCorpus),
}

impl Source<'_> {
    fn id(&self) -> String {
        match self {
            Source::Builtin(c) => c.simulator_id(),
            Source::External(id, _) => id.clone(),
        }
    }
}

/// Realism metrics and the classifier audit for every dataset x simulator x seed.
pub fn run_b1_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    if cfg.simulators.is_empty() && cfg.external_simulations.is_empty() {
        return Err(Error::InvalidConfig("B1 needs at least one simulator".into()));
    }
    let layout = cfg.layout()?;
    let datasets: Vec<LoadedDataset> = cfg
        .all_datasets()
        .iter()
        .enumerate()
        .map(|(i, d)| load_dataset(d, i))
        .collect::<Result<_>>()?;
    let gates: Vec<_> = datasets.iter().map(gate_structure).collect();
    if gates.iter().all(|g| !g.passed) {
        return Err(gate_error(&gates[0]));
    }

    let mut sources: Vec<Source> = cfg.simulators.iter().map(Source::Builtin).collect();
    for e in &cfg.external_simulations {
        sources.push(Source::External(e.id.clone(), read_jsonl(&e.corpus, ReadMode::Strict)?));
    }

    let empty = Qrels::new();
    let mut jobs = Vec::new();
    for (d, g) in datasets.iter().zip(&gates) {
        if !g.passed {
            continue;
        }
        for (i, &seed) in cfg.seeds.iter().enumerate() {
            for src in &sources {
                jobs.push((d, i, seed, src));
            }
        }
    }
    let cells: Vec<B1Cell> = jobs
        .par_iter()
        .map(|&(d, i, seed, src)| {
            let real = d.corpus_for_seed(i).expect("gate guarantees a corpus");
            let qrels = d.qrels.as_ref().unwrap_or(&empty);
            let sim = match src {
                Source::Builtin(s) => simulate_corpus(real, qrels, &seeded(s, seed))?,
                Source::External(_, c) => c.clone(),
            };
            let report = run_b1(&real.sessions, &sim.sessions, &layout, &b1_config(cfg, seed))?;
            Ok(B1Cell {
                dataset: d.id.clone(),
                simulator: src.id(),
                seed,
                shard: (!d.shards.is_empty()).then(|| i % d.shards.len()),
                report,
            })
        })
        .collect::<Result<_>>()?;

    let mut diagnostics = BTreeMap::new();
    let no_qrels: Vec<&str> = datasets.iter().filter(|d| d.qrels.is_none()).map(|d| d.id.as_str()).collect();
    if !no_qrels.is_empty() {
        diagnostics.insert(
            "simulated_without_relevance".into(),
            serde_json::json!(no_qrels),
        );
    }
    Ok(BenchReport {
        provenance: provenance(cfg, &datasets, &layout)?,
        gates,
        results: BenchResults::B1(B1Results { b1: cells }),
        diagnostics,
    })
}

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::b1::{b1_config, seeded};
use super::b2::score_testers;
use super::{gate_error, gate_qrels, gate_structure, load_dataset, provenance, BenchConfig, BenchReport, BenchResults, LoadedDataset};
use crate::error::{Error, Result};
use crate::ingest::config_hash;
use crate::realism::{ks_statistic, run_b1, RealismReport};
use crate::reliability::{kendall_tau, pearson_test, Correlation};
use crate::schema::Session;
use crate::simulators::simulate_corpus;
use crate::testbed::{build_testbed, TestbedConfig};

/// Control metric that depends only on the real shard, never on the simulator.
pub const NUISANCE_METRIC: &str = "nuisance_split_half_ks";

/// Minimum records for a correlation to be reported without UNDERPOWERED.
const MIN_POWERED: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct B3Record {
    pub dataset: String,
    pub simulator: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shard: Option<usize>,
    /// Kendall τ of the simulator's system ranking against qrels; None when undefined.
    pub tau: Option<f64>,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct B3Correlation {
    pub pooled: Option<Correlation>,
    pub per_dataset: BTreeMap<String, Option<Correlation>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct B3Results {
    pub b3: Vec<B3Record>,
    /// metric id -> Pearson r between the metric and τ
    pub correlations: BTreeMap<String, B3Correlation>,
    /// datasets x simulators x seeds before gate exclusions
    pub planned_records: usize,
    pub gate_excluded_records: usize,
}

impl B3Results {
    pub fn pooled(&self, metric: &str) -> Option<Correlation> {
        self.correlations.get(metric).and_then(|c| c.pooled)
    }
}

/// KS statistic of session lengths between two seeded halves of `sessions`.
pub fn split_half_ks(sessions: &[Session], seed: u64) -> Option<f64> {
    let mut keyed: Vec<(String, f64)> = sessions
        .iter()
        .map(|s| {
            (
                config_hash(&serde_json::json!([seed, "split-half", s.session_id])),
                s.events.len() as f64,
            )
        })
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    let half = keyed.len() / 2;
    let a: Vec<f64> = keyed[..half].iter().map(|x| x.1).collect();
    let b: Vec<f64> = keyed[half..].iter().map(|x| x.1).collect();
    ks_statistic(&a, &b).ok()
}

fn metric_values(report: &RealismReport) -> BTreeMap<String, f64> {
    report
        .diagnostics
        .iter()
        .chain(&report.metrics)
        .filter(|(_, v)| v.value.is_finite())
        .map(|(k, v)| (k.clone(), v.value))
        .collect()
}

fn correlate(records: &[&B3Record], metric: &str) -> Option<Correlation> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = records
        .iter()
        .filter_map(|r| Some((*r.metrics.get(metric)?, r.tau?)))
        .unzip();
    if xs.len() < 3 {
        return None;
    }
    pearson_test(&xs, &ys).ok()
}

fn b3_block(cfg: &BenchConfig, d: &LoadedDataset, i: usize, seed: u64) -> Result<Vec<B3Record>> {
    let real = d.corpus_for_seed(i).expect("gate guarantees a corpus");
    let qrels = d.qrels.as_ref().expect("gate guarantees qrels");
    let tb = build_testbed(
        qrels,
        &TestbedConfig {
            seed,
            ..cfg.testbed.clone()
        },
    )?;
    let (truth, testers) = score_testers(&tb, &cfg.simulators, cfg.replays, seed, cfg.k, cfg.gain)?;
    let truth_means = truth.system_means();
    let nuisance = split_half_ks(&real.sessions, seed);
    let layout = cfg.layout()?;
    let shard = (!d.shards.is_empty()).then(|| i % d.shards.len());

    cfg.simulators
        .par_iter()
        .map(|s| {
            let id = s.simulator_id();
            let sim = simulate_corpus(real, qrels, &seeded(s, seed))?;
            let report = run_b1(&real.sessions, &sim.sessions, &layout, &b1_config(cfg, seed))?;
            let mut metrics = metric_values(&report);
            if let Some(v) = nuisance {
                metrics.insert(NUISANCE_METRIC.into(), v);
            }
            let tau = match kendall_tau(&truth_means, &testers[&id].system_means()) {
                Ok(t) => Some(t),
                Err(Error::ConstantVector | Error::NonFinite(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(B3Record {
                dataset: d.id.clone(),
                simulator: id,
                seed,
                shard,
                tau,
                metrics,
            })
        })
        .collect()
}

/// Correlate each realism metric with downstream tester fidelity across
/// datasets (or shards) x simulators x seeds.
pub fn run_b3_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let configs = cfg.all_datasets();
    let units: usize = configs.iter().map(|d| d.shards.unwrap_or(1).max(1)).sum();
    if units < 2 || cfg.simulators.len() < 2 || cfg.seeds.len() < 2 {
        return Err(Error::InvalidConfig(
            "B3 needs >= 2 datasets or shards, >= 2 simulators and >= 2 seeds".into(),
        ));
    }
    let mut gates: Vec<_> = configs
        .iter()
        .enumerate()
        .map(|(i, d)| gate_qrels(d, d.id.as_deref().unwrap_or(&format!("dataset{i}"))))
        .collect();
    if gates.iter().all(|g| !g.passed) {
        return Err(gate_error(&gates[0]));
    }
    let mut datasets = Vec::new();
    let mut excluded_datasets = 0;
    for (i, d) in configs.iter().enumerate() {
        if !gates[i].passed {
            excluded_datasets += 1;
            continue;
        }
        let loaded = load_dataset(d, i)?;
        let g = gate_structure(&loaded);
        let ok = g.passed;
        gates.push(g);
        if ok {
            datasets.push(loaded);
        } else {
            excluded_datasets += 1;
        }
    }
    if datasets.is_empty() {
        let g = gates.iter().rev().find(|g| !g.passed).expect("some gate failed");
        return Err(gate_error(g));
    }
    let per_dataset = cfg.simulators.len() * cfg.seeds.len();

    let jobs: Vec<(&LoadedDataset, usize, u64)> = datasets
        .iter()
        .flat_map(|d| cfg.seeds.iter().enumerate().map(move |(i, &s)| (d, i, s)))
        .collect();
    let blocks: Vec<Vec<B3Record>> = jobs
        .par_iter()
        .map(|&(d, i, s)| b3_block(cfg, d, i, s))
        .collect::<Result<_>>()?;
    let records: Vec<B3Record> = blocks.into_iter().flatten().collect();

    let mut metric_ids: Vec<String> = if cfg.metrics.b3.is_empty() {
        let mut ids: Vec<String> = records.iter().flat_map(|r| r.metrics.keys().cloned()).collect();
        ids.sort();
        ids.dedup();
        ids
    } else {
        cfg.metrics.b3.clone()
    };
    metric_ids.dedup();
    let all: Vec<&B3Record> = records.iter().collect();
    let correlations = metric_ids
        .into_iter()
        .map(|m| {
            let pooled = correlate(&all, &m);
            let per_dataset = datasets
                .iter()
                .map(|d| {
                    let sub: Vec<&B3Record> = records.iter().filter(|r| r.dataset == d.id).collect();
                    (d.id.clone(), correlate(&sub, &m))
                })
                .collect();
            let mut flags = Vec::new();
            match pooled {
                None => flags.push("UNDEFINED".to_string()),
                Some(c) if c.n < MIN_POWERED => flags.push("UNDERPOWERED".to_string()),
                _ => {}
            }
            (
                m,
                B3Correlation {
                    pooled,
                    per_dataset,
                    flags,
                },
            )
        })
        .collect();

    let layout = cfg.layout()?;
    Ok(BenchReport {
        provenance: provenance(cfg, &datasets, &layout)?,
        gates,
        results: BenchResults::B3(B3Results {
            planned_records: configs.len() * per_dataset,
            gate_excluded_records: excluded_datasets * per_dataset,
            b3: records,
            correlations,
        }),
        diagnostics: BTreeMap::new(),
    })
}

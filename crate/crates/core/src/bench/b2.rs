use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::b1::seeded;
use super::{gate_error, gate_qrels, load_dataset, provenance, BenchConfig, BenchReport, BenchResults, LoadedDataset};
use crate::error::{Error, Result};
use crate::reliability::{agreement, leave_one_out, rate_aggregate, AgreementResult, RateResult, ScoreMatrix, SensitivityResult};
use crate::simulators::{ClickSimulator, SimulatorConfig};
use crate::testbed::{build_testbed, click_derived_ndcg, trusted_score, Gain, TestbedConfig, Testbed};

/// Tester id of the qrels-derived ground truth inside RATE.
pub const REFERENCE_TESTER: &str = "qrels";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TesterAgreement {
    pub system_means: Vec<f64>,
    pub agreement: Option<AgreementResult>,
    /// Why agreement is undefined (e.g. the tester scored every system the same).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub undefined: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct B2Cell {
    pub dataset: String,
    pub seed: u64,
    pub systems: Vec<String>,
    pub alphas: Vec<f64>,
    pub n_queries: usize,
    pub trusted_means: Vec<f64>,
    pub testers: BTreeMap<String, TesterAgreement>,
    pub rate: RateResult,
    pub leave_one_out: Option<SensitivityResult>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TesterSummary {
    pub mean_kendall_tau: Option<f64>,
    pub mean_rate_weight: Option<f64>,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct B2Results {
    pub b2: Vec<B2Cell>,
    /// dataset -> tester -> seed-averaged summary
    pub summary: BTreeMap<String, BTreeMap<String, TesterSummary>>,
}

/// Per-system, per-query scores: qrels ground truth and one matrix per simulator.
pub fn score_testers(
    tb: &Testbed,
    sims: &[SimulatorConfig],
    replays: usize,
    seed: u64,
    k: usize,
    gain: Gain,
) -> Result<(ScoreMatrix, BTreeMap<String, ScoreMatrix>)> {
    let systems: Vec<String> = tb.systems.iter().map(|s| s.system_id.clone()).collect();
    let matrix = |rows: Vec<BTreeMap<String, f64>>| ScoreMatrix {
        systems: systems.clone(),
        queries: tb.queries.clone(),
        values: rows
            .into_iter()
            .map(|r| tb.queries.iter().map(|q| r.get(q).copied().unwrap_or(0.0)).collect())
            .collect(),
    };
    let truth = matrix(tb.systems.iter().map(|run| trusted_score(tb, run, k, gain).per_query).collect());
    let mut testers = BTreeMap::new();
    for s in sims {
        let tester = ClickSimulator::new(seeded(s, seed))?.for_testbed();
        let rows = tb
            .systems
            .iter()
            .map(|run| click_derived_ndcg(tb, run, &tester, replays, seed, k).per_query)
            .collect();
        testers.insert(s.simulator_id(), matrix(rows));
    }
    Ok((truth, testers))
}

pub(crate) fn b2_cell(cfg: &BenchConfig, d: &LoadedDataset, seed: u64) -> Result<B2Cell> {
    let qrels = d.qrels.as_ref().expect("gate guarantees qrels");
    let tb = build_testbed(
        qrels,
        &TestbedConfig {
            seed,
            ..cfg.testbed.clone()
        },
    )?;
    let (truth, matrices) = score_testers(&tb, &cfg.simulators, cfg.replays, seed, cfg.k, cfg.gain)?;
    let trusted_means = truth.system_means();

    let mut testers = BTreeMap::new();
    let mut panel = BTreeMap::new();
    if cfg.rate_include_reference {
        panel.insert(REFERENCE_TESTER.to_string(), trusted_means.clone());
    }
    for (id, m) in &matrices {
        let (agreement, undefined) = match agreement(&truth, m, cfg.bootstrap.resamples, seed) {
            Ok(a) => (Some(a), None),
            Err(e @ (Error::ConstantVector | Error::NonFinite(_))) => (None, Some(e.to_string())),
            Err(e) => return Err(e),
        };
        panel.insert(id.clone(), m.system_means());
        testers.insert(
            id.clone(),
            TesterAgreement {
                system_means: m.system_means(),
                agreement,
                undefined,
            },
        );
    }
    let rate = rate_aggregate(&panel, &truth.systems, &cfg.rate)?;
    let loo = if panel.len() >= 3 {
        Some(leave_one_out(&panel, &truth.systems, &cfg.rate)?)
    } else {
        None
    };
    Ok(B2Cell {
        dataset: d.id.clone(),
        seed,
        systems: truth.systems.clone(),
        alphas: tb.systems.iter().map(|s| s.alpha).collect(),
        n_queries: tb.queries.len(),
        trusted_means,
        testers,
        rate,
        leave_one_out: loo,
    })
}

fn summarize(cells: &[B2Cell]) -> BTreeMap<String, BTreeMap<String, TesterSummary>> {
    let mut acc: BTreeMap<String, BTreeMap<String, (Vec<f64>, Vec<f64>, usize)>> = BTreeMap::new();
    for c in cells {
        let ds = acc.entry(c.dataset.clone()).or_default();
        let ids: std::collections::BTreeSet<&String> = c.testers.keys().chain(c.rate.weights.keys()).collect();
        for id in ids {
            let e = ds.entry(id.clone()).or_default();
            e.2 += 1;
            if let Some(a) = c.testers.get(id).and_then(|t| t.agreement.as_ref()) {
                e.0.push(a.kendall_tau);
            }
            if let Some(w) = c.rate.weights.get(id) {
                e.1.push(*w);
            }
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    acc.into_iter()
        .map(|(d, m)| {
            let inner = m
                .into_iter()
                .map(|(id, (taus, ws, n))| {
                    (
                        id,
                        TesterSummary {
                            mean_kendall_tau: mean(&taus),
                            mean_rate_weight: mean(&ws),
                            seeds: n,
                        },
                    )
                })
                .collect();
            (d, inner)
        })
        .collect()
}

/// Tester agreement with qrels ground truth, RATE aggregation and leave-one-out sensitivity.
pub fn run_b2_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    if cfg.simulators.is_empty() {
        return Err(Error::InvalidConfig("B2 needs at least one simulator tester".into()));
    }
    let configs = cfg.all_datasets();
    let gates: Vec<_> = configs
        .iter()
        .enumerate()
        .map(|(i, d)| gate_qrels(d, d.id.as_deref().unwrap_or(&format!("dataset{i}"))))
        .collect();
    if gates.iter().all(|g| !g.passed) {
        return Err(gate_error(&gates[0]));
    }
    let datasets: Vec<LoadedDataset> = configs
        .iter()
        .enumerate()
        .filter(|(i, _)| gates[*i].passed)
        .map(|(i, d)| load_dataset(d, i))
        .collect::<Result<_>>()?;
    let layout = cfg.layout()?;

    let jobs: Vec<(&LoadedDataset, u64)> = datasets
        .iter()
        .flat_map(|d| cfg.seeds.iter().map(move |&s| (d, s)))
        .collect();
    let cells: Vec<B2Cell> = jobs.par_iter().map(|&(d, s)| b2_cell(cfg, d, s)).collect::<Result<_>>()?;
    let summary = summarize(&cells);
    Ok(BenchReport {
        provenance: provenance(cfg, &datasets, &layout)?,
        gates,
        results: BenchResults::B2(B2Results { b2: cells, summary }),
        diagnostics: BTreeMap::new(),
    })
}

//! Evaluation universe for tester reliability: sampled queries, padded pools,
//! α-mixture systems and click-replay scoring.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, LineError, Result};
use crate::ingest::Qrels;
use crate::schema::{Event, Payload, Session};
use crate::simulators::SimulatorAdapter;

pub const DEFAULT_K: usize = 10;

/// Pool size per query: fixed, or drawn uniformly from an inclusive range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PoolSize {
    Fixed(usize),
    Range { min: usize, max: usize },
}

impl Default for PoolSize {
    fn default() -> Self {
        PoolSize::Fixed(100)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gain {
    #[default]
    Linear,
    Exponential,
}

impl Gain {
    pub fn apply(self, grade: i32) -> f64 {
        let g = grade.max(0);
        match self {
            Gain::Linear => g as f64,
            Gain::Exponential => 2f64.powi(g) - 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestbedConfig {
    pub n_queries: usize,
    pub pool_size: PoolSize,
    pub n_systems: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub seed: u64,
}

impl Default for TestbedConfig {
    fn default() -> Self {
        TestbedConfig {
            n_queries: 100,
            pool_size: PoolSize::default(),
            n_systems: 10,
            alpha_min: 0.15,
            alpha_max: 0.80,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRun {
    pub system_id: String,
    pub alpha: f64,
    pub seed: u64,
    /// query id -> (doc id, score), best first
    pub rankings: BTreeMap<String, Vec<(String, f64)>>,
}

impl SystemRun {
    pub fn ranking(&self, query_id: &str) -> Vec<&str> {
        self.rankings
            .get(query_id)
            .map(|r| r.iter().map(|(d, _)| d.as_str()).collect())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Testbed {
    pub queries: Vec<String>,
    pub pools: BTreeMap<String, Vec<String>>,
    pub qrels: Qrels,
    pub systems: Vec<SystemRun>,
    pub seed: u64,
}

impl Testbed {
    pub fn grades(&self, query_id: &str) -> BTreeMap<&str, i32> {
        self.pools
            .get(query_id)
            .map(|pool| pool.iter().map(|d| (d.as_str(), self.qrels.grade(Some(query_id), d))).collect())
            .unwrap_or_default()
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Evenly spaced α values over [lo, hi].
pub fn alpha_grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Sample queries, pad pools with grade-0 distractors, and synthesize the α systems.
pub fn build_testbed(qrels: &Qrels, cfg: &TestbedConfig) -> Result<Testbed> {
    let mut tb = build_pools(qrels, cfg)?;
    for (i, alpha) in alpha_grid(cfg.n_systems, cfg.alpha_min, cfg.alpha_max).into_iter().enumerate() {
        let seed = system_seed(cfg.seed, i);
        let mut run = synthesize_system(&tb, alpha, seed, true);
        run.system_id = format!("sys{i:02}");
        tb.systems.push(run);
    }
    Ok(tb)
}

pub fn system_seed(testbed_seed: u64, index: usize) -> u64 {
    derive_stream!(testbed_seed; "system-seed", index).random()
}

/// Queries and pools only; `systems` is empty.
pub fn build_pools(qrels: &Qrels, cfg: &TestbedConfig) -> Result<Testbed> {
    let available: Vec<&str> = qrels
        .queries()
        .filter(|q| qrels.for_query(q).is_some_and(|d| d.values().any(|&g| g > 0)))
        .collect();
    if available.is_empty() || cfg.n_queries > available.len() || cfg.n_queries == 0 {
        return Err(Error::InsufficientQueries {
            requested: cfg.n_queries,
            available: available.len(),
        });
    }
    let mut rng = derive_stream!(cfg.seed; "testbed-queries");
    let mut queries: Vec<String> = available
        .choose_multiple(&mut rng, cfg.n_queries)
        .map(|q| q.to_string())
        .collect();
    queries.sort();

    let mut pools = BTreeMap::new();
    for q in &queries {
        let mut rng = derive_stream!(cfg.seed; "testbed-pool", q.as_str());
        let target = match cfg.pool_size {
            PoolSize::Fixed(n) => n,
            PoolSize::Range { min, max } => rng.random_range(min..=max.max(min)),
        };
        let judged = qrels.for_query(q).expect("sampled from qrels");
        let mut pool: Vec<String> = judged.iter().filter(|(_, &g)| g > 0).map(|(d, _)| d.clone()).collect();
        let mut zeros: Vec<&String> = judged.iter().filter(|(_, &g)| g <= 0).map(|(d, _)| d).collect();
        zeros.shuffle(&mut rng);
        for d in zeros {
            if pool.len() >= target {
                break;
            }
            pool.push(d.clone());
        }
        let mut k = 0;
        while pool.len() < target {
            pool.push(format!("distractor:{q}:{k}"));
            k += 1;
        }
        pools.insert(q.clone(), pool);
    }
    Ok(Testbed {
        queries,
        pools,
        qrels: qrels.clone(),
        systems: Vec::new(),
        seed: cfg.seed,
    })
}

/// score = α·grade/max_grade + (1−α)·g, g ~ N(0,1) fixed per (seed, query, doc).
/// `noise = false` zeroes g (test hook).
pub fn synthesize_system(tb: &Testbed, alpha: f64, system_seed: u64, noise: bool) -> SystemRun {
    let rankings = tb
        .queries
        .par_iter()
        .map(|q| {
            let pool = &tb.pools[q];
            let grades: Vec<i32> = pool.iter().map(|d| tb.qrels.grade(Some(q), d).max(0)).collect();
            let max = grades.iter().copied().max().unwrap_or(0);
            let mut scored: Vec<(String, f64)> = pool
                .iter()
                .zip(&grades)
                .map(|(d, &g)| {
                    let rel = if max > 0 { g as f64 / max as f64 } else { 0.0 };
                    let g_noise: f64 = if noise {
                        derive_stream!(system_seed; "system-noise", q.as_str(), d.as_str()).sample(StandardNormal)
                    } else {
                        0.0
                    };
                    (d.clone(), alpha * rel + (1.0 - alpha) * g_noise)
                })
                .collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            (q.clone(), scored)
        })
        .collect();
    SystemRun {
        system_id: format!("alpha-{alpha:.3}"),
        alpha,
        seed: system_seed,
        rankings,
    }
}

pub fn dcg<'a>(ranking: impl IntoIterator<Item = &'a str>, grade: impl Fn(&str) -> i32, k: usize, gain: Gain) -> f64 {
    ranking
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain.apply(grade(d)) / ((i + 2) as f64).log2())
        .sum()
}

/// nDCG@k; the ideal DCG reorders every grade in `grades` (the full pool). 0 when IDCG = 0.
pub fn ndcg_at_k(ranking: &[&str], grades: &BTreeMap<&str, i32>, k: usize, gain: Gain) -> f64 {
    let mut ideal: Vec<i32> = grades.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain.apply(g) / ((i + 2) as f64).log2())
        .sum();
    if idcg <= 0.0 {
        return 0.0;
    }
    dcg(ranking.iter().copied(), |d| grades.get(d).copied().unwrap_or(0), k, gain) / idcg
}

/// Per-query scores of one tester over one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TesterScore {
    pub tester_id: String,
    pub system_id: String,
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
}

fn mean_of(m: &BTreeMap<String, f64>) -> f64 {
    if m.is_empty() {
        0.0
    } else {
        m.values().sum::<f64>() / m.len() as f64
    }
}

/// The trusted tester: qrels nDCG@k per query.
pub fn trusted_score(tb: &Testbed, run: &SystemRun, k: usize, gain: Gain) -> TesterScore {
    let per_query: BTreeMap<String, f64> = tb
        .queries
        .iter()
        .map(|q| (q.clone(), ndcg_at_k(&run.ranking(q), &tb.grades(q), k, gain)))
        .collect();
    TesterScore {
        tester_id: "qrels".into(),
        system_id: run.system_id.clone(),
        mean: mean_of(&per_query),
        per_query,
    }
}

/// Present the top-k as a SERP, sample clicks, take clicked docs as binary
/// relevance, and score nDCG@k; averaged over replays, then queries.
pub fn click_derived_ndcg<S: SimulatorAdapter + ?Sized>(
    tb: &Testbed,
    run: &SystemRun,
    tester: &S,
    replays: usize,
    seed: u64,
    k: usize,
) -> TesterScore {
    let per_query: BTreeMap<String, f64> = tb
        .queries
        .par_iter()
        .map(|q| {
            let top: Vec<&str> = run.ranking(q).into_iter().take(k).collect();
            let mut total = 0.0;
            for r in 0..replays {
                let mut rng = derive_stream!(seed; "replay", tester.id(), run.system_id.as_str(), q.as_str(), r);
                let clicked = replay_clicks(tester, q, &top, &tb.qrels, &mut rng);
                let grades: BTreeMap<&str, i32> = top
                    .iter()
                    .map(|&d| (d, i32::from(clicked.iter().any(|c| c == d))))
                    .collect();
                total += ndcg_at_k(&top, &grades, k, Gain::Linear);
            }
            (q.clone(), if replays == 0 { 0.0 } else { total / replays as f64 })
        })
        .collect();
    TesterScore {
        tester_id: tester.id().to_string(),
        system_id: run.system_id.clone(),
        mean: mean_of(&per_query),
        per_query,
    }
}

fn replay_clicks<S: SimulatorAdapter + ?Sized>(
    tester: &S,
    query_id: &str,
    top: &[&str],
    qrels: &Qrels,
    rng: &mut crate::rng::Stream,
) -> Vec<String> {
    let session = Session::real(
        format!("replay:{query_id}"),
        "testbed",
        vec![Event::query(0, query_id, query_id), Event::serp(0, query_id, top.iter().copied())],
    );
    tester
        .simulate(&session, qrels, rng)
        .events
        .into_iter()
        .filter_map(|e| match e.payload {
            Payload::Click { doc_id, .. } => Some(doc_id),
            _ => None,
        })
        .collect()
}

/// Binary or graded synthetic judgments for a testbed universe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticQrelsSpec {
    pub n_queries: usize,
    /// Inclusive range of positives per query.
    pub positives: (usize, usize),
    /// Positive grades are drawn uniformly from 1..=max_grade.
    pub max_grade: i32,
    pub query_prefix: String,
}

impl Default for SyntheticQrelsSpec {
    fn default() -> Self {
        SyntheticQrelsSpec {
            n_queries: 100,
            positives: (3, 8),
            max_grade: 3,
            query_prefix: "tq".into(),
        }
    }
}

/// Positive-only judgments, as in many public collections.
pub fn synthetic_qrels(spec: &SyntheticQrelsSpec, seed: u64) -> Qrels {
    let mut q = Qrels::new();
    for i in 0..spec.n_queries {
        let qid = format!("{}{i:04}", spec.query_prefix);
        let mut rng = derive_stream!(seed; "synthetic-qrels", qid.as_str());
        let (lo, hi) = spec.positives;
        let n = rng.random_range(lo.max(1)..=hi.max(lo).max(1));
        for d in 0..n {
            q.insert(qid.clone(), format!("{qid}-rel{d}"), rng.random_range(1..=spec.max_grade.max(1)));
        }
    }
    q
}

/// TREC run lines: `qid Q0 docid rank score system_id`.
pub fn write_trec_run(run: &SystemRun, w: &mut impl Write) -> std::io::Result<()> {
    for (q, ranked) in &run.rankings {
        for (i, (d, s)) in ranked.iter().enumerate() {
            writeln!(w, "{q} Q0 {d} {} {s:.6} {}", i + 1, run.system_id)?;
        }
    }
    Ok(())
}

/// Parse one or more systems from TREC run text; rankings are ordered by rank.
pub fn parse_trec_run(text: &str) -> Result<Vec<SystemRun>> {
    let mut by_sys: BTreeMap<String, BTreeMap<String, Vec<(u32, String, f64)>>> = BTreeMap::new();
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let parsed = (f.len() == 6)
            .then(|| Some((f[3].parse::<u32>().ok()?, f[4].parse::<f64>().ok()?)))
            .flatten();
        match parsed {
            Some((rank, score)) => by_sys
                .entry(f[5].to_string())
                .or_default()
                .entry(f[0].to_string())
                .or_default()
                .push((rank, f[2].to_string(), score)),
            None => errors.push(LineError {
                line: i + 1,
                message: "expected `qid Q0 docid rank score system_id`".into(),
            }),
        }
    }
    if !errors.is_empty() {
        return Err(Error::Parse { errors });
    }
    Ok(by_sys
        .into_iter()
        .map(|(system_id, qs)| SystemRun {
            system_id,
            alpha: f64::NAN,
            seed: 0,
            rankings: qs
                .into_iter()
                .map(|(q, mut v)| {
                    v.sort_by_key(|x| x.0);
                    (q, v.into_iter().map(|(_, d, s)| (d, s)).collect())
                })
                .collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulators::{ClickSimulator, SimulatorConfig, SimulatorKind};

    fn small_qrels() -> Qrels {
        synthetic_qrels(
            &SyntheticQrelsSpec {
                n_queries: 5,
                positives: (3, 3),
                ..Default::default()
            },
            1,
        )
    }

    #[test]
    fn ndcg_hand_example() {
        let grades: BTreeMap<&str, i32> = [("a", 1), ("b", 0), ("c", 1), ("d", 0)].into_iter().collect();
        let v = ndcg_at_k(&["a", "b", "c", "d"], &grades, 10, Gain::Linear);
        let want = 1.5 / (1.0 + 1.0 / 3f64.log2());
        assert!((v - want).abs() < 1e-12);
        assert!((want - 0.9197).abs() < 1e-4);
        assert_eq!(ndcg_at_k(&["a", "c", "b", "d"], &grades, 10, Gain::Linear), 1.0);
        let none: BTreeMap<&str, i32> = [("a", 0)].into_iter().collect();
        assert_eq!(ndcg_at_k(&["a"], &none, 10, Gain::Linear), 0.0);
    }

    #[test]
    fn pools_hold_positives_and_distractors() {
        let q = small_qrels();
        let cfg = TestbedConfig {
            n_queries: 5,
            ..Default::default()
        };
        let tb = build_testbed(&q, &cfg).unwrap();
        assert_eq!(tb.queries.len(), 5);
        for qid in &tb.queries {
            let pool = &tb.pools[qid];
            assert_eq!(pool.len(), 100);
            assert_eq!(pool.iter().filter(|d| d.starts_with("distractor:")).count(), 97);
            for (d, g) in q.for_query(qid).unwrap() {
                assert!(*g <= 0 || pool.contains(d));
            }
        }
        assert_eq!(tb, build_testbed(&q, &cfg).unwrap());
        assert!(matches!(
            build_testbed(&q, &TestbedConfig { n_queries: 6, ..cfg }),
            Err(Error::InsufficientQueries { .. })
        ));
    }

    #[test]
    fn systems_rank_permutations_of_pools() {
        let tb = build_testbed(&small_qrels(), &TestbedConfig { n_queries: 5, ..Default::default() }).unwrap();
        assert_eq!(tb.systems.len(), 10);
        assert!((tb.systems[0].alpha - 0.15).abs() < 1e-12 && (tb.systems[9].alpha - 0.80).abs() < 1e-12);
        for s in &tb.systems {
            for q in &tb.queries {
                let mut a: Vec<&str> = s.ranking(q);
                let mut b: Vec<&str> = tb.pools[q].iter().map(String::as_str).collect();
                a.sort_unstable();
                b.sort_unstable();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn noise_off_sorts_by_grade() {
        let tb = build_pools(&small_qrels(), &TestbedConfig { n_queries: 5, ..Default::default() }).unwrap();
        let run = synthesize_system(&tb, 0.5, 3, false);
        for q in &tb.queries {
            let grades: Vec<i32> = run.ranking(q).iter().map(|d| tb.qrels.grade(Some(q), d)).collect();
            assert!(grades.windows(2).all(|w| w[0] >= w[1]));
            assert_eq!(trusted_score(&tb, &run, 10, Gain::Linear).per_query[q], 1.0);
        }
    }

    #[test]
    fn alpha_zero_ignores_grades() {
        let tb = build_pools(&small_qrels(), &TestbedConfig { n_queries: 5, ..Default::default() }).unwrap();
        let mut regraded = tb.clone();
        let mut q2 = Qrels::new();
        for (q, d, g) in tb.qrels.iter() {
            q2.insert(q, d, 4 - g);
        }
        regraded.qrels = q2;
        assert_eq!(synthesize_system(&tb, 0.0, 9, true).rankings, synthesize_system(&regraded, 0.0, 9, true).rankings);
    }

    #[test]
    fn never_clicking_tester_scores_zero() {
        let tb = build_testbed(&small_qrels(), &TestbedConfig { n_queries: 5, ..Default::default() }).unwrap();
        let mut cfg = SimulatorConfig::of_kind(SimulatorKind::Pbm);
        cfg.pbm.attract_rel = 0.0;
        cfg.pbm.attract_nonrel = 0.0;
        let sim = ClickSimulator::new(cfg).unwrap();
        let s = click_derived_ndcg(&tb, &tb.systems[0], &sim, 8, 1, 10);
        assert_eq!(s.mean, 0.0);
    }

    #[test]
    fn clicking_exactly_relevant_docs_matches_binary_ndcg() {
        let tb = build_testbed(
            &synthetic_qrels(
                &SyntheticQrelsSpec {
                    n_queries: 5,
                    positives: (2, 4),
                    max_grade: 1,
                    ..Default::default()
                },
                2,
            ),
            &TestbedConfig {
                n_queries: 5,
                pool_size: PoolSize::Fixed(10),
                ..Default::default()
            },
        )
        .unwrap();
        let mut cfg = SimulatorConfig::of_kind(SimulatorKind::Pbm);
        cfg.pbm.attract_rel = 1.0;
        cfg.pbm.attract_nonrel = 0.0;
        cfg.pbm.examination_curve = Some(vec![1.0]);
        let sim = ClickSimulator::new(cfg).unwrap();
        for run in &tb.systems {
            let a = click_derived_ndcg(&tb, run, &sim, 3, 5, 10);
            let b = trusted_score(&tb, run, 10, Gain::Linear);
            for q in &tb.queries {
                assert!((a.per_query[q] - b.per_query[q]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trec_run_round_trip() {
        let tb = build_testbed(&small_qrels(), &TestbedConfig { n_queries: 5, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        write_trec_run(&tb.systems[2], &mut buf).unwrap();
        let parsed = parse_trec_run(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(parsed.len(), 1);
        for q in &tb.queries {
            assert_eq!(parsed[0].ranking(q), tb.systems[2].ranking(q));
        }
        assert!(parse_trec_run("q1 Q0 d1 x 1.0 s").is_err());
    }
}

use std::fs;
use std::path::Path;

use simeval_core::bench::{
    emit_report, run_b1_bench, run_b2_bench, run_b3_bench, run_bench, validate_report, with_workers, BenchConfig,
    BenchResults, NUISANCE_METRIC,
};
use simeval_core::error::GateCode;
use simeval_core::reliability::pearson_test;
use simeval_core::schema::{write_jsonl, Event, Label, Payload, Session, SessionCorpus};
use simeval_core::ingest::LossManifest;
use simeval_core::Error;
use tempfile::TempDir;

const SYNTH: &str = "
    synthetic:
      dataset_id: DS
      n_sessions: 150
      relevance:
        p_relevant_by_rank: [0.7, 0.6, 0.5, 0.4, 0.35, 0.3, 0.25, 0.2, 0.15, 0.1]
        nonrelevant_click_scale: 0.1
    synthetic_seed: 5";

fn small_b2(extra_datasets: &str) -> String {
    format!(
        "benchmark: B2
datasets:
  - id: judged
    synthetic_qrels:
      n_queries: 30
      positives: [2, 5]
{extra_datasets}simulators:
  - kind: pbm
  - kind: heuristic
seeds: [1, 2]
testbed:
  n_queries: 20
  pool_size: 20
  n_systems: 5
replays: 2
bootstrap:
  resamples: 20
"
    )
}

#[test]
fn yaml_config_parses_with_defaults() {
    let cfg = BenchConfig::from_yaml_str(&small_b2("")).unwrap();
    assert_eq!(cfg.seeds, vec![1, 2]);
    assert_eq!(cfg.simulators.len(), 2);
    assert_eq!(cfg.folds, 5);
    assert_eq!(cfg.k, 10);
    cfg.validate().unwrap();
    assert_eq!(cfg.config_hash().unwrap(), cfg.clone().config_hash().unwrap());
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(matches!(BenchConfig::from_yaml_str("seedz: [1]\n"), Err(Error::Yaml(_))));
}

#[test]
fn config_hash_tracks_content() {
    let a = BenchConfig::from_yaml_str(&small_b2("")).unwrap();
    let mut b = a.clone();
    b.replays = 3;
    assert_ne!(a.config_hash().unwrap(), b.config_hash().unwrap());
}

const RELEVANCE: &str = "    relevance:
      p_relevant_by_rank: [0.7, 0.6, 0.5, 0.4, 0.35, 0.3, 0.25, 0.2, 0.15, 0.1]
      nonrelevant_click_scale: 0.1
";

#[test]
fn no_qrels_gate_refuses_and_touches_nothing() {
    let dir = TempDir::new().unwrap();
    let b2 = "benchmark: B2\ndataset:\n  id: plain\n  synthetic:\n    dataset_id: plain\n    n_sessions: 20\nsimulators:\n  - kind: pbm\n".to_string();
    let mut b3 = b3_text(2, "[1, 2]").replace(RELEVANCE, "");
    b3.push_str(&format!("output: {}\n", dir.path().join("out").display()));
    for (text, run) in [(b2, run_b2_bench as fn(&BenchConfig) -> _), (b3, run_b3_bench)] {
        let cfg = BenchConfig::from_yaml_str(&text).unwrap();
        match run(&cfg) {
            Err(Error::Gate { code, .. }) => assert_eq!(code, GateCode::GateNoQrels),
            other => panic!("gate should refuse, got {:?}", other.map(|_| ())),
        }
    }
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn partial_gate_failure_excludes_only_that_dataset() {
    let plain = "  - id: plain\n    synthetic:\n      dataset_id: plain\n      n_sessions: 20\n";
    let cfg = BenchConfig::from_yaml_str(&small_b2(plain)).unwrap();
    let report = run_b2_bench(&cfg).unwrap();
    let failed: Vec<_> = report.gates.iter().filter(|g| !g.passed).collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].scope, "plain");
    let BenchResults::B2(r) = &report.results else { panic!() };
    assert!(r.b2.iter().all(|c| c.dataset == "judged"));
    assert_eq!(r.b2.len(), 2);
    assert!(r.summary["judged"].contains_key("qrels"));
}

#[test]
fn emitted_reports_validate_and_carry_the_hash() {
    let dir = TempDir::new().unwrap();
    let cfg = BenchConfig::from_yaml_str(&small_b2("")).unwrap();
    let report = run_b2_bench(&cfg).unwrap();
    let files = emit_report(&report, dir.path()).unwrap();
    let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["report.json", "b2_agreement.csv", "b2_rate_weights.csv", "b2_summary.csv"]);
    let hash = cfg.config_hash().unwrap();
    for f in &files[1..] {
        let text = fs::read_to_string(f).unwrap();
        assert_eq!(text.lines().next().unwrap(), format!("# config_hash={hash}"));
    }
    let value: serde_json::Value = serde_json::from_str(&fs::read_to_string(&files[0]).unwrap()).unwrap();
    validate_report(&value).unwrap();
    assert_eq!(value["provenance"]["config_hash"], hash.as_str());
    assert_eq!(value["provenance"]["seeds"], serde_json::json!([1, 2]));

    let mut broken = value.clone();
    broken["provenance"].as_object_mut().unwrap().remove("config_hash");
    assert!(matches!(validate_report(&broken), Err(Error::ReportSchema(_))));
}

#[test]
fn rate_weights_are_floored_taus() {
    let cfg = BenchConfig::from_yaml_str(&small_b2("")).unwrap();
    let report = run_b2_bench(&cfg).unwrap();
    let BenchResults::B2(r) = &report.results else { panic!() };
    for c in &r.b2 {
        assert_eq!(c.testers.len(), 2);
        assert_eq!(c.rate.weights.len(), 3);
        for w in c.rate.weights.values() {
            assert!(*w >= cfg.rate.eps && *w <= 1.0, "{w}");
        }
        assert!(c.rate.iterations <= cfg.rate.max_iter);
    }
}

#[test]
fn reruns_and_worker_counts_give_identical_content() {
    let cfg = BenchConfig::from_yaml_str(&small_b2("")).unwrap();
    let a = with_workers(1, || run_bench(&cfg)).unwrap().unwrap();
    let b = with_workers(4, || run_bench(&cfg)).unwrap().unwrap();
    assert_eq!(a.content_without_timestamp(), b.content_without_timestamp());
}

fn b3_config(shards: usize, seeds: &str) -> BenchConfig {
    BenchConfig::from_yaml_str(&b3_text(shards, seeds)).unwrap()
}

fn b3_text(shards: usize, seeds: &str) -> String {
    format!(
        "benchmark: B3
dataset:
  id: sharded
  shards: {shards}
  synthetic:
    dataset_id: sharded
    n_sessions: 240
{RELEVANCE}  synthetic_seed: 9
simulators:
  - kind: pbm
  - kind: heuristic
seeds: {seeds}
metrics:
  classifier: false
testbed:
  n_queries: 20
  pool_size: 20
  n_systems: 5
replays: 2
bootstrap:
  resamples: 0
"
    )
}

#[test]
fn b3_small_sweep_is_underpowered_and_counts_add_up() {
    let report = run_b3_bench(&b3_config(2, "[1, 2]")).unwrap();
    let BenchResults::B3(r) = &report.results else { panic!() };
    assert_eq!(r.planned_records, 4);
    assert_eq!(r.gate_excluded_records, 0);
    assert_eq!(r.b3.len(), r.planned_records - r.gate_excluded_records);
    let shards: Vec<_> = r.b3.iter().map(|x| x.shard).collect();
    assert!(shards.contains(&Some(0)) && shards.contains(&Some(1)));
    for (m, c) in &r.correlations {
        let n = r.b3.iter().filter(|x| x.tau.is_some() && x.metrics.contains_key(m)).count();
        match c.pooled {
            Some(p) => {
                assert_eq!(p.n, n, "{m}");
                assert!(c.flags.contains(&"UNDERPOWERED".to_string()), "{m}");
            }
            None => {
                // Too few points, or one side constant across the records.
                let pts: Vec<(f64, f64)> = r
                    .b3
                    .iter()
                    .filter_map(|x| Some((*x.metrics.get(m)?, x.tau?)))
                    .collect();
                let constant = |f: fn(&(f64, f64)) -> f64| pts.iter().all(|p| f(p) == f(&pts[0]));
                assert!(n < 3 || constant(|p| p.0) || constant(|p| p.1), "{m}");
                assert!(c.flags.contains(&"UNDEFINED".to_string()));
            }
        }
    }
    assert!(r.correlations.contains_key(NUISANCE_METRIC));
    let shard_info = &report.provenance.shards["sharded"];
    assert_eq!(shard_info.iter().map(|s| s.sessions).sum::<usize>(), 240);
}

#[test]
fn b3_requires_enough_units() {
    assert!(matches!(run_b3_bench(&b3_config(1, "[1, 2]")), Err(Error::InvalidConfig(_))));
    assert!(matches!(run_b3_bench(&b3_config(2, "[1]")), Err(Error::InvalidConfig(_))));
}

#[test]
fn perfectly_linear_metric_correlates_at_minus_one() {
    let taus = [0.9, 0.7, 0.5, 0.3, 0.1, -0.1];
    let metric: Vec<f64> = taus.iter().map(|t| 2.0 - 3.0 * t).collect();
    let c = pearson_test(&metric, &taus).unwrap();
    assert!((c.r + 1.0).abs() < 1e-12);
    assert!(c.p < 1e-6);
    assert_eq!(c.n, 6);
}

fn dialogue_session(id: &str, turns: usize, label: Label) -> Session {
    let mut events = Vec::new();
    for t in 0..turns {
        let ts = (t as i64) * 2000;
        events.push(Event::new(ts, None, Payload::ConvUser { text: format!("question {t} about item") }));
        events.push(Event::new(ts + 1000, None, Payload::ConvSystem { text: "answer".into() }));
    }
    let mut s = Session::real(id, "dialogue", events);
    if label == Label::Simulated {
        s.label = Label::Simulated;
        s.simulator_id = Some("scripted".into());
    }
    s
}

fn write_corpus(path: &Path, sessions: Vec<Session>) {
    let corpus = SessionCorpus::new(sessions, LossManifest::new("dialogue")).unwrap();
    write_jsonl(&corpus, path).unwrap();
}

#[test]
fn dialogue_only_corpus_runs_the_applicable_subset() {
    let dir = TempDir::new().unwrap();
    let real = dir.path().join("real.jsonl");
    let sim = dir.path().join("sim.jsonl");
    write_corpus(&real, (0..60).map(|i| dialogue_session(&format!("d{i}"), 1 + i % 4, Label::Real)).collect());
    write_corpus(
        &sim,
        (0..60)
            .map(|i| dialogue_session(&format!("d{i}::scripted"), 1 + (i + 1) % 3, Label::Simulated))
            .collect(),
    );
    let text = format!(
        "dataset:\n  id: dialogue\n  corpus: {}\nexternal_simulations:\n  - id: scripted\n    corpus: {}\nbootstrap:\n  resamples: 10\n",
        real.display(),
        sim.display()
    );
    let report = run_b1_bench(&BenchConfig::from_yaml_str(&text).unwrap()).unwrap();
    let BenchResults::B1(r) = &report.results else { panic!() };
    let cell = r.cell("dialogue", "scripted", 0).unwrap();
    for id in ["js_click_depth", "w1_dwell", "ks_click_depth"] {
        assert!(cell.report.inapplicable.contains_key(id), "{id} should be inapplicable");
        assert!(!cell.report.metrics.contains_key(id));
    }
    for id in ["js_session_length", "w1_session_length", "bigram_js", "nlev"] {
        assert!(cell.report.metrics[id].value.is_finite(), "{id}");
    }
    assert!(report.diagnostics.contains_key("simulated_without_relevance"));
}

#[test]
fn b1_without_simulators_is_a_config_error() {
    let text = format!("dataset:\n  id: x{}\n", SYNTH.replace("DS", "x").replace("\n    ", "\n  "));
    let cfg = BenchConfig::from_yaml_str(&text).unwrap();
    assert!(matches!(run_b1_bench(&cfg), Err(Error::InvalidConfig(_))));
}

//! Benchmark orchestration: configs, datasets, gates, provenance.

mod b1;
mod b2;
mod b3;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use b1::{run_b1_bench, B1Cell, B1Results};
pub use b2::{run_b2_bench, score_testers, B2Cell, B2Results, TesterAgreement, REFERENCE_TESTER};
pub use b3::{run_b3_bench, split_half_ks, B3Correlation, B3Record, B3Results, NUISANCE_METRIC};
pub use report::{emit_report, validate_report, Table, REPORT_SCHEMA, REPORT_SCHEMA_VERSION};

use crate::embeddings::{read_sidecar, EmbedLayout};
use crate::error::{Error, GateCode, Result};
use crate::ingest::{
    config_hash_of, generate_synthetic_dataset, has_session_structure, ingest_weblog, parse_qrels, Qrels,
    SessionizeConfig, SynthSpec,
};
use crate::reliability::RateConfig;
use crate::schema::{read_jsonl, ReadMode, SessionCorpus, SCHEMA_VERSION};
use crate::simulators::SimulatorConfig;
use crate::testbed::{synthetic_qrels, Gain, SyntheticQrelsSpec, TestbedConfig};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Benchmark {
    B1,
    B2,
    B3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    #[default]
    Jsonl,
    /// Tab-separated web query log, sessionized on load.
    Weblog,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub id: Option<String>,
    pub corpus: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub format: DatasetFormat,
    pub sessionize: Option<SessionizeConfig>,
    pub lenient: bool,
    /// Generate the corpus (and qrels when it has a relevance model).
    pub synthetic: Option<SynthSpec>,
    /// Generate positive-only qrels with no corpus (testbed-only datasets).
    pub synthetic_qrels: Option<SyntheticQrelsSpec>,
    pub synthetic_seed: u64,
    /// Split sessions into this many disjoint shards; seed i uses shard i mod shards.
    pub shards: Option<usize>,
}

impl DatasetConfig {
    fn resolve(&mut self, base: &Path) {
        for p in [&mut self.corpus, &mut self.qrels].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    fn has_qrels(&self) -> bool {
        self.qrels.is_some()
            || self.synthetic_qrels.is_some()
            || self.synthetic.as_ref().is_some_and(|s| s.relevance.is_some())
    }
}

/// A simulated corpus produced outside the toolkit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSimulation {
    pub id: String,
    pub corpus: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// B1 metric ids to compute; empty means all.
    pub b1: Vec<String>,
    /// B3 metrics correlated with τ; empty means every B1 metric plus the nuisance control.
    pub b3: Vec<String>,
    pub classifier: bool,
    pub mmd_unbiased: bool,
    pub include_timestamps: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            b1: Vec::new(),
            b3: Vec::new(),
            classifier: true,
            mmd_unbiased: true,
            include_timestamps: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub resamples: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { resamples: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub leakage_auc: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { leakage_auc: 0.55 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// JSONL sidecar of external vectors covering both real and simulated sessions.
    pub sidecar: Option<PathBuf>,
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub benchmark: Benchmark,
    pub benchmark_id: Option<String>,
    pub dataset: Option<DatasetConfig>,
    pub datasets: Vec<DatasetConfig>,
    pub simulators: Vec<SimulatorConfig>,
    pub external_simulations: Vec<ExternalSimulation>,
    pub seeds: Vec<u64>,
    pub metrics: MetricsConfig,
    pub bootstrap: BootstrapConfig,
    pub thresholds: Thresholds,
    pub embedding: EmbeddingConfig,
    pub folds: usize,
    pub testbed: TestbedConfig,
    pub replays: usize,
    pub k: usize,
    pub gain: Gain,
    pub rate: RateConfig,
    pub rate_include_reference: bool,
    pub output: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            benchmark: Benchmark::B1,
            benchmark_id: None,
            dataset: None,
            datasets: Vec::new(),
            simulators: Vec::new(),
            external_simulations: Vec::new(),
            seeds: vec![0],
            metrics: MetricsConfig::default(),
            bootstrap: BootstrapConfig::default(),
            thresholds: Thresholds::default(),
            embedding: EmbeddingConfig::default(),
            folds: 5,
            testbed: TestbedConfig::default(),
            replays: 8,
            k: 10,
            gain: Gain::Linear,
            rate: RateConfig::default(),
            rate_include_reference: true,
            output: None,
        }
    }
}

impl BenchConfig {
    pub fn from_yaml_str(text: &str) -> Result<Self> {
        let cfg: BenchConfig = serde_yaml::from_str(text)?;
        Ok(cfg)
    }

    /// Parse and resolve relative paths against the file's directory.
    pub fn from_yaml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_yaml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for d in self.dataset.iter_mut().chain(self.datasets.iter_mut()) {
            d.resolve(base);
        }
        for e in &mut self.external_simulations {
            if e.corpus.is_relative() {
                e.corpus = base.join(&e.corpus);
            }
        }
        if let Some(p) = &mut self.embedding.sidecar {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// `dataset` plus `datasets`, in order.
    pub fn all_datasets(&self) -> Vec<DatasetConfig> {
        self.dataset.iter().chain(&self.datasets).cloned().collect()
    }

    pub fn config_hash(&self) -> Result<String> {
        config_hash_of(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        if self.all_datasets().is_empty() {
            return Err(Error::InvalidConfig("no dataset configured".into()));
        }
        for s in &self.simulators {
            s.validate()?;
        }
        let mut ids: Vec<String> = self.simulators.iter().map(SimulatorConfig::simulator_id).collect();
        ids.extend(self.external_simulations.iter().map(|e| e.id.clone()));
        let n = ids.len();
        ids.sort();
        ids.dedup();
        if ids.len() != n {
            return Err(Error::InvalidConfig("simulator ids must be unique".into()));
        }
        if self.folds < 2 {
            return Err(Error::InvalidConfig("folds must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.thresholds.leakage_auc) {
            return Err(Error::InvalidConfig("thresholds.leakage_auc must lie in [0,1]".into()));
        }
        Ok(())
    }

    pub(crate) fn layout(&self) -> Result<EmbedLayout> {
        match &self.embedding.sidecar {
            None => Ok(EmbedLayout::ActSeqV1),
            Some(p) => Ok(EmbedLayout::External(read_sidecar(
                p,
                self.embedding.name.as_deref().unwrap_or("sidecar"),
            )?)),
        }
    }
}

/// Run-level provenance stamped into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub benchmark: Benchmark,
    pub benchmark_id: Option<String>,
    pub config_hash: String,
    pub schema_version: String,
    pub report_schema_version: String,
    pub tool_version: String,
    pub seeds: Vec<u64>,
    pub layout_id: String,
    /// dataset id -> dataset version
    pub dataset_versions: BTreeMap<String, String>,
    /// dataset id -> shard index -> (session count, sha256 of sorted session ids)
    pub shards: BTreeMap<String, Vec<ShardInfo>>,
    pub settings: BTreeMap<String, String>,
    pub run_timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardInfo {
    pub sessions: usize,
    pub ids_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateRecord {
    pub gate: GateCode,
    pub scope: String,
    pub passed: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BenchResults {
    B1(B1Results),
    B2(B2Results),
    B3(B3Results),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub provenance: Provenance,
    pub gates: Vec<GateRecord>,
    pub results: BenchResults,
    pub diagnostics: BTreeMap<String, serde_json::Value>,
}

impl BenchReport {
    /// Report JSON without the run timestamp, for determinism comparisons.
    pub fn content_without_timestamp(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(p) = v.get_mut("provenance").and_then(|p| p.as_object_mut()) {
            p.remove("run_timestamp");
        }
        v
    }
}

/// A dataset after loading, with optional shards.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub id: String,
    pub version: String,
    pub corpus: Option<SessionCorpus>,
    pub qrels: Option<Qrels>,
    pub shards: Vec<SessionCorpus>,
}

impl LoadedDataset {
    /// The real corpus used with the i-th seed.
    pub fn corpus_for_seed(&self, seed_index: usize) -> Option<&SessionCorpus> {
        if self.shards.is_empty() {
            self.corpus.as_ref()
        } else {
            Some(&self.shards[seed_index % self.shards.len()])
        }
    }

    pub fn shard_info(&self) -> Vec<ShardInfo> {
        self.shards
            .iter()
            .map(|s| {
                let mut ids: Vec<&str> = s.sessions.iter().map(|x| x.session_id.as_str()).collect();
                ids.sort_unstable();
                ShardInfo {
                    sessions: ids.len(),
                    ids_sha256: crate::ingest::config_hash(&serde_json::json!(ids)),
                }
            })
            .collect()
    }
}

pub fn load_dataset(cfg: &DatasetConfig, index: usize) -> Result<LoadedDataset> {
    let mut id = cfg.id.clone();
    let mut version = "unversioned".to_string();
    let mut corpus = None;
    let mut qrels = None;

    if let Some(spec) = &cfg.synthetic {
        let ds = generate_synthetic_dataset(spec, cfg.synthetic_seed)?;
        id.get_or_insert_with(|| spec.dataset_id.clone());
        version = ds.corpus.manifest.dataset_version.clone();
        if spec.relevance.is_some() {
            qrels = Some(ds.qrels);
        }
        corpus = Some(ds.corpus);
    } else if let Some(path) = &cfg.corpus {
        let c = match cfg.format {
            DatasetFormat::Jsonl => read_jsonl(path, if cfg.lenient { ReadMode::Lenient } else { ReadMode::Strict })?,
            DatasetFormat::Weblog => ingest_weblog(path, &cfg.sessionize.clone().unwrap_or_default())?,
        };
        id.get_or_insert_with(|| c.dataset_id().to_string());
        version = c.manifest.dataset_version.clone();
        corpus = Some(c);
    }
    if let Some(path) = &cfg.qrels {
        qrels = Some(parse_qrels(path)?);
    } else if let Some(spec) = &cfg.synthetic_qrels {
        qrels = Some(synthetic_qrels(spec, cfg.synthetic_seed));
        if corpus.is_none() {
            version = "synthetic-qrels-v1".into();
        }
    }
    let id = id.unwrap_or_else(|| format!("dataset{index}"));

    let shards = match (cfg.shards, &corpus) {
        (Some(n), Some(c)) if n > 1 => split_shards(c, n, cfg.synthetic_seed)?,
        _ => Vec::new(),
    };
    Ok(LoadedDataset {
        id,
        version,
        corpus,
        qrels,
        shards,
    })
}

/// Deterministic disjoint split: sessions ordered by a seeded hash of their id, dealt round-robin.
pub fn split_shards(c: &SessionCorpus, n: usize, seed: u64) -> Result<Vec<SessionCorpus>> {
    let mut keyed: Vec<(String, usize)> = c
        .sessions
        .iter()
        .enumerate()
        .map(|(i, s)| (crate::ingest::config_hash(&serde_json::json!([seed, s.session_id])), i))
        .collect();
    keyed.sort();
    let mut parts: Vec<Vec<crate::schema::Session>> = vec![Vec::new(); n];
    for (k, (_, i)) in keyed.into_iter().enumerate() {
        parts[k % n].push(c.sessions[i].clone());
    }
    parts
        .into_iter()
        .map(|p| {
            let mut m = c.manifest.clone();
            m.finish(&p);
            SessionCorpus::new(p, m)
        })
        .collect()
}

pub(crate) fn gate_structure(ds: &LoadedDataset) -> GateRecord {
    let ok = ds.corpus.as_ref().is_some_and(|c| has_session_structure(&c.sessions));
    GateRecord {
        gate: GateCode::GateNoSessionStructure,
        scope: ds.id.clone(),
        passed: ok,
        reason: if ok {
            "at least one session has two or more turns".into()
        } else {
            "no corpus session has two or more QUERY/CONV_USER turns".into()
        },
    }
}

pub(crate) fn gate_qrels(cfg: &DatasetConfig, scope: &str) -> GateRecord {
    let ok = cfg.has_qrels();
    GateRecord {
        gate: GateCode::GateNoQrels,
        scope: scope.into(),
        passed: ok,
        reason: if ok {
            "relevance judgments available".into()
        } else {
            "dataset has no qrels; B2 and B3 need judgments".into()
        },
    }
}

pub(crate) fn gate_error(g: &GateRecord) -> Error {
    Error::Gate {
        code: g.gate,
        reason: format!("{}: {}", g.scope, g.reason),
    }
}

pub(crate) fn provenance(cfg: &BenchConfig, datasets: &[LoadedDataset], layout: &EmbedLayout) -> Result<Provenance> {
    let mut settings = BTreeMap::new();
    settings.insert("bootstrap_resamples".into(), cfg.bootstrap.resamples.to_string());
    settings.insert("folds".into(), cfg.folds.to_string());
    settings.insert("gain".into(), format!("{:?}", cfg.gain).to_lowercase());
    settings.insert("replays".into(), cfg.replays.to_string());
    settings.insert("rate".into(), serde_json::to_string(&cfg.rate)?);
    settings.insert("rate_include_reference".into(), cfg.rate_include_reference.to_string());
    settings.insert("js_binning".into(), "unit bins; dwell 50 ln(1+x) bins".into());
    Ok(Provenance {
        benchmark: cfg.benchmark,
        benchmark_id: cfg.benchmark_id.clone(),
        config_hash: cfg.config_hash()?,
        schema_version: SCHEMA_VERSION.into(),
        report_schema_version: REPORT_SCHEMA_VERSION.into(),
        tool_version: TOOL_VERSION.into(),
        seeds: cfg.seeds.clone(),
        layout_id: layout.layout_id(),
        dataset_versions: datasets.iter().map(|d| (d.id.clone(), d.version.clone())).collect(),
        shards: datasets
            .iter()
            .filter(|d| !d.shards.is_empty())
            .map(|d| (d.id.clone(), d.shard_info()))
            .collect(),
        settings,
        run_timestamp: chrono::Utc::now().to_rfc3339(),
    })
}

/// Dispatch on `cfg.benchmark`.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    match cfg.benchmark {
        Benchmark::B1 => run_b1_bench(cfg),
        Benchmark::B2 => run_b2_bench(cfg),
        Benchmark::B3 => run_b3_bench(cfg),
    }
}

/// Run `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

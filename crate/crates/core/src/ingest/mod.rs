//! Log ingestion: raw formats to canonical corpora, with loss accounting.

mod hash;
mod qrels;
mod sessionize;
mod synth;
mod weblog;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, LineError, Result};
use crate::schema::{EventType, Payload, Session, SessionCorpus, SCHEMA_VERSION};

pub use hash::{canonical_json, config_hash, config_hash_of};
pub use qrels::{parse_qrels, parse_qrels_str, write_qrels, Qrels};
pub use sessionize::{sessionize, RawLogRecord, SessionizeConfig};
pub use synth::{
    generate_synthetic_dataset, generate_synthetic_log, SynthRelevance, SynthSpec,
    SyntheticDataset,
};
pub use weblog::{parse_weblog_tsv, parse_weblog_tsv_from, WeblogParse};

/// Maximum number of individual parse errors retained in a manifest.
const MAX_RECORDED_ERRORS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DropReason {
    BelowMinLength,
    ValidationFailed,
    ParseError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionizationParams {
    pub timeout_minutes: f64,
    pub min_session_events: usize,
}

/// Counts for one input file when a manifest covers several.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputCounts {
    pub source: String,
    pub input_record_count: u64,
    pub candidate_session_count: u64,
    pub emitted_session_count: u64,
    pub dropped_sessions_by_reason: BTreeMap<DropReason, u64>,
    pub dropped_records_by_reason: BTreeMap<DropReason, u64>,
}

/// Provenance of one ingestion: what was read, kept, dropped, and missing.
///
/// Accounting identity: `emitted_session_count + Σ dropped_sessions_by_reason
/// == candidate_session_count`. Record-level parse failures (rows that never
/// became part of a candidate session) are counted separately in
/// `dropped_records_by_reason`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossManifest {
    pub dataset_id: String,
    pub dataset_version: String,
    pub schema_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub input_record_count: u64,
    pub candidate_session_count: u64,
    pub emitted_session_count: u64,
    pub emitted_event_count: u64,
    pub dropped_sessions_by_reason: BTreeMap<DropReason, u64>,
    #[serde(default)]
    pub dropped_records_by_reason: BTreeMap<DropReason, u64>,
    #[serde(default)]
    pub dropped_lines: u64,
    #[serde(default)]
    pub dropped_fields: Vec<String>,
    pub missingness: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sessionization: Option<SessionizationParams>,
    /// Source timestamp resolution; 1000 when second-resolution times were scaled to ms.
    #[serde(default = "one")]
    pub timestamp_resolution_ms: u64,
    #[serde(default)]
    pub synthetic_serp_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<InputCounts>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parse_errors: Vec<LineError>,
}

fn one() -> u64 {
    1
}

impl LossManifest {
    pub fn new(dataset_id: impl Into<String>) -> Self {
        LossManifest {
            dataset_id: dataset_id.into(),
            dataset_version: "unversioned".into(),
            schema_version: SCHEMA_VERSION.into(),
            config_hash: config_hash(&serde_json::json!({})),
            seed: 0,
            input_record_count: 0,
            candidate_session_count: 0,
            emitted_session_count: 0,
            emitted_event_count: 0,
            dropped_sessions_by_reason: BTreeMap::new(),
            dropped_records_by_reason: BTreeMap::new(),
            dropped_lines: 0,
            dropped_fields: Vec::new(),
            missingness: BTreeMap::new(),
            sessionization: None,
            timestamp_resolution_ms: 1,
            synthetic_serp_count: 0,
            generator: None,
            inputs: Vec::new(),
            parse_errors: Vec::new(),
        }
    }

    pub fn dropped_sessions(&self) -> u64 {
        self.dropped_sessions_by_reason.values().sum()
    }

    /// `true` when emitted + dropped session counts reconcile with candidates.
    pub fn reconciles(&self) -> bool {
        self.emitted_session_count + self.dropped_sessions() == self.candidate_session_count
    }

    pub fn add_drop(&mut self, reason: DropReason, n: u64) {
        if n > 0 {
            *self.dropped_sessions_by_reason.entry(reason).or_default() += n;
        }
    }

    pub fn add_record_drop(&mut self, reason: DropReason, n: u64) {
        if n > 0 {
            *self.dropped_records_by_reason.entry(reason).or_default() += n;
        }
    }

    pub(crate) fn record_parse_errors(&mut self, errors: Vec<LineError>) {
        let room = MAX_RECORDED_ERRORS.saturating_sub(self.parse_errors.len());
        self.parse_errors.extend(errors.into_iter().take(room));
    }

    /// Fill the emitted-side counts and missingness from the final session list.
    pub fn finish(&mut self, sessions: &[Session]) {
        self.emitted_session_count = sessions.len() as u64;
        self.emitted_event_count = sessions.iter().map(|s| s.events.len() as u64).sum();
        self.synthetic_serp_count = sessions
            .iter()
            .flat_map(|s| &s.events)
            .filter(|e| matches!(e.payload, Payload::SerpView { synthetic: true, .. }))
            .count() as u64;
        self.missingness = missingness(sessions);
    }

    /// Fold another manifest into this one (e.g. several shards of one log).
    /// Top-level counts become cumulative; `inputs` keeps the per-run view.
    pub fn absorb(&mut self, source: impl Into<String>, other: &LossManifest) {
        self.inputs.push(InputCounts {
            source: source.into(),
            input_record_count: other.input_record_count,
            candidate_session_count: other.candidate_session_count,
            emitted_session_count: other.emitted_session_count,
            dropped_sessions_by_reason: other.dropped_sessions_by_reason.clone(),
            dropped_records_by_reason: other.dropped_records_by_reason.clone(),
        });
        self.input_record_count += other.input_record_count;
        self.candidate_session_count += other.candidate_session_count;
        self.dropped_lines += other.dropped_lines;
        for (r, n) in &other.dropped_sessions_by_reason {
            self.add_drop(*r, *n);
        }
        for (r, n) in &other.dropped_records_by_reason {
            self.add_record_drop(*r, *n);
        }
        for f in &other.dropped_fields {
            if !self.dropped_fields.contains(f) {
                self.dropped_fields.push(f.clone());
            }
        }
        self.record_parse_errors(other.parse_errors.clone());
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }
}

/// Per-field missingness over an emitted corpus.
///
/// * `user_hash`: sessions without a user hash.
/// * `query_id`: events without a query id.
/// * `dwell`: CLICK events never followed by a DWELL on the same doc.
/// * `serp_results`: SERP_VIEW events whose results were padded by the adapter.
///
/// A field with an empty denominator reports 0.
pub fn missingness(sessions: &[Session]) -> BTreeMap<String, f64> {
    let mut no_user = 0usize;
    let mut events = 0usize;
    let mut no_qid = 0usize;
    let mut clicks = 0usize;
    let mut clicks_without_dwell = 0usize;
    let mut serps = 0usize;
    let mut synthetic = 0usize;

    for s in sessions {
        if s.user_hash.is_none() {
            no_user += 1;
        }
        for (i, e) in s.events.iter().enumerate() {
            events += 1;
            if e.query_id.is_none() {
                no_qid += 1;
            }
            match &e.payload {
                Payload::Click { doc_id, .. } => {
                    clicks += 1;
                    let dwelled = s.events[i + 1..].iter().any(|later| {
                        matches!(&later.payload, Payload::Dwell { doc_id: d, .. } if d == doc_id)
                    });
                    if !dwelled {
                        clicks_without_dwell += 1;
                    }
                }
                Payload::SerpView { synthetic: syn, .. } => {
                    serps += 1;
                    if *syn {
                        synthetic += 1;
                    }
                }
                _ => {}
            }
        }
    }
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    BTreeMap::from([
        ("user_hash".to_string(), frac(no_user, sessions.len())),
        ("query_id".to_string(), frac(no_qid, events)),
        ("dwell".to_string(), frac(clicks_without_dwell, clicks)),
        ("serp_results".to_string(), frac(synthetic, serps)),
    ])
}

/// Whether any session has at least two interaction turns (queries or user
/// utterances), i.e. real session structure rather than isolated queries.
pub fn has_session_structure(sessions: &[Session]) -> bool {
    sessions.iter().any(|s| {
        s.event_types()
            .filter(|t| matches!(t, EventType::Query | EventType::ConvUser))
            .count()
            >= 2
    })
}

/// Parse a web-log TSV, sessionize it, and account for unparseable lines.
pub fn ingest_weblog(path: impl AsRef<Path>, cfg: &SessionizeConfig) -> Result<SessionCorpus> {
    let parsed = parse_weblog_tsv(path)?;
    corpus_from_weblog(parsed, cfg)
}

pub fn corpus_from_weblog(parsed: WeblogParse, cfg: &SessionizeConfig) -> Result<SessionCorpus> {
    let (sessions, mut manifest) = sessionize(&parsed.records, cfg);
    let bad = parsed.errors.len() as u64;
    manifest.input_record_count = parsed.data_rows;
    manifest.dropped_lines += bad;
    manifest.add_record_drop(DropReason::ParseError, bad);
    manifest.dropped_fields = parsed.dropped_fields;
    manifest.record_parse_errors(parsed.errors);
    SessionCorpus::new(sessions, manifest)
}

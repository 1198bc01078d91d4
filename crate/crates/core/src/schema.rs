//! Canonical session schema, validation, and the canonical JSONL storage format.
//!
//! One [`Session`] per line, UTF-8. Optional fields are absent keys, never `null`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, LineError, Result};
use crate::ingest::{DropReason, LossManifest};

pub const SCHEMA_VERSION: &str = "1.0";
pub const SCHEMA_MAJOR: u32 = 1;

/// The closed set of event types. `code()` is stable and used by embedding layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventType {
    Query,
    SerpView,
    Click,
    Dwell,
    ConvUser,
    ConvSystem,
}

impl EventType {
    pub const ALL: [EventType; 6] = [
        EventType::Query,
        EventType::SerpView,
        EventType::Click,
        EventType::Dwell,
        EventType::ConvUser,
        EventType::ConvSystem,
    ];
    pub const COUNT: usize = 6;

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventType::Query => "QUERY",
            EventType::SerpView => "SERP_VIEW",
            EventType::Click => "CLICK",
            EventType::Dwell => "DWELL",
            EventType::ConvUser => "CONV_USER",
            EventType::ConvSystem => "CONV_SYSTEM",
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerpResult {
    pub doc_id: String,
    pub rank: u32,
}

/// Type-specific event content. Serialized inline with the `type` tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Payload {
    Query {
        query_text: String,
    },
    SerpView {
        results: Vec<SerpResult>,
        /// Results were not observed in the source and were padded by the adapter.
        #[serde(default, skip_serializing_if = "is_false")]
        synthetic: bool,
    },
    Click {
        doc_id: String,
        rank: u32,
    },
    Dwell {
        doc_id: String,
        dwell_ms: u64,
    },
    ConvUser {
        text: String,
    },
    ConvSystem {
        text: String,
    },
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    #[serde(flatten)]
    pub payload: Payload,
    pub ts_ms: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_id: Option<String>,
}

impl Event {
    pub fn new(ts_ms: i64, query_id: Option<String>, payload: Payload) -> Self {
        Event {
            payload,
            ts_ms,
            query_id,
        }
    }

    pub fn kind(&self) -> EventType {
        match self.payload {
            Payload::Query { .. } => EventType::Query,
            Payload::SerpView { .. } => EventType::SerpView,
            Payload::Click { .. } => EventType::Click,
            Payload::Dwell { .. } => EventType::Dwell,
            Payload::ConvUser { .. } => EventType::ConvUser,
            Payload::ConvSystem { .. } => EventType::ConvSystem,
        }
    }

    pub fn query(ts_ms: i64, query_id: impl Into<String>, text: impl Into<String>) -> Self {
        Event::new(
            ts_ms,
            Some(query_id.into()),
            Payload::Query {
                query_text: text.into(),
            },
        )
    }

    /// SERP with ranks 1..n in the order given.
    pub fn serp<S: Into<String>>(
        ts_ms: i64,
        query_id: impl Into<String>,
        docs: impl IntoIterator<Item = S>,
    ) -> Self {
        let results = docs
            .into_iter()
            .enumerate()
            .map(|(i, d)| SerpResult {
                doc_id: d.into(),
                rank: i as u32 + 1,
            })
            .collect();
        Event::new(
            ts_ms,
            Some(query_id.into()),
            Payload::SerpView {
                results,
                synthetic: false,
            },
        )
    }

    pub fn click(ts_ms: i64, query_id: impl Into<String>, doc_id: impl Into<String>, rank: u32) -> Self {
        Event::new(
            ts_ms,
            Some(query_id.into()),
            Payload::Click {
                doc_id: doc_id.into(),
                rank,
            },
        )
    }

    pub fn dwell(ts_ms: i64, query_id: impl Into<String>, doc_id: impl Into<String>, dwell_ms: u64) -> Self {
        Event::new(
            ts_ms,
            Some(query_id.into()),
            Payload::Dwell {
                doc_id: doc_id.into(),
                dwell_ms,
            },
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    Real,
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub schema_version: String,
    pub session_id: String,
    pub dataset_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_hash: Option<String>,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulator_id: Option<String>,
    pub events: Vec<Event>,
}

impl Session {
    pub fn real(session_id: impl Into<String>, dataset_id: impl Into<String>, events: Vec<Event>) -> Self {
        Session {
            schema_version: SCHEMA_VERSION.to_string(),
            session_id: session_id.into(),
            dataset_id: dataset_id.into(),
            user_hash: None,
            label: Label::Real,
            simulator_id: None,
            events,
        }
    }

    pub fn count(&self, kind: EventType) -> usize {
        self.events.iter().filter(|e| e.kind() == kind).count()
    }

    pub fn event_types(&self) -> impl Iterator<Item = EventType> + '_ {
        self.events.iter().map(Event::kind)
    }

    pub fn has_synthetic_serp(&self) -> bool {
        self.events
            .iter()
            .any(|e| matches!(e.payload, Payload::SerpView { synthetic: true, .. }))
    }

    pub fn query_texts(&self) -> impl Iterator<Item = &str> {
        self.events.iter().filter_map(|e| match &e.payload {
            Payload::Query { query_text } => Some(query_text.as_str()),
            _ => None,
        })
    }

    pub fn click_ranks(&self) -> impl Iterator<Item = u32> + '_ {
        self.events.iter().filter_map(|e| match e.payload {
            Payload::Click { rank, .. } => Some(rank),
            _ => None,
        })
    }

    pub fn dwell_times(&self) -> impl Iterator<Item = u64> + '_ {
        self.events.iter().filter_map(|e| match e.payload {
            Payload::Dwell { dwell_ms, .. } => Some(dwell_ms),
            _ => None,
        })
    }
}

/// A set of sessions plus the manifest describing how they were obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCorpus {
    pub sessions: Vec<Session>,
    pub manifest: LossManifest,
}

impl SessionCorpus {
    /// Wrap sessions, checking the corpus-level invariants.
    pub fn new(sessions: Vec<Session>, manifest: LossManifest) -> Result<Self> {
        check_corpus(&sessions)?;
        Ok(SessionCorpus { sessions, manifest })
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn event_count(&self) -> usize {
        self.sessions.iter().map(|s| s.events.len()).sum()
    }

    pub fn dataset_id(&self) -> &str {
        &self.manifest.dataset_id
    }
}

fn check_corpus(sessions: &[Session]) -> Result<()> {
    let mut seen = HashSet::with_capacity(sessions.len());
    let mut version: Option<&str> = None;
    for s in sessions {
        if !seen.insert(s.session_id.as_str()) {
            return Err(Error::DuplicateSessionId(s.session_id.clone()));
        }
        match version {
            None => version = Some(&s.schema_version),
            Some(v) if v != s.schema_version => {
                return Err(Error::MixedSchemaVersions(v.to_string(), s.schema_version.clone()))
            }
            _ => {}
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    EmptySession,
    NonMonotoneTs,
    InvalidRank,
    SerpRanksNotContiguous,
    SerpDuplicateDoc,
    ClickWithoutSerp,
    ClickRankOutOfBounds,
    ClickDocMismatch,
    OrphanDwell,
    LabelSimulatorMismatch,
    SchemaVersionUnsupported,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::EmptySession => "EMPTY_SESSION",
            ViolationCode::NonMonotoneTs => "NON_MONOTONE_TS",
            ViolationCode::InvalidRank => "INVALID_RANK",
            ViolationCode::SerpRanksNotContiguous => "SERP_RANKS_NOT_CONTIGUOUS",
            ViolationCode::SerpDuplicateDoc => "SERP_DUPLICATE_DOC",
            ViolationCode::ClickWithoutSerp => "CLICK_WITHOUT_SERP",
            ViolationCode::ClickRankOutOfBounds => "CLICK_RANK_OUT_OF_BOUNDS",
            ViolationCode::ClickDocMismatch => "CLICK_DOC_MISMATCH",
            ViolationCode::OrphanDwell => "ORPHAN_DWELL",
            ViolationCode::LabelSimulatorMismatch => "LABEL_SIMULATOR_MISMATCH",
            ViolationCode::SchemaVersionUnsupported => "SCHEMA_VERSION_UNSUPPORTED",
        }
    }
}

/// A schema violation. `event_index` is `None` for session-level problems.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_index: Option<usize>,
    pub detail: String,
}

impl Violation {
    fn at(code: ViolationCode, idx: usize, detail: impl Into<String>) -> Self {
        Violation {
            code,
            event_index: Some(idx),
            detail: detail.into(),
        }
    }

    fn session(code: ViolationCode, detail: impl Into<String>) -> Self {
        Violation {
            code,
            event_index: None,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.event_index {
            Some(i) => write!(f, "{}@{}", self.code.as_str(), i),
            None => f.write_str(self.code.as_str()),
        }
    }
}

/// Check every schema invariant. Returns an empty list iff the session is valid.
pub fn validate_session(s: &Session) -> Vec<Violation> {
    let mut out = Vec::new();

    if schema_major(&s.schema_version) != Some(SCHEMA_MAJOR) {
        out.push(Violation::session(
            ViolationCode::SchemaVersionUnsupported,
            format!("schema_version {:?}", s.schema_version),
        ));
    }
    match (s.label, &s.simulator_id) {
        (Label::Simulated, None) => out.push(Violation::session(
            ViolationCode::LabelSimulatorMismatch,
            "SIMULATED session without simulator_id",
        )),
        (Label::Real, Some(id)) => out.push(Violation::session(
            ViolationCode::LabelSimulatorMismatch,
            format!("REAL session with simulator_id {id:?}"),
        )),
        _ => {}
    }
    if s.events.is_empty() {
        out.push(Violation::session(ViolationCode::EmptySession, "no events"));
        return out;
    }

    // Most recent SERP per query id: rank -> doc.
    let mut serps: HashMap<Option<&str>, Vec<Option<&str>>> = HashMap::new();
    let mut clicked: HashSet<&str> = HashSet::new();
    let mut prev_ts = i64::MIN;

    for (i, e) in s.events.iter().enumerate() {
        if e.ts_ms < prev_ts {
            out.push(Violation::at(
                ViolationCode::NonMonotoneTs,
                i,
                format!("ts {} after {}", e.ts_ms, prev_ts),
            ));
        }
        prev_ts = prev_ts.max(e.ts_ms);
        let qid = e.query_id.as_deref();

        match &e.payload {
            Payload::SerpView { results, .. } => {
                let n = results.len();
                let mut by_rank: Vec<Option<&str>> = vec![None; n];
                let mut docs = HashSet::with_capacity(n);
                let mut contiguous = true;
                for r in results {
                    if r.rank == 0 {
                        out.push(Violation::at(ViolationCode::InvalidRank, i, "SERP rank 0"));
                        contiguous = false;
                        continue;
                    }
                    let slot = r.rank as usize - 1;
                    if slot >= n || by_rank[slot].is_some() {
                        contiguous = false;
                    } else {
                        by_rank[slot] = Some(r.doc_id.as_str());
                    }
                    if !docs.insert(r.doc_id.as_str()) {
                        out.push(Violation::at(
                            ViolationCode::SerpDuplicateDoc,
                            i,
                            format!("doc {:?} listed twice", r.doc_id),
                        ));
                    }
                }
                if !contiguous {
                    out.push(Violation::at(
                        ViolationCode::SerpRanksNotContiguous,
                        i,
                        format!("ranks are not 1..{n}"),
                    ));
                }
                serps.insert(qid, by_rank);
            }
            Payload::Click { doc_id, rank } => {
                if *rank == 0 {
                    out.push(Violation::at(ViolationCode::InvalidRank, i, "click rank 0"));
                } else {
                    match serps.get(&qid) {
                        None => out.push(Violation::at(
                            ViolationCode::ClickWithoutSerp,
                            i,
                            format!("no preceding SERP_VIEW for query {qid:?}"),
                        )),
                        Some(serp) => {
                            let slot = *rank as usize - 1;
                            if slot >= serp.len() {
                                out.push(Violation::at(
                                    ViolationCode::ClickRankOutOfBounds,
                                    i,
                                    format!("rank {} on {}-result SERP", rank, serp.len()),
                                ));
                            } else if serp[slot] != Some(doc_id.as_str()) {
                                out.push(Violation::at(
                                    ViolationCode::ClickDocMismatch,
                                    i,
                                    format!("doc {doc_id:?} is not at rank {rank}"),
                                ));
                            }
                        }
                    }
                }
                clicked.insert(doc_id.as_str());
            }
            Payload::Dwell { doc_id, .. } => {
                if !clicked.contains(doc_id.as_str()) {
                    out.push(Violation::at(
                        ViolationCode::OrphanDwell,
                        i,
                        format!("dwell on unclicked doc {doc_id:?}"),
                    ));
                }
            }
            Payload::Query { .. } | Payload::ConvUser { .. } | Payload::ConvSystem { .. } => {}
        }
    }
    out
}

pub fn schema_major(version: &str) -> Option<u32> {
    version.split('.').next()?.parse().ok()
}

/// How `read_jsonl` treats lines that fail to parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReadMode {
    /// Abort on any bad line, reporting all bad lines.
    #[default]
    Strict,
    /// Drop bad lines and count them in the manifest.
    Lenient,
}

pub fn read_jsonl(path: impl AsRef<Path>, mode: ReadMode) -> Result<SessionCorpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl_from(BufReader::new(file), mode).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_jsonl_from<R: BufRead>(reader: R, mode: ReadMode) -> Result<SessionCorpus> {
    let mut sessions = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    let mut records = 0u64;

    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        records += 1;
        let lineno = idx + 1;
        let value: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                errors.push(LineError {
                    line: lineno,
                    message: e.to_string(),
                });
                continue;
            }
        };
        if let Some(v) = value.get("schema_version").and_then(|v| v.as_str()) {
            if schema_major(v) != Some(SCHEMA_MAJOR) {
                return Err(Error::SchemaVersionUnsupported {
                    found: v.to_string(),
                    supported: SCHEMA_MAJOR,
                });
            }
        }
        match serde_json::from_value::<Session>(value) {
            Ok(s) => {
                if !seen.insert(s.session_id.clone()) {
                    errors.push(LineError {
                        line: lineno,
                        message: format!("duplicate session id {:?}", s.session_id),
                    });
                    continue;
                }
                sessions.push(s);
            }
            Err(e) => errors.push(LineError {
                line: lineno,
                message: e.to_string(),
            }),
        }
    }

    if mode == ReadMode::Strict && !errors.is_empty() {
        return Err(Error::Parse { errors });
    }

    let dataset_id = sessions
        .first()
        .map(|s| s.dataset_id.clone())
        .unwrap_or_default();
    let mut manifest = LossManifest::new(dataset_id);
    manifest.input_record_count = records;
    manifest.candidate_session_count = records;
    manifest.dropped_lines = errors.len() as u64;
    if !errors.is_empty() {
        manifest
            .dropped_sessions_by_reason
            .insert(DropReason::ParseError, errors.len() as u64);
    }
    manifest.record_parse_errors(errors);
    manifest.finish(&sessions);
    SessionCorpus::new(sessions, manifest)
}

pub fn write_jsonl(corpus: &SessionCorpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_jsonl_to(&corpus.sessions, &mut w).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_jsonl_to<W: Write>(sessions: &[Session], w: &mut W) -> Result<()> {
    for s in sessions {
        serde_json::to_writer(&mut *w, s)?;
        w.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

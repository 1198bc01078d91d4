//! Fixed-length session vectors for representation-level metrics.
//!
//! The default layout `act-seq-v1` (46 dims):
//!
//! | index  | feature                                             |
//! |--------|-----------------------------------------------------|
//! | 0..6   | event-type frequencies (count / total events)       |
//! | 6..42  | row-normalized 6×6 transition matrix, row-major     |
//! | 42     | ln(1 + event count)                                 |
//! | 43     | mean click rank (0 without clicks)                  |
//! | 44     | ln(1 + mean dwell_ms) (0 without dwell events)      |
//! | 45     | query count                                         |
//!
//! Timestamps never enter the layout.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, LineError, Result};
use crate::schema::{EventType, Session, SessionCorpus};

pub const ACT_SEQ_V1: &str = "act-seq-v1";
pub const ACT_SEQ_DIM: usize = 46;

pub const FREQ: std::ops::Range<usize> = 0..6;
pub const TRANSITIONS: std::ops::Range<usize> = 6..42;
pub const EVENT_COUNT: usize = 42;
pub const MEAN_CLICK_RANK: usize = 43;
pub const LOG_MEAN_DWELL: usize = 44;
pub const QUERY_COUNT: usize = 45;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEmbedding {
    pub vector: Vec<f64>,
    pub layout_id: String,
}

/// Vectors supplied by an external embedder, keyed by session id.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalEmbeddings {
    pub name: String,
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum EmbedLayout {
    #[default]
    ActSeqV1,
    External(ExternalEmbeddings),
}

impl EmbedLayout {
    pub fn layout_id(&self) -> String {
        match self {
            EmbedLayout::ActSeqV1 => ACT_SEQ_V1.to_string(),
            EmbedLayout::External(e) => format!("external:{}", e.name),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            EmbedLayout::ActSeqV1 => ACT_SEQ_DIM,
            EmbedLayout::External(e) => e.dim,
        }
    }
}

/// The act-seq-v1 vector of one session.
pub fn act_seq(s: &Session) -> [f64; ACT_SEQ_DIM] {
    let mut v = [0.0; ACT_SEQ_DIM];
    let n = s.events.len();
    if n == 0 {
        return v;
    }
    let mut trans = [[0.0f64; EventType::COUNT]; EventType::COUNT];
    let mut prev: Option<usize> = None;
    for e in &s.events {
        let c = e.kind().code();
        v[FREQ.start + c] += 1.0;
        if let Some(p) = prev {
            trans[p][c] += 1.0;
        }
        prev = Some(c);
    }
    for f in &mut v[FREQ] {
        *f /= n as f64;
    }
    for (i, row) in trans.iter().enumerate() {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            for (j, &x) in row.iter().enumerate() {
                v[TRANSITIONS.start + i * EventType::COUNT + j] = x / total;
            }
        }
    }
    v[EVENT_COUNT] = (1.0 + n as f64).ln();
    v[MEAN_CLICK_RANK] = mean(s.click_ranks().map(f64::from));
    let dwell = mean(s.dwell_times().map(|d| d as f64));
    v[LOG_MEAN_DWELL] = if dwell > 0.0 { (1.0 + dwell).ln() } else { 0.0 };
    v[QUERY_COUNT] = s.count(EventType::Query) as f64;
    v
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn embed_session(s: &Session, layout: &EmbedLayout) -> Result<SessionEmbedding> {
    let vector = match layout {
        EmbedLayout::ActSeqV1 => act_seq(s).to_vec(),
        EmbedLayout::External(e) => e
            .vectors
            .get(&s.session_id)
            .cloned()
            .ok_or_else(|| Error::InvalidConfig(format!("no external embedding for session {}", s.session_id)))?,
    };
    Ok(SessionEmbedding {
        vector,
        layout_id: layout.layout_id(),
    })
}

/// Row i embeds session i.
pub fn embed_corpus(corpus: &SessionCorpus, layout: &EmbedLayout) -> Result<DMatrix<f64>> {
    embed_sessions(&corpus.sessions, layout)
}

pub fn embed_sessions(sessions: &[Session], layout: &EmbedLayout) -> Result<DMatrix<f64>> {
    let dim = layout.dim();
    let rows: Vec<Vec<f64>> = sessions
        .par_iter()
        .map(|s| embed_session(s, layout).map(|e| e.vector))
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]))
}

#[derive(Deserialize)]
struct SidecarLine {
    session_id: String,
    vector: Vec<f64>,
}

/// Read a sidecar file of `{"session_id": .., "vector": [..]}` lines.
pub fn read_sidecar(path: impl AsRef<Path>, name: &str) -> Result<ExternalEmbeddings> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_sidecar_from(BufReader::new(f), name)
}

pub fn read_sidecar_from<R: BufRead>(reader: R, name: &str) -> Result<ExternalEmbeddings> {
    let mut vectors = HashMap::new();
    let mut dim = None;
    let mut errors = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<sidecar>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| LineError { line: i + 1, message };
        match serde_json::from_str::<SidecarLine>(&line) {
            Err(e) => errors.push(err(e.to_string())),
            Ok(l) => {
                if !l.vector.iter().all(|x| x.is_finite()) {
                    errors.push(err("non-finite entry".into()));
                } else if *dim.get_or_insert(l.vector.len()) != l.vector.len() {
                    errors.push(err(format!("dimension {} differs from {}", l.vector.len(), dim.unwrap())));
                } else if vectors.insert(l.session_id.clone(), l.vector).is_some() {
                    errors.push(err(format!("duplicate session_id {}", l.session_id)));
                }
            }
        }
    }
    if !errors.is_empty() {
        return Err(Error::Parse { errors });
    }
    Ok(ExternalEmbeddings {
        name: name.to_string(),
        dim: dim.unwrap_or(0),
        vectors,
    })
}

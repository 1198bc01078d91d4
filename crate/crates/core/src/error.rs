use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the toolkit.
///
/// Validation problems inside a session are never errors; they are reported as
/// [`crate::schema::Violation`]s. Errors are reserved for conditions that stop
/// an operation from producing a result at all.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported schema version {found:?} (reader supports {supported}.x)")]
    SchemaVersionUnsupported { found: String, supported: u32 },

    #[error("{} line(s) failed to parse; first at line {}: {}", .errors.len(), .errors[0].line, .errors[0].message)]
    Parse { errors: Vec<LineError> },

    #[error("duplicate session id {0:?}")]
    DuplicateSessionId(String),

    #[error("corpus mixes schema versions {0:?} and {1:?}")]
    MixedSchemaVersions(String, String),

    #[error("empty distribution")]
    EmptyDistribution,

    #[error("constant vector: correlation undefined")]
    ConstantVector,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("incomplete pairing: {0} simulated session(s) without a real counterpart")]
    UnpairedSessions(usize),

    #[error("no session has two or more queries")]
    NoMultiQuerySessions,

    #[error("insufficient sessions: need {needed} per class, have {have}")]
    InsufficientSessions { needed: usize, have: usize },

    #[error("insufficient queries: requested {requested}, available {available}")]
    InsufficientQueries { requested: usize, available: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("simulator {simulator} emitted an invalid session {session_id}: {codes}")]
    InvalidSimulatorOutput {
        simulator: String,
        session_id: String,
        codes: String,
    },

    #[error("gate refused: {code}: {reason}")]
    Gate { code: GateCode, reason: String },

    #[error("report does not match schema: {0}")]
    ReportSchema(String),

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),

    #[error("yaml: {0}")]
    Yaml(#[from] serde_yaml::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// A per-line parse failure (1-based line numbers).
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

/// Reasons a benchmark refuses to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GateCode {
    GateNoQrels,
    GateNoSessionStructure,
}

impl std::fmt::Display for GateCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GateCode::GateNoQrels => "GATE_NO_QRELS",
            GateCode::GateNoSessionStructure => "GATE_NO_SESSION_STRUCTURE",
        })
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

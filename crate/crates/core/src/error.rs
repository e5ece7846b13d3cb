use std::path::PathBuf;

use crate::roadgraph::SegmentId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty-roadgraph")]
    EmptyRoadgraph,
    #[error("unknown-segment: {0}")]
    UnknownSegment(SegmentId),
    #[error("invalid-roadgraph: {0}")]
    InvalidRoadgraph(String),
    #[error("invalid-route: {0}")]
    InvalidRoute(String),
    #[error("invalid-world-params: {0}")]
    InvalidWorldParams(String),
    #[error("spawn-failed after {0} attempts")]
    SpawnFailed(usize),
    #[error("not-enough-agents: need {need}, found {found}")]
    NotEnoughAgents { need: usize, found: usize },
    #[error("invalid-segment: {0}")]
    InvalidSegment(String),
    #[error("invalid-agent: {0}")]
    InvalidAgent(usize),
    #[error("unsupported-schema: {0}")]
    UnsupportedSchema(String),
    #[error("malformed record at line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("shape-error at layer {layer}: {msg}")]
    Shape { layer: usize, msg: String },
    #[error("bad-label: {label} not in 0..{classes}")]
    BadLabel { label: usize, classes: usize },
    #[error("nonfinite-grad in block {0}")]
    NonFiniteGrad(String),
    #[error("nondifferentiable-region")]
    NondifferentiableRegion,
    #[error("no-feasible-routes")]
    NoFeasibleRoutes,
    #[error("incomplete-window: {recorded} of {window} steps recorded")]
    IncompleteWindow { recorded: usize, window: usize },
    #[error("empty-batch")]
    EmptyBatch,
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

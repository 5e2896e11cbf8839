use thiserror::Error;

/// Errors surfaced by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("weight not integrable: {0}")]
    WeightNotIntegrable(String),
    #[error("nonpositive mass weight at node {node}")]
    NonpositiveMass { node: usize },
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("Hypothesis H violated: {0}")]
    HypothesisH(String),
    #[error("missed critical point: {0}")]
    MissedCriticalPoint(String),
    #[error("near-critical contour at level {level}: {reason}")]
    NearCritical { level: f64, reason: String },
    #[error("contour failed to close after {steps} steps at level {level}")]
    OpenContour { level: f64, steps: usize },
    #[error("narrow domain rejected: {0}")]
    NarrowDomain(String),
    #[error("point outside labeled region: ({0}, {1})")]
    OutsideDomain(f64, f64),
    #[error("empty shell bin at node {node} of edge {edge}")]
    EmptyShell { edge: usize, node: usize },
    #[error("blow-up: norm {norm:e} exceeded guard at step {step}")]
    BlowUp { step: usize, norm: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("optimizer failed: {0}")]
    Optimizer(String),
    #[error("insufficient sampling: {0}")]
    InsufficientSampling(String),
    #[error("CFL violation: dt = {dt:e} exceeds limit {limit:e}")]
    Cfl { dt: f64, limit: f64 },
    #[error("sample {index}: {source}")]
    Sample { index: u64, source: Box<Error> },
    #[error("io: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

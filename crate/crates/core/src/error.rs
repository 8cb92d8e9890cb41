use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time {t} outside snapshot span [{first}, {last}]")]
    OutOfTemporalRange { t: f64, first: f64, last: f64 },

    #[error("point {point:?} left the spatial domain at t = {time}")]
    OutOfSpatialDomain { point: Vec<f64>, time: f64 },

    #[error("box size {box_size} does not tile extent {extent} on axis {axis}")]
    NonCommensurate { axis: usize, extent: f64, box_size: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid flow map: {0}")]
    InvalidFlow(String),

    #[error("negative weight {value} at box {index}")]
    NegativeWeight { index: usize, value: f64 },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("every sample left the domain")]
    AllMassLost,

    #[error("measure is degenerate: {0}")]
    MeasureDegenerate(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("system too small for a second singular triplet (m = {m}, n = {n})")]
    TooSmall { m: usize, n: usize },

    #[error("set has zero reference mass")]
    ZeroMassSet,

    #[error("vector is constant; no threshold splits it")]
    DegenerateVector,

    #[error("brute-force enumeration limited to {limit} boxes per side (m = {m}, n = {n})")]
    TooLarge { m: usize, n: usize, limit: usize },

    #[error("no balanced split exists")]
    NoBalancedSplit,

    #[error("manifest invalid: {0}")]
    ManifestInvalid(String),

    #[error("{path}: expected {expected} values, found {found}")]
    SizeMismatch { path: PathBuf, expected: usize, found: usize },

    #[error("axis {axis} is not strictly increasing")]
    NonMonotoneAxis { axis: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Tag with the pipeline stage that failed.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            e => Error::Stage { stage, source: Box::new(e) },
        }
    }

    /// The error beneath any stage tag.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for errors caused by the input rather than by the computation.
    pub fn is_usage(&self) -> bool {
        matches!(
            self.root(),
            Error::Config(_)
                | Error::Parse { .. }
                | Error::Io { .. }
                | Error::ManifestInvalid(_)
                | Error::InvalidFlow(_)
                | Error::InvalidGrid(_)
                | Error::NonCommensurate { .. }
                | Error::NonMonotoneAxis { .. }
                | Error::SizeMismatch { .. }
                | Error::NegativeWeight { .. }
        )
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse { path: path.into(), message: message.to_string() }
    }
}

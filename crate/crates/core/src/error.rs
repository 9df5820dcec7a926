use thiserror::Error;

/// Errors raised while building or validating inputs.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("no subjects")]
    NoSubjects,
    #[error("row {row}: negative time {time}")]
    NegativeTime { row: usize, time: f64 },
    #[error("row {row}: non-finite time")]
    NonFiniteTime { row: usize },
    #[error("row {row}: status must be 0 or 1, got {status}")]
    BadStatus { row: usize, status: String },
    #[error("row {row}: expected {expected} covariates, found {found}")]
    CovariateCount { row: usize, expected: usize, found: usize },
    #[error("row {row}: non-finite covariate value")]
    NonFiniteCovariate { row: usize },
    #[error("empty subset")]
    EmptySubset,
    #[error("duplicate node label {0:?}")]
    DuplicateNode(String),
    #[error("unknown node label {0:?}")]
    UnknownNode(String),
    #[error("self-loop on {0:?}")]
    SelfLoop(String),
    #[error("node {0:?} has no centroid")]
    MissingCentroid(String),
    #[error("distance matrix has no positive finite entry")]
    AllZeroMatrix,
    #[error("invalid weight scheme: {0}")]
    InvalidScheme(String),
    #[error("distance source {found} does not match scheme ({expected})")]
    SourceMismatch { expected: &'static str, found: &'static str },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("index {index} out of bounds for {len} locations")]
    OutOfBounds { index: usize, len: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("at least 2 replicates are required")]
    TooFewReplicates,
    #[error("baseline location {0:?} not in graph")]
    MissingBaseline(String),
    #[error("graph is disconnected from baseline {0:?}")]
    Disconnected(String),
    #[error("no bandwidth in the grid produced a valid criterion")]
    NoValidBandwidth,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("{0}")]
    Parse(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.position() {
            Some(pos) => Error::Parse(format!("line {}: {}", pos.line(), e)),
            None => Error::Io(e.to_string()),
        }
    }
}

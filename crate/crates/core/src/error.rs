use thiserror::Error;

/// Every failure surfaced by the library.
///
/// The display strings carry stable phrases ("invalid scale", "degenerate
/// loadings", ...) that callers and the CLI match on.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("nonfinite input")]
    NonFinite,

    #[error("invalid scale")]
    InvalidScale,

    #[error("invalid degrees of freedom: {0}")]
    InvalidDof(f64),

    #[error("degenerate variational covariance")]
    DegenerateCovariance,

    #[error("insufficient observations: study {study} has {n} rows, needs more than {needed}")]
    InsufficientObservations { study: usize, n: usize, needed: usize },

    #[error("unidentified shared loadings (row {row})")]
    UnidentifiedSharedLoadings { row: usize },

    #[error("unidentified study loadings (study {study})")]
    UnidentifiedStudyLoadings { study: usize },

    #[error("degenerate spectrum")]
    DegenerateSpectrum,

    #[error("degenerate estimate")]
    DegenerateEstimate,

    #[error("zero truth")]
    ZeroTruth,

    #[error("degenerate loadings")]
    DegenerateLoadings,

    #[error("unknown scenario: {0}")]
    UnknownScenario(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid factor counts: {0}")]
    InvalidCounts(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(e.to_string()),
            _ => Error::Parse(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

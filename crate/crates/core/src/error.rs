use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("distribution contract violated: {0}")]
    DistributionContract(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Analytical quantity requested outside its domain (e.g. an unstable
    /// M/G/1 queue).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("no closed form available for {0}")]
    UnsupportedClosedForm(String),

    /// An internal precondition that the dynamics guarantee did not hold.
    #[error("logic error: {0}")]
    Logic(String),

    #[error("dominance violated at event {event_index} ({kind}): {dump}")]
    Dominance {
        event_index: u64,
        kind: ViolationKind,
        dump: String,
    },

    #[error("search failed: {0}")]
    Search(String),

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Which coupling relation failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// Original maximum workload exceeded the coupled M/G/1 workload.
    MaxWorkload,
    /// An ordered gap of the original system exceeded the auxiliary one.
    Gap,
}

impl std::fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ViolationKind::MaxWorkload => f.write_str("max workload above M/G/1 workload"),
            ViolationKind::Gap => f.write_str("ordered gap above auxiliary gap"),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the command line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Invalid input, configuration or hyperparameters.
    Validation,
    /// Non-finite intermediate, failed generation or similar numeric trouble.
    Numeric,
    /// File system or serialization trouble.
    Io,
}

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    /// A non-finite value appeared. `layer` and `head` are 1-based when present.
    #[error("non-finite value in {what} (layer {layer:?}, head {head:?})")]
    Numeric {
        what: &'static str,
        layer: Option<usize>,
        head: Option<usize>,
    },

    #[error("{what} index {index} out of range (len {len})")]
    Bounds {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("dimension mismatch in {what}: expected {expected:?}, got {got:?}")]
    Dimension {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid modality partition: {0}")]
    InvalidPartition(String),

    #[error("incomplete attention trace: {0}")]
    IncompleteTrace(String),

    #[error("invalid thresholds: tau_reas = {tau_reas} must be < tau_perc = {tau_perc}, tau_perc in (0,1], tau_reas in [0,1)")]
    InvalidThreshold { tau_perc: f64, tau_reas: f64 },

    #[error("invalid layer boundaries: {0}")]
    InvalidBoundaries(String),

    /// Head qualified both as perception and reasoning (1-based indices).
    #[error("head (layer {layer}, head {head}) qualifies as both perception and reasoning")]
    Ambiguous { layer: usize, head: usize },

    #[error("invalid gain policy: {0}")]
    InvalidPolicy(String),

    #[error("incomparable policies: {0}")]
    IncomparablePolicies(String),

    #[error("invalid direction: {0}")]
    InvalidDirection(String),

    #[error("invalid gates: {0}")]
    InvalidGates(String),

    #[error("invalid input: {0}")]
    Input(String),

    /// Planted band could not be reached (1-based indices).
    #[error("planted generation failed for layer {layer}, head {head} after {attempts} attempts: {reason}")]
    GenerationFailure {
        layer: usize,
        head: usize,
        attempts: usize,
        reason: String,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Numeric { .. } | Error::GenerationFailure { .. } => ErrorClass::Numeric,
            Error::Format { .. } | Error::Io { .. } => ErrorClass::Io,
            _ => ErrorClass::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

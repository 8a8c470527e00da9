//! Gait-based Parkinson's screening from wearable vertical ground-reaction
//! force (vGRF) sensors.
//!
//! The crate is organised as a pipeline:
//!
//! * [`gaitdata`] parses 19-column vGRF recordings, cohort manifests, and
//!   generates synthetic two-class datasets for testing without real data.
//! * [`preprocess`] normalises, reduces left/right pairs to 8 differential
//!   channels, segments fixed-length gait cycles, and splits datasets.
//! * [`neuralcore`] holds the model: per-node 1D convolutions, a stacked GRU,
//!   graph attention over the 8-sensor graph, mean pooling, and a sigmoid
//!   head. Forward and backward passes are written out analytically; there is
//!   no autograd.
//! * [`training`] implements binary cross-entropy, Adam, the epoch loop, and
//!   a self-describing binary checkpoint format.
//! * [`evaluation`] computes confusion-matrix metrics, ROC/AUC, and
//!   attention-based per-sensor importance scores.
//!
//! Everything is deterministic: all randomness flows from explicit seeds, and
//! cross-node reductions sum in a value-sorted order so node relabelling
//! cannot change results even at the bit level.

use std::fmt;
use std::io;
use std::path::PathBuf;

pub mod evaluation;
pub mod gaitdata;
pub mod neuralcore;
pub mod preprocess;
pub mod training;

// ── Errors ──────────────────────────────────────────────────────────────────

/// Crate-wide error type.
#[derive(Debug)]
pub enum Error {
    /// I/O failure, with the path that was being touched.
    Io { path: PathBuf, source: io::Error },
    /// Malformed input text; `line` is 1-based, 0 when not line-addressable.
    Parse { file: String, line: usize, msg: String },
    /// Bad manifest or dataset layout.
    Data(String),
    /// Invalid sensor graph.
    Graph(String),
    /// Tensor shape mismatch.
    Shape(String),
    /// Invalid configuration value.
    Config(String),
    /// Corrupt or incompatible checkpoint.
    Checkpoint(String),
    /// Training-time failure (divergence, misuse of the forward cache, ...).
    Train(String),
    /// Evaluation-time failure (degenerate inputs, ...).
    Eval(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, source } => write!(f, "{}: {}", path.display(), source),
            Error::Parse { file, line, msg } => {
                if *line == 0 {
                    write!(f, "{file}: {msg}")
                } else {
                    write!(f, "{file}:{line}: {msg}")
                }
            }
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Graph(msg) => write!(f, "graph error: {msg}"),
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Checkpoint(msg) => write!(f, "checkpoint error: {msg}"),
            Error::Train(msg) => write!(f, "training error: {msg}"),
            Error::Eval(msg) => write!(f, "evaluation error: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    /// Attach a path to a raw I/O error.
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Parse error with a file label and 1-based line number.
    pub fn parse(file: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { file: file.into(), line, msg: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

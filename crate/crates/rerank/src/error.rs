//! Crate-wide error type.

use std::io;

use thiserror::Error;

/// Unified error type for every stage of the ranking pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes; carries both offending shapes.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    /// A required parameter record is absent from a model file.
    #[error("missing parameter {0}")]
    MissingParameter(String),

    /// A parameter record's dimension metadata does not cover its flat weights.
    #[error(
        "reshape error in parameter {name}: dims {dims:?} imply {expected} weights, found {found}"
    )]
    Reshape {
        name: String,
        dims: Vec<usize>,
        expected: usize,
        found: usize,
    },

    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u64),

    /// A model file that is not parseable at all (bad JSON, wrong top-level shape).
    #[error("model format error: {0}")]
    ModelFormat(String),

    /// An index file that does not follow the `IDX1` layout.
    #[error("index format error: {0}")]
    IndexFormat(String),

    /// A structurally valid input that violates a domain invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Network-level failure talking to a score server.
    #[error("transport error: {0}")]
    Transport(#[source] io::Error),

    /// The server answered with an error response.
    #[error("remote error: {0}")]
    Remote(String),

    /// The server answered with something that violates the wire contract.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("frame too large: {0} bytes exceeds the 1 MiB cap")]
    FrameTooLarge(u64),

    /// A benchmark run that died partway through; reports how far it got.
    #[error("benchmark aborted after {completed} samples: {cause}")]
    BenchAborted {
        completed: usize,
        #[source]
        cause: Box<Error>,
    },

    #[error("codegen error: {0}")]
    Codegen(String),
}

pub type Result<T> = std::result::Result<T, Error>;

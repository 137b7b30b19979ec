//! Multi-stage question-answering ranking engine.
//!
//! The pipeline retrieves candidate documents with BM25 ([`retrieval`]),
//! segments them into sentences ([`textproc`]), and rescores each sentence
//! with a Siamese convolutional network ([`inference`] over [`tensor`]
//! kernels, parameters in [`model`]). The scorer is servable over a simple
//! length-prefixed RPC protocol ([`service`]), compilable into a standalone
//! evaluator with baked-in weights ([`codegen`]), and measurable for
//! throughput and latency percentiles ([`bench`]). [`pipeline`] wires the
//! stages end to end; the `rerankd` binary exposes everything as
//! subcommands.

pub mod bench;
pub mod codegen;
pub mod error;
pub mod inference;
pub mod model;
pub mod pipeline;
pub mod retrieval;
pub mod service;
pub mod tensor;
pub mod textproc;

pub use error::{Error, Result};

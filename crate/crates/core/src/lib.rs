//! Lossless coding with next-token probability models, a computable
//! algorithmic-probability prior built on top of it, and the tooling that
//! exercises both: a convergence laboratory for sequential predictors and a
//! confidence-driven few-shot example selector.
//!
//! Module map:
//!
//! - [`prefix_code`]: Elias gamma codes, bit strings and the prefix-coded
//!   program container.
//! - [`model`]: alphabets, distributions, uniform / n-gram models and label
//!   scorers (local and remote).
//! - [`codec`]: the range coder that turns a model into a lossless codec.
//! - [`solomonoff`]: log-domain priors, conditional predictions and the
//!   numerical checks built on them.
//! - [`convergence`]: Monte Carlo cumulative-error experiments.
//! - [`fewshot`]: datasets, prompt templates, greedy selection and evaluation.

pub mod codec;
pub mod convergence;
pub mod fewshot;
pub mod model;
pub mod prefix_code;
pub mod solomonoff;

pub use codec::{analytic_code_length, compress, decompress, CompressedPayload};
pub use model::{Alphabet, Distribution, NGramModel, SequenceModel, TokenSequence, UniformModel};
pub use prefix_code::{BitString, ProgramEncoding};

/// Crate version, embedded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

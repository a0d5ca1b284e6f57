//! Probability-level fusion of a small domain-expert language model with a
//! large black-box generalist.
//!
//! The pipeline is:
//!
//! 1. [`text`]: build a shared vocabulary, tokenize and chunk corpora, split
//!    them into train / train-fit / test sets.
//! 2. [`lm`]: produce full next-token distributions from stand-in n-gram
//!    models or a remote model behind an HTTP endpoint, and persist them into
//!    a [`lm::DistCache`].
//! 3. [`combine`]: the seven combination functions mapping two distributions
//!    to one, backed by the small networks in [`nn`].
//! 4. [`fit`]: learn the combination parameters on a cache by minimising the
//!    next-token negative log-likelihood.
//! 5. [`eval`]: perplexity, the max-prob oracle, Spearman analysis, heatmaps
//!    and experiment drivers.

pub mod binio;
pub mod combine;
pub mod error;
pub mod eval;
pub mod fit;
pub mod lm;
pub mod nn;
pub mod synth;
pub mod text;

pub use combine::{CombinationParams, Kind};
pub use error::{Error, Result};
pub use lm::{DistCache, LanguageModel, NGramLM};
pub use text::{TokenSequence, Vocabulary};

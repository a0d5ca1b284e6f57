//! Next-token distributions: the [`LanguageModel`] abstraction, the n-gram
//! stand-ins, the remote black-box client and the distribution cache.

mod cache;
mod loopback;
mod ngram;
mod remote;

use std::ops::Deref;

pub use cache::{dump_cache, DistCache};
pub use loopback::LoopbackServer;
pub use ngram::{NGramConfig, NGramLM};
pub use remote::RemoteLM;

use crate::error::{Error, Result};

/// A probability vector over the shared vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub const TOLERANCE: f64 = 1e-6;

    /// Validates that `probs` is nonnegative and sums to one.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "distribution has invalid entry {p}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "distribution sums to {sum}, not 1"
            )));
        }
        Ok(Distribution(probs))
    }

    pub(crate) fn new_unchecked(probs: Vec<f64>) -> Self {
        Distribution(probs)
    }

    /// Uniform distribution over `n` outcomes.
    pub fn uniform(n: usize) -> Self {
        Distribution(vec![1.0 / n as f64; n])
    }

    /// Normalizes natural-log scores into a distribution (log-sum-exp).
    pub fn from_log_probs(logp: &[f64]) -> Result<Self> {
        if logp.is_empty() {
            return Err(Error::ProtocolError("empty log-probability vector".into()));
        }
        if logp.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
            return Err(Error::ProtocolError("log-probabilities must be finite or -inf".into()));
        }
        let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::ProtocolError("all log-probabilities are -inf".into()));
        }
        let mut probs: Vec<f64> = logp.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= z);
        Ok(Distribution(probs))
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Distribution {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Anything that returns full next-token distributions over a fixed
/// vocabulary. Models are immutable once built, so calls may run
/// concurrently.
pub trait LanguageModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Short free-text identification, stored in cache provenance.
    fn describe(&self) -> String;

    fn next_dist(&self, context: &[u32]) -> Result<Distribution>;

    /// One distribution per context, in request order.
    fn next_dists(&self, contexts: &[&[u32]]) -> Result<Vec<Distribution>> {
        contexts.iter().map(|c| self.next_dist(c)).collect()
    }

    /// Distributions for positions `1..seq.len()` of a sequence, each
    /// conditioned on the tokens before it.
    fn sequence_dists(&self, seq: &[u32]) -> Result<Vec<Distribution>> {
        let contexts: Vec<&[u32]> = (1..seq.len()).map(|t| &seq[..t]).collect();
        self.next_dists(&contexts)
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for std::sync::Arc<T> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn describe(&self) -> String {
        (**self).describe()
    }

    fn next_dist(&self, context: &[u32]) -> Result<Distribution> {
        (**self).next_dist(context)
    }

    fn next_dists(&self, contexts: &[&[u32]]) -> Result<Vec<Distribution>> {
        (**self).next_dists(contexts)
    }

    fn sequence_dists(&self, seq: &[u32]) -> Result<Vec<Distribution>> {
        (**self).sequence_dists(seq)
    }
}

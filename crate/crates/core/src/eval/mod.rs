//! Perplexity evaluation, the max-prob oracle, Spearman analysis of the
//! combination weight, the token heatmap and the experiment driver.

mod experiment;
mod heatmap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use crate::combine::{CombinationParams, Kind};
use crate::error::{Error, Result};
use crate::lm::{DistCache, LanguageModel};
use crate::text::TokenSequence;

pub use experiment::{
    render_table, run_experiment, ExperimentSpec, ExperimentResults, ResultRow, Workbench,
};
pub use heatmap::{heatmap, write_heatmap};

/// Positions evaluated per batch when scoring a combination.
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub perplexity: f64,
    pub token_count: usize,
    /// Sum of natural-log probabilities of the scored tokens.
    pub log_prob_sum: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_probs: Option<Vec<f64>>,
}

impl EvalResult {
    /// Micro-averaged perplexity over all scored tokens. The sum runs in
    /// input order so results do not depend on how the log-probabilities
    /// were computed.
    pub fn from_log_probs(log_probs: Vec<f64>, retain: bool) -> Result<Self> {
        if log_probs.is_empty() {
            return Err(Error::EmptyEval);
        }
        let sum: f64 = log_probs.iter().sum();
        let n = log_probs.len();
        Ok(EvalResult {
            perplexity: (-sum / n as f64).exp(),
            token_count: n,
            log_prob_sum: sum,
            log_probs: retain.then_some(log_probs),
        })
    }

    pub fn mean_nll(&self) -> f64 {
        -self.log_prob_sum / self.token_count as f64
    }
}

/// Perplexity of a model streamed over whole sequences; position 0 of each
/// sequence is not scored.
pub fn perplexity_of_model(lm: &dyn LanguageModel, sequences: &[TokenSequence]) -> Result<EvalResult> {
    let per_seq: Vec<Vec<f64>> = sequences
        .par_iter()
        .map(|seq| {
            seq.check_ids(lm.vocab_size())?;
            let dists = lm.sequence_dists(seq.ids())?;
            Ok(dists
                .iter()
                .zip(&seq.ids()[1..])
                .map(|(d, &y)| d[y as usize].ln())
                .collect())
        })
        .collect::<Result<_>>()?;
    EvalResult::from_log_probs(per_seq.concat(), false)
}

/// Which side of a cache to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Small,
    Large,
}

/// Perplexity of one of the two cached models.
pub fn perplexity_of_side(cache: &DistCache, side: Side) -> Result<EvalResult> {
    let lps = (0..cache.len())
        .into_par_iter()
        .map(|t| {
            let (s, l) = cache.target_log_probs(t);
            match side {
                Side::Small => s,
                Side::Large => l,
            }
        })
        .collect();
    EvalResult::from_log_probs(lps, false)
}

/// Perplexity of a combination over a cache, with eval-mode networks.
pub fn perplexity_of_combination(cache: &DistCache, params: &CombinationParams) -> Result<EvalResult> {
    combination_log_probs(cache, params).and_then(|lps| EvalResult::from_log_probs(lps, false))
}

/// Natural-log probability the combination assigns to each cached target.
pub fn combination_log_probs(cache: &DistCache, params: &CombinationParams) -> Result<Vec<f64>> {
    check_vocab(cache, params)?;
    let starts: Vec<usize> = (0..cache.len()).step_by(EVAL_CHUNK).collect();
    let chunks: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + EVAL_CHUNK).min(cache.len());
            let (ps, pl) = load_rows(cache, start, end);
            let pc = params.combine_batch(ps.view(), pl.view())?;
            Ok((start..end)
                .enumerate()
                .map(|(i, t)| pc[[i, cache.target(t) as usize]].ln())
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

fn check_vocab(cache: &DistCache, params: &CombinationParams) -> Result<()> {
    if cache.vocab_size() != params.vocab_size() {
        return Err(Error::VocabMismatch {
            expected: params.vocab_size(),
            actual: cache.vocab_size(),
        });
    }
    Ok(())
}

fn load_rows(cache: &DistCache, start: usize, end: usize) -> (Array2<f64>, Array2<f64>) {
    let v = cache.vocab_size();
    let mut ps = Array2::zeros((end - start, v));
    let mut pl = Array2::zeros((end - start, v));
    for (i, t) in (start..end).enumerate() {
        cache.fill_rows(
            t,
            ps.row_mut(i).as_slice_mut().expect("standard layout"),
            pl.row_mut(i).as_slice_mut().expect("standard layout"),
        );
    }
    (ps, pl)
}

/// Perplexity when every token is scored by whichever model gave it the
/// higher probability; ties go to the large model.
pub fn oracle_perplexity(cache: &DistCache) -> Result<EvalResult> {
    if cache.is_empty() {
        return Err(Error::EmptyCache);
    }
    let lps = (0..cache.len())
        .into_par_iter()
        .map(|t| {
            let (s, l) = cache.target_log_probs(t);
            if s > l {
                s
            } else {
                l
            }
        })
        .collect();
    EvalResult::from_log_probs(lps, false)
}

/// Ranks starting at 1, with tied values sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeError(format!(
            "spearman inputs have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two observations"));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    if !has_ties(&ra) && !has_ties(&rb) {
        // Integer ranks: 1 - 6 Σd² / (n³ - n) is exact in f64.
        let n = a.len() as f64;
        let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y) * (x - y)).sum();
        return Ok(1.0 - 6.0 * d2 / (n * n * n - n));
    }
    pearson(&ra, &rb).ok_or(Error::UndefinedCorrelation("an input has zero rank variance"))
}

fn has_ties(ranks: &[f64]) -> bool {
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.windows(2).any(|w| w[0] == w[1])
}

/// Per-token view of a scalar combination over a cache.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenAnalysis {
    pub targets: Vec<u32>,
    pub log_small: Vec<f64>,
    pub log_large: Vec<f64>,
    pub lambda: Vec<f64>,
    /// `ln pS(target) - ln pL(target)`.
    pub diff: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Analysis {
    pub tokens: TokenAnalysis,
    pub rho: f64,
}

/// Correlates the combination weight with how much better the small model
/// predicted each token. Only kinds producing a single weight qualify.
pub fn analyze(cache: &DistCache, params: &CombinationParams) -> Result<Analysis> {
    if !matches!(params.kind(), Kind::EntropyScalar | Kind::FullScalar) {
        return Err(Error::NoLambda(params.kind().name()));
    }
    let tokens = token_analysis(cache, params)?;
    let rho = spearman(&tokens.lambda, &tokens.diff)?;
    Ok(Analysis { tokens, rho })
}

/// Per-token log-probabilities and weights, without the correlation.
pub fn token_analysis(cache: &DistCache, params: &CombinationParams) -> Result<TokenAnalysis> {
    if params.kind() == Kind::Mean || params.kind().is_vector() {
        return Err(Error::NoLambda(params.kind().name()));
    }
    check_vocab(cache, params)?;
    if cache.is_empty() {
        return Err(Error::EmptyCache);
    }
    let starts: Vec<usize> = (0..cache.len()).step_by(EVAL_CHUNK).collect();
    let lambdas: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + EVAL_CHUNK).min(cache.len());
            let (ps, pl) = load_rows(cache, start, end);
            Ok(params.lambda_batch(ps.view(), pl.view())?.column(0).to_vec())
        })
        .collect::<Result<_>>()?;
    let (log_small, log_large): (Vec<f64>, Vec<f64>) =
        (0..cache.len()).map(|t| cache.target_log_probs(t)).unzip();
    let diff = log_small.iter().zip(&log_large).map(|(s, l)| s - l).collect();
    Ok(TokenAnalysis {
        targets: cache.targets().to_vec(),
        log_small,
        log_large,
        lambda: lambdas.concat(),
        diff,
    })
}

//! Fitting combination parameters on cached distribution pairs by
//! minimizing the token-level negative log-likelihood of the combined
//! distribution with minibatch Adam.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::combine::{CombinationParams, Kind};
use crate::error::{Error, Result};
use crate::lm::DistCache;
use crate::nn::{Adam, Mode};

/// Probabilities are clamped here before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

pub const DEFAULT_BATCH_SIZE: usize = 1024;
pub const DEFAULT_EPOCHS: usize = 1;

/// Fitting hyperparameters, readable from a flat JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub kind: Kind,
    /// Adam learning rate; `None` selects [`Kind::default_lr`].
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Second cache whose positions are fitted jointly with the main one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixin_cache: Option<PathBuf>,
}

fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}

fn default_epochs() -> usize {
    DEFAULT_EPOCHS
}

impl FitConfig {
    pub fn new(kind: Kind) -> Self {
        FitConfig {
            kind,
            lr: None,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: DEFAULT_EPOCHS,
            seed: 0,
            mixin_cache: None,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr.unwrap_or_else(|| self.kind.default_lr())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of a fitting run.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub params: CombinationParams,
    /// Mean minibatch loss before each update.
    pub loss_trace: Vec<f64>,
    pub positions_seen: usize,
    pub wall_time: Duration,
    pub config: FitConfig,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    kind: Kind,
    lr: f64,
    batch_size: usize,
    epochs: usize,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mixin_cache: Option<&'a Path>,
    steps: usize,
    positions_seen: usize,
    parameters: usize,
    wall_time_secs: f64,
    final_loss: Option<f64>,
    loss_trace: &'a [f64],
}

impl FitReport {
    pub fn steps(&self) -> usize {
        self.loss_trace.len()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let r = ReportJson {
            kind: self.config.kind,
            lr: self.config.lr(),
            batch_size: self.config.batch_size,
            epochs: self.config.epochs,
            seed: self.config.seed,
            mixin_cache: self.config.mixin_cache.as_deref(),
            steps: self.steps(),
            positions_seen: self.positions_seen,
            parameters: self.params.param_count(),
            wall_time_secs: self.wall_time.as_secs_f64(),
            final_loss: self.loss_trace.last().copied(),
            loss_trace: &self.loss_trace,
        };
        serde_json::to_value(r).expect("plain data serializes")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Mean NLL of the targets under `pc` and its gradient with respect to `pc`.
pub fn nll_loss(pc: ArrayView2<f64>, targets: &[u32]) -> Result<(f64, Array2<f64>)> {
    let (b, v) = pc.dim();
    if targets.len() != b {
        return Err(Error::ShapeError(format!(
            "{} targets for {b} rows",
            targets.len()
        )));
    }
    let mut grad = Array2::zeros((b, v));
    let mut loss = 0.0;
    let scale = 1.0 / b as f64;
    for (i, &y) in targets.iter().enumerate() {
        let y = y as usize;
        if y >= v {
            return Err(Error::VocabMismatch {
                expected: v,
                actual: y + 1,
            });
        }
        let p = pc[[i, y]];
        if p > PROB_FLOOR {
            loss -= p.ln();
            grad[[i, y]] = -scale / p;
        } else {
            loss -= PROB_FLOOR.ln();
        }
    }
    Ok((loss * scale, grad))
}

/// Fits fresh parameters of `config.kind` (seeded by `config.seed`),
/// loading the mixin cache from disk when configured.
pub fn fit(cache: &DistCache, config: &FitConfig) -> Result<FitReport> {
    let mixin = match &config.mixin_cache {
        Some(path) => Some(DistCache::read(path)?),
        None => None,
    };
    let params = CombinationParams::init(config.kind, cache.vocab_size(), config.seed);
    fit_params(params, cache, mixin.as_ref(), config)
}

/// Fits the given initial parameters. Mixin positions precede the main
/// cache's before the seeded shuffle; one step per `batch_size` positions,
/// and a trailing batch of a single position is skipped.
pub fn fit_params(
    params: CombinationParams,
    cache: &DistCache,
    mixin: Option<&DistCache>,
    config: &FitConfig,
) -> Result<FitReport> {
    config.validate()?;
    if params.kind() != config.kind {
        return Err(Error::InvalidArgument(format!(
            "parameters are {} but the configuration asks for {}",
            params.kind(),
            config.kind
        )));
    }
    if cache.is_empty() {
        return Err(Error::EmptyCache);
    }
    let v = cache.vocab_size();
    for c in std::iter::once(cache).chain(mixin) {
        if c.vocab_size() != params.vocab_size() {
            return Err(Error::VocabMismatch {
                expected: params.vocab_size(),
                actual: c.vocab_size(),
            });
        }
    }
    let start = Instant::now();
    let mut report = FitReport {
        params,
        loss_trace: Vec::new(),
        positions_seen: 0,
        wall_time: Duration::ZERO,
        config: config.clone(),
    };
    if config.kind == Kind::Mean {
        report.wall_time = start.elapsed();
        return Ok(report);
    }
    let params = &mut report.params;
    params.set_mode(Mode::Train);

    let sources: Vec<&DistCache> = mixin.into_iter().chain(std::iter::once(cache)).collect();
    let mut index: Vec<(u8, u32)> = Vec::new();
    for (s, c) in sources.iter().enumerate() {
        index.extend((0..c.len() as u32).map(|t| (s as u8, t)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.lr());
    let bs = config.batch_size;
    let mut ps = Array2::zeros((bs, v));
    let mut pl = Array2::zeros((bs, v));
    let mut targets = Vec::with_capacity(bs);

    for _ in 0..config.epochs {
        index.shuffle(&mut rng);
        for batch in index.chunks(bs) {
            if batch.len() < 2 {
                continue;
            }
            let b = batch.len();
            targets.clear();
            for (i, &(s, t)) in batch.iter().enumerate() {
                let c = sources[s as usize];
                let t = t as usize;
                c.fill_rows(
                    t,
                    ps.row_mut(i).as_slice_mut().expect("standard layout"),
                    pl.row_mut(i).as_slice_mut().expect("standard layout"),
                );
                targets.push(c.target(t));
            }
            let ps_b = ps.slice(ndarray::s![..b, ..]);
            let pl_b = pl.slice(ndarray::s![..b, ..]);
            let (pc, fwd) = params.combine_train(ps_b, pl_b)?;
            let (loss, d_pc) = nll_loss(pc.view(), &targets)?;
            if !loss.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "loss became non-finite at step {}",
                    report.loss_trace.len()
                )));
            }
            let grads = params.backward(&fwd, d_pc.view())?;
            params.adam_step(&grads, &mut adam)?;
            report.loss_trace.push(loss);
            report.positions_seen += b;
        }
    }
    params.set_mode(Mode::Eval);
    report.wall_time = start.elapsed();
    log::debug!(
        "fitted {} in {} steps ({:.2}s)",
        config.kind,
        report.loss_trace.len(),
        report.wall_time.as_secs_f64()
    );
    Ok(report)
}

//! Interpolated add-α n-gram models, the desk-scale stand-ins for both the
//! small domain expert and the large generalist.
//!
//! For a context `x` the model returns
//!
//! ```text
//! P(v | x) = Σ_k interp[k] · (count_k(ctx_k(x), v) + α) / (total_k(ctx_k(x)) + α·|V|)
//! ```
//!
//! where `ctx_k` is the last `k - 1` tokens of `x` left-padded with `<bos>`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use super::{Distribution, LanguageModel};
use crate::binio;
use crate::error::{Error, Result};
use crate::text::TokenSequence;

const MAGIC: &[u8; 4] = b"NGM1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NGramConfig {
    pub order: usize,
    pub alpha: f64,
    /// Weights for orders `1..=order`; `None` picks [`NGramConfig::default_interp`].
    #[serde(default)]
    pub interp: Option<Vec<f64>>,
}

impl NGramConfig {
    pub fn new(order: usize, alpha: f64) -> Self {
        NGramConfig {
            order,
            alpha,
            interp: None,
        }
    }

    /// Weights doubling with each order, normalized.
    pub fn default_interp(order: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..order).map(|k| 2f64.powi(k as i32)).collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / sum).collect()
    }

    fn resolved_interp(&self) -> Result<Vec<f64>> {
        let interp = self
            .interp
            .clone()
            .unwrap_or_else(|| Self::default_interp(self.order));
        if interp.len() != self.order {
            return Err(Error::InvalidArgument(format!(
                "{} interpolation weights for an order-{} model",
                interp.len(),
                self.order
            )));
        }
        if interp.iter().any(|w| !(*w >= 0.0)) || (interp.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(
                "interpolation weights must be nonnegative and sum to 1".into(),
            ));
        }
        Ok(interp)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
struct ContextCounts {
    total: u64,
    tokens: Vec<u32>,
    counts: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct NGramLM {
    order: usize,
    vocab_size: usize,
    bos: u32,
    alpha: f64,
    interp: Vec<f64>,
    bits: u32,
    /// `tables[k]` holds contexts of length `k` (order `k + 1`).
    tables: Vec<FxHashMap<u64, ContextCounts>>,
}

fn bits_for(values: usize) -> u32 {
    (usize::BITS - (values.max(2) - 1).leading_zeros()).max(1)
}

impl NGramLM {
    /// Counts all n-grams of orders `1..=order` in `corpus`, padding each
    /// sequence start with `order - 1` copies of `bos`.
    ///
    /// `bos` may lie outside `0..vocab_size`; it is then never predicted.
    pub fn train(
        corpus: &[TokenSequence],
        vocab_size: usize,
        bos: u32,
        config: &NGramConfig,
    ) -> Result<Self> {
        if config.order == 0 {
            return Err(Error::InvalidArgument("order must be at least 1".into()));
        }
        if !(config.alpha > 0.0) {
            return Err(Error::InvalidArgument("alpha must be positive".into()));
        }
        let interp = config.resolved_interp()?;
        if corpus.iter().all(TokenSequence::is_empty) {
            return Err(Error::EmptyCorpus);
        }
        for seq in corpus {
            seq.check_ids(vocab_size)?;
        }
        let bits = bits_for(vocab_size.max(bos as usize + 1));
        if bits as usize * config.order > 64 {
            return Err(Error::InvalidArgument(format!(
                "order {} is too large for a vocabulary of {} ids",
                config.order, vocab_size
            )));
        }

        let n = config.order;
        let mut tables = Vec::with_capacity(n);
        for ctx_len in 0..n {
            let mut grams: Vec<u64> = Vec::new();
            for seq in corpus {
                let ids = seq.ids();
                for t in 0..ids.len() {
                    let mut key = 0u64;
                    for j in (1..=ctx_len).rev() {
                        let id = if t >= j { ids[t - j] } else { bos };
                        key = (key << bits) | id as u64;
                    }
                    grams.push((key << bits) | ids[t] as u64);
                }
            }
            grams.sort_unstable();
            let mask = (1u64 << bits) - 1;
            let mut table: FxHashMap<u64, ContextCounts> = FxHashMap::default();
            let mut i = 0;
            while i < grams.len() {
                let mut j = i;
                while j < grams.len() && grams[j] == grams[i] {
                    j += 1;
                }
                let entry = table.entry(grams[i] >> bits).or_default();
                entry.tokens.push((grams[i] & mask) as u32);
                entry.counts.push((j - i) as u32);
                entry.total += (j - i) as u64;
                i = j;
            }
            tables.push(table);
        }
        Ok(NGramLM {
            order: n,
            vocab_size,
            bos,
            alpha: config.alpha,
            interp,
            bits,
            tables,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn interp(&self) -> &[f64] {
        &self.interp
    }

    /// Raw count of `token` after the given (unpadded) context, for the
    /// order implied by the context length.
    pub fn count(&self, context: &[u32], token: u32) -> u64 {
        let Some(c) = self
            .tables
            .get(context.len())
            .and_then(|t| t.get(&self.pack(context)))
        else {
            return 0;
        };
        c.tokens
            .iter()
            .position(|&t| t == token)
            .map_or(0, |i| c.counts[i] as u64)
    }

    fn pack(&self, ctx: &[u32]) -> u64 {
        ctx.iter().fold(0u64, |k, &id| (k << self.bits) | id as u64)
    }

    /// Returns a copy whose interpolation weights are replaced.
    pub fn with_interp(&self, interp: Vec<f64>) -> Result<Self> {
        let cfg = NGramConfig {
            order: self.order,
            alpha: self.alpha,
            interp: Some(interp),
        };
        let interp = cfg.resolved_interp()?;
        Ok(NGramLM {
            interp,
            ..self.clone()
        })
    }

    pub fn probs(&self, context: &[u32]) -> Vec<f64> {
        let v = self.vocab_size;
        let n = self.order;
        // last n-1 tokens of bos-padded context
        let mut padded = vec![self.bos; n - 1];
        let take = context.len().min(n - 1);
        padded[n - 1 - take..].copy_from_slice(&context[context.len() - take..]);

        let mut base = 0.0;
        let mut out = vec![0.0; v];
        let mut sparse: Vec<(f64, &ContextCounts)> = Vec::with_capacity(n);
        for (ctx_len, (&w, table)) in self.interp.iter().zip(&self.tables).enumerate() {
            if w == 0.0 {
                continue;
            }
            let ctx = &padded[n - 1 - ctx_len..];
            let counts = table.get(&self.pack(ctx));
            let total = counts.map_or(0, |c| c.total) as f64;
            let denom = total + self.alpha * v as f64;
            base += w * self.alpha / denom;
            if let Some(c) = counts {
                sparse.push((w / denom, c));
            }
        }
        out.iter_mut().for_each(|p| *p = base);
        for (scale, c) in sparse {
            for (&tok, &cnt) in c.tokens.iter().zip(&c.counts) {
                if (tok as usize) < v {
                    out[tok as usize] += scale * cnt as f64;
                }
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))
    }

    fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        binio::write_magic(w, MAGIC)?;
        w.write_u32::<LE>(self.order as u32)?;
        w.write_u32::<LE>(self.vocab_size as u32)?;
        w.write_u32::<LE>(self.bos)?;
        w.write_f64::<LE>(self.alpha)?;
        for &x in &self.interp {
            w.write_f64::<LE>(x)?;
        }
        for table in &self.tables {
            // sorted for byte-identical output
            let mut keys: Vec<&u64> = table.keys().collect();
            keys.sort_unstable();
            w.write_u64::<LE>(keys.len() as u64)?;
            for key in keys {
                let c = &table[key];
                w.write_u64::<LE>(*key)?;
                w.write_u32::<LE>(c.tokens.len() as u32)?;
                for (&t, &n) in c.tokens.iter().zip(&c.counts) {
                    w.write_u32::<LE>(t)?;
                    w.write_u32::<LE>(n)?;
                }
            }
        }
        w.flush()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut read = || -> std::io::Result<NGramLM> {
            let r = &mut r;
            binio::expect_magic(r, MAGIC)?;
            let order = r.read_u32::<LE>()? as usize;
            let vocab_size = r.read_u32::<LE>()? as usize;
            let bos = r.read_u32::<LE>()?;
            let alpha = r.read_f64::<LE>()?;
            if order == 0 || order > 64 {
                return Err(binio::invalid("bad order"));
            }
            let interp = (0..order)
                .map(|_| r.read_f64::<LE>())
                .collect::<std::io::Result<Vec<_>>>()?;
            let mut tables = Vec::with_capacity(order);
            for _ in 0..order {
                let n_ctx = r.read_u64::<LE>()? as usize;
                let mut table = FxHashMap::default();
                table.reserve(n_ctx);
                for _ in 0..n_ctx {
                    let key = r.read_u64::<LE>()?;
                    let n = r.read_u32::<LE>()? as usize;
                    let mut c = ContextCounts {
                        total: 0,
                        tokens: Vec::with_capacity(n),
                        counts: Vec::with_capacity(n),
                    };
                    for _ in 0..n {
                        let t = r.read_u32::<LE>()?;
                        let k = r.read_u32::<LE>()?;
                        c.tokens.push(t);
                        c.counts.push(k);
                        c.total += k as u64;
                    }
                    table.insert(key, c);
                }
                tables.push(table);
            }
            Ok(NGramLM {
                order,
                vocab_size,
                bos,
                alpha,
                interp,
                bits: bits_for(vocab_size.max(bos as usize + 1)),
                tables,
            })
        };
        read().map_err(|e| Error::format(path, e.to_string()))
    }
}

impl LanguageModel for NGramLM {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn describe(&self) -> String {
        format!(
            "ngram order={} alpha={} contexts={}",
            self.order,
            self.alpha,
            self.tables.iter().map(|t| t.len()).sum::<usize>()
        )
    }

    fn next_dist(&self, context: &[u32]) -> Result<Distribution> {
        Ok(Distribution::new_unchecked(self.probs(context)))
    }
}

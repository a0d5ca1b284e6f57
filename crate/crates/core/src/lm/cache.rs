//! Persisted per-position distribution pairs.
//!
//! File layout (`PDC1`, little-endian):
//!
//! ```text
//! magic "PDC1" | u32 vocab_size | u64 T
//! T × ( u32 target | vocab_size × f32 ln p_small | vocab_size × f32 ln p_large )
//! u32 len | provenance (UTF-8)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::LanguageModel;
use crate::binio;
use crate::error::{Error, Result};
use crate::text::TokenSequence;

const MAGIC: &[u8; 4] = b"PDC1";

/// Small/large next-token distributions and the observed target at every
/// scored position of a dataset. Stored as 32-bit natural logs.
#[derive(Debug, Clone, PartialEq)]
pub struct DistCache {
    vocab_size: usize,
    targets: Vec<u32>,
    log_small: Vec<f32>,
    log_large: Vec<f32>,
    pub provenance: String,
}

impl DistCache {
    pub fn new(vocab_size: usize, provenance: impl Into<String>) -> Self {
        DistCache {
            vocab_size,
            targets: Vec::new(),
            log_small: Vec::new(),
            log_large: Vec::new(),
            provenance: provenance.into(),
        }
    }

    /// Appends one position given the two probability vectors.
    pub fn push(&mut self, p_small: &[f64], p_large: &[f64], target: u32) -> Result<()> {
        let v = self.vocab_size;
        for len in [p_small.len(), p_large.len()] {
            if len != v {
                return Err(Error::VocabMismatch {
                    expected: v,
                    actual: len,
                });
            }
        }
        if target as usize >= v {
            return Err(Error::VocabMismatch {
                expected: v,
                actual: target as usize + 1,
            });
        }
        self.targets.push(target);
        self.log_small.extend(p_small.iter().map(|p| p.ln() as f32));
        self.log_large.extend(p_large.iter().map(|p| p.ln() as f32));
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn targets(&self) -> &[u32] {
        &self.targets
    }

    pub fn target(&self, t: usize) -> u32 {
        self.targets[t]
    }

    pub fn log_small_row(&self, t: usize) -> &[f32] {
        &self.log_small[t * self.vocab_size..(t + 1) * self.vocab_size]
    }

    pub fn log_large_row(&self, t: usize) -> &[f32] {
        &self.log_large[t * self.vocab_size..(t + 1) * self.vocab_size]
    }

    /// Small-model distribution at position `t`, renormalized in f64 to
    /// absorb the f32 rounding of the stored logs.
    pub fn small_row(&self, t: usize) -> Vec<f64> {
        normalized_exp(self.log_small_row(t))
    }

    pub fn large_row(&self, t: usize) -> Vec<f64> {
        normalized_exp(self.log_large_row(t))
    }

    /// Writes both rows of position `t` into preallocated slices.
    pub fn fill_rows(&self, t: usize, small: &mut [f64], large: &mut [f64]) {
        fill_normalized(self.log_small_row(t), small);
        fill_normalized(self.log_large_row(t), large);
    }

    /// Natural-log probability the small / large model gave the target.
    pub fn target_log_probs(&self, t: usize) -> (f64, f64) {
        let y = self.targets[t] as usize;
        let s = self.small_row(t)[y].ln();
        let l = self.large_row(t)[y].ln();
        (s, l)
    }

    /// The first `n` positions.
    pub fn prefix(&self, n: usize) -> DistCache {
        let n = n.min(self.len());
        let v = self.vocab_size;
        DistCache {
            vocab_size: v,
            targets: self.targets[..n].to_vec(),
            log_small: self.log_small[..n * v].to_vec(),
            log_large: self.log_large[..n * v].to_vec(),
            provenance: format!("{} [first {n} positions]", self.provenance),
        }
    }

    /// Concatenation of several caches over the same vocabulary.
    pub fn concat(parts: &[&DistCache]) -> Result<DistCache> {
        let v = parts.first().ok_or(Error::EmptyCache)?.vocab_size;
        let mut out = DistCache::new(v, "");
        let mut prov = Vec::new();
        for p in parts {
            if p.vocab_size != v {
                return Err(Error::VocabMismatch {
                    expected: v,
                    actual: p.vocab_size,
                });
            }
            out.targets.extend_from_slice(&p.targets);
            out.log_small.extend_from_slice(&p.log_small);
            out.log_large.extend_from_slice(&p.log_large);
            prov.push(p.provenance.as_str());
        }
        out.provenance = prov.join(" + ");
        Ok(out)
    }

    /// Largest deviation of any row's probability mass from 1.
    pub fn max_row_error(&self) -> f64 {
        (0..self.len())
            .flat_map(|t| [self.log_small_row(t), self.log_large_row(t)])
            .map(|row| (row.iter().map(|&l| (l as f64).exp()).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        binio::write_magic(w, MAGIC)?;
        w.write_u32::<LE>(self.vocab_size as u32)?;
        w.write_u64::<LE>(self.len() as u64)?;
        for t in 0..self.len() {
            w.write_u32::<LE>(self.targets[t])?;
            binio::write_f32s(w, self.log_small_row(t).iter().copied())?;
            binio::write_f32s(w, self.log_large_row(t).iter().copied())?;
        }
        binio::write_str(w, &self.provenance)?;
        w.flush()
    }

    pub fn read(path: &Path) -> Result<DistCache> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file)).map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData | std::io::ErrorKind::UnexpectedEof => {
                Error::format(path, e.to_string())
            }
            _ => Error::io(path, e),
        })
    }

    pub fn read_from<R: Read>(r: &mut R) -> std::io::Result<DistCache> {
        binio::expect_magic(r, MAGIC)?;
        let v = r.read_u32::<LE>()? as usize;
        let t = r.read_u64::<LE>()? as usize;
        if v == 0 {
            return Err(binio::invalid("vocab_size is zero"));
        }
        let mut cache = DistCache::new(v, "");
        cache.targets.reserve(t);
        for _ in 0..t {
            let target = r.read_u32::<LE>()?;
            if target as usize >= v {
                return Err(binio::invalid(format!("target {target} >= vocab_size {v}")));
            }
            cache.targets.push(target);
            cache.log_small.extend(binio::read_f32s(r, v)?);
            cache.log_large.extend(binio::read_f32s(r, v)?);
        }
        cache.provenance = binio::read_str(r)?;
        Ok(cache)
    }
}

fn fill_normalized(logs: &[f32], out: &mut [f64]) {
    let mut z = 0.0;
    for (o, &l) in out.iter_mut().zip(logs) {
        *o = (l as f64).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

fn normalized_exp(logs: &[f32]) -> Vec<f64> {
    let mut out = vec![0.0; logs.len()];
    fill_normalized(logs, &mut out);
    out
}

/// Runs both models over every sequence and records, for each position
/// `t >= 1`, `P_small(·|x<t)`, `P_large(·|x<t)` and the target `x_t`.
/// Position 0 has no in-sequence context and is skipped.
pub fn dump_cache(
    small: &dyn LanguageModel,
    large: &dyn LanguageModel,
    sequences: &[TokenSequence],
) -> Result<DistCache> {
    let v = small.vocab_size();
    if large.vocab_size() != v {
        return Err(Error::VocabMismatch {
            expected: v,
            actual: large.vocab_size(),
        });
    }
    let provenance = format!("small: {} | large: {}", small.describe(), large.describe());
    let mut cache = DistCache::new(v, provenance);
    for seq in sequences {
        seq.check_ids(v)?;
        let ds = small.sequence_dists(seq.ids())?;
        let dl = large.sequence_dists(seq.ids())?;
        if ds.len() + 1 != seq.len().max(1) || dl.len() != ds.len() {
            return Err(Error::ProtocolError(format!(
                "expected {} distributions, got {} and {}",
                seq.len().saturating_sub(1),
                ds.len(),
                dl.len()
            )));
        }
        for (t, (s, l)) in ds.iter().zip(&dl).enumerate() {
            if s.len() != v || l.len() != v {
                return Err(Error::VocabMismatch {
                    expected: v,
                    actual: if s.len() != v { s.len() } else { l.len() },
                });
            }
            cache.push(s, l, seq.ids()[t + 1])?;
        }
    }
    Ok(cache)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{NGramConfig, NGramLM};
    use proptest::prelude::*;

    fn toy_models() -> (NGramLM, NGramLM, Vec<TokenSequence>) {
        let seqs: Vec<TokenSequence> = (0..4)
            .map(|s| TokenSequence((0..30).map(|i| ((i * 3 + s) % 7) as u32).collect()))
            .collect();
        let a = NGramLM::train(&seqs, 7, 0, &NGramConfig::new(2, 0.5)).unwrap();
        let b = NGramLM::train(&seqs, 7, 0, &NGramConfig::new(3, 0.1)).unwrap();
        (a, b, seqs)
    }

    #[test]
    fn position_zero_is_excluded() {
        let (a, b, _) = toy_models();
        let cache = dump_cache(&a, &b, &[TokenSequence(vec![1, 2, 3])]).unwrap();
        assert_eq!(cache.len(), 2);
        assert_eq!(cache.targets(), &[2, 3]);
        assert!(cache.max_row_error() < 1e-5);
    }

    #[test]
    fn vocab_mismatch_is_reported() {
        let (a, _, seqs) = toy_models();
        let other = NGramLM::train(&seqs, 8, 0, &NGramConfig::new(2, 0.5)).unwrap();
        assert!(matches!(
            dump_cache(&a, &other, &seqs),
            Err(Error::VocabMismatch { .. })
        ));
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let (a, b, seqs) = toy_models();
        let mut cache = dump_cache(&a, &b, &seqs).unwrap();
        cache.provenance = "toy ✓".into();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pdc");
        cache.write(&path).unwrap();
        let back = DistCache::read(&path).unwrap();
        assert_eq!(back, cache);
        let bits = |c: &DistCache| c.log_small.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&cache));
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"PDC1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 7);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), cache.len() as u64);
        assert_eq!(bytes.len(), 16 + cache.len() * (4 + 2 * 7 * 4) + 4 + "toy ✓".len());
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let (a, b, seqs) = toy_models();
        let cache = dump_cache(&a, &b, &seqs).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pdc");
        cache.write(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(DistCache::read(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn prefix_and_concat() {
        let (a, b, seqs) = toy_models();
        let cache = dump_cache(&a, &b, &seqs).unwrap();
        let head = cache.prefix(10);
        assert_eq!(head.len(), 10);
        let both = DistCache::concat(&[&head, &cache]).unwrap();
        assert_eq!(both.len(), 10 + cache.len());
        assert_eq!(both.log_large_row(12), cache.log_large_row(2));
    }

    proptest! {
        #[test]
        fn arbitrary_cache_round_trips(
            rows in proptest::collection::vec((0u32..5, proptest::collection::vec(-20f32..0.0, 10)), 0..20),
            prov in ".{0,20}",
        ) {
            let mut cache = DistCache::new(5, prov);
            for (target, logs) in &rows {
                cache.targets.push(*target);
                cache.log_small.extend_from_slice(&logs[..5]);
                cache.log_large.extend_from_slice(&logs[5..]);
            }
            let mut buf = Vec::new();
            cache.write_to(&mut buf).unwrap();
            let back = DistCache::read_from(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back, cache);
        }
    }
}

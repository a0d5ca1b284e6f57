//! Vocabulary construction, tokenization, chunking and dataset splitting.
//!
//! Every language model in a fusion pair must share one [`Vocabulary`]. The
//! default byte-level vocabulary (256 bytes plus two reserved ids) satisfies
//! that for any pair of models trained through this crate.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOS_TOKEN: &str = "<bos>";
pub const UNK_TOKEN: &str = "<unk>";
pub const BOS_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
const RESERVED: u32 = 2;
pub const BYTE_VOCAB_SIZE: usize = 256 + RESERVED as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabMode {
    #[default]
    Byte,
    Word,
}

impl FromStr for VocabMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "byte" => Ok(VocabMode::Byte),
            "word" => Ok(VocabMode::Word),
            other => Err(Error::InvalidArgument(format!(
                "unknown vocabulary mode `{other}` (expected byte or word)"
            ))),
        }
    }
}

impl fmt::Display for VocabMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VocabMode::Byte => "byte",
            VocabMode::Word => "word",
        })
    }
}

/// Dense bijection between token strings and ids `0..size`.
///
/// Ids 0 and 1 are always `<bos>` and `<unk>`. In byte mode id `b + 2` is
/// the raw byte `b`, spelled `<0xNN>` in the vocabulary file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    mode: VocabMode,
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, u32>,
}

fn byte_token(b: u8) -> String {
    format!("<0x{b:02X}>")
}

impl Vocabulary {
    pub fn bytes() -> Self {
        let tokens = [BOS_TOKEN.to_string(), UNK_TOKEN.to_string()]
            .into_iter()
            .chain((0..=255u8).map(byte_token))
            .collect();
        Self::from_tokens(VocabMode::Byte, tokens)
    }

    fn from_tokens(mode: VocabMode, id_to_token: Vec<String>) -> Self {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            mode,
            id_to_token,
            token_to_id,
        }
    }

    pub fn mode(&self) -> VocabMode {
        self.mode
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn bos_id(&self) -> u32 {
        BOS_ID
    }

    pub fn unk_id(&self) -> u32 {
        UNK_ID
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    /// Human-readable rendering of a single token, used by the heatmap.
    pub fn display_token(&self, id: u32) -> String {
        match (self.mode, id) {
            (_, BOS_ID) => BOS_TOKEN.to_string(),
            (_, UNK_ID) => UNK_TOKEN.to_string(),
            (VocabMode::Byte, id) => {
                let b = (id - RESERVED) as u8;
                match b {
                    b' '..=b'~' => (b as char).to_string(),
                    b'\n' => "\n".to_string(),
                    b'\t' => "\t".to_string(),
                    _ => format!("\\x{b:02x}"),
                }
            }
            (VocabMode::Word, id) => format!("{} ", self.token(id).unwrap_or(UNK_TOKEN)),
        }
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        match self.mode {
            VocabMode::Byte => {
                TokenSequence(text.bytes().map(|b| b as u32 + RESERVED).collect())
            }
            VocabMode::Word => TokenSequence(
                text.split_whitespace()
                    .map(|w| self.id(w).unwrap_or(UNK_ID))
                    .collect(),
            ),
        }
    }

    /// Inverse of [`tokenize`](Self::tokenize). Lossless for byte mode; word
    /// mode rejoins with single spaces. Reserved ids are dropped.
    pub fn detokenize(&self, ids: &[u32]) -> Vec<u8> {
        match self.mode {
            VocabMode::Byte => ids
                .iter()
                .filter(|&&id| id >= RESERVED)
                .map(|&id| (id - RESERVED) as u8)
                .collect(),
            VocabMode::Word => ids
                .iter()
                .filter(|&&id| id >= RESERVED)
                .filter_map(|&id| self.token(id))
                .collect::<Vec<_>>()
                .join(" ")
                .into_bytes(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.id_to_token {
            out.push_str(t);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < 2 || tokens[0] != BOS_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::format(path, "first two lines must be <bos> and <unk>"));
        }
        let is_bytes = tokens.len() == BYTE_VOCAB_SIZE
            && tokens[2..]
                .iter()
                .enumerate()
                .all(|(b, t)| *t == byte_token(b as u8));
        let mode = if is_bytes { VocabMode::Byte } else { VocabMode::Word };
        let vocab = Self::from_tokens(mode, tokens);
        if vocab.token_to_id.len() != vocab.id_to_token.len() {
            return Err(Error::format(path, "duplicate tokens"));
        }
        Ok(vocab)
    }
}

/// Builds a vocabulary from a corpus.
///
/// Byte mode ignores `max_size`. Word mode keeps the `max_size` most frequent
/// whitespace-separated words, ties broken by first occurrence.
pub fn build_vocab(corpus: &str, mode: VocabMode, max_size: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if max_size < 3 {
        return Err(Error::InvalidArgument(format!(
            "max_size must be at least 3, got {max_size}"
        )));
    }
    match mode {
        VocabMode::Byte => Ok(Vocabulary::bytes()),
        VocabMode::Word => {
            // word -> (count, first occurrence)
            let mut stats: HashMap<&str, (usize, usize)> = HashMap::new();
            for (pos, w) in corpus.split_whitespace().enumerate() {
                stats.entry(w).or_insert((0, pos)).0 += 1;
            }
            if stats.is_empty() {
                return Err(Error::EmptyCorpus);
            }
            let mut words: Vec<(&str, (usize, usize))> = stats
                .into_iter()
                .filter(|(w, _)| *w != BOS_TOKEN && *w != UNK_TOKEN)
                .collect();
            words.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
            let tokens = [BOS_TOKEN.to_string(), UNK_TOKEN.to_string()]
                .into_iter()
                .chain(words.into_iter().take(max_size).map(|(w, _)| w.to_string()))
                .collect();
            Ok(Vocabulary::from_tokens(VocabMode::Word, tokens))
        }
    }
}

/// An ordered list of token ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TokenSequence(pub Vec<u32>);

impl TokenSequence {
    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check_ids(&self, vocab_size: usize) -> Result<()> {
        match self.0.iter().find(|&&id| id as usize >= vocab_size) {
            Some(&id) => Err(Error::VocabMismatch {
                expected: vocab_size,
                actual: id as usize + 1,
            }),
            None => Ok(()),
        }
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(ids: Vec<u32>) -> Self {
        TokenSequence(ids)
    }
}

/// Splits a token stream into non-overlapping sequences of exactly `seq_len`
/// tokens. The trailing remainder is dropped.
pub fn chunk(tokens: &TokenSequence, seq_len: usize) -> Result<Vec<TokenSequence>> {
    if seq_len < 2 {
        return Err(Error::InvalidArgument(format!(
            "seq_len must be at least 2, got {seq_len}"
        )));
    }
    Ok(tokens
        .0
        .chunks_exact(seq_len)
        .map(|c| TokenSequence(c.to_vec()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<TokenSequence>,
    pub train_fit: Vec<TokenSequence>,
    pub test: Vec<TokenSequence>,
    pub seq_len: usize,
    pub seed: u64,
}

/// Seeded shuffle, then the first `n_fit` sequences go to train-fit, the next
/// `n_test` to test and the rest to train.
pub fn split_fit_test(
    sequences: Vec<TokenSequence>,
    n_fit: usize,
    n_test: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    let needed = n_fit + n_test;
    if needed > sequences.len() {
        return Err(Error::NotEnoughData {
            needed,
            available: sequences.len(),
        });
    }
    let seq_len = sequences.first().map_or(0, TokenSequence::len);
    if let Some(bad) = sequences.iter().find(|s| s.len() != seq_len) {
        return Err(Error::ShapeError(format!(
            "all sequences must have {seq_len} tokens, found one with {}",
            bad.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sequences = sequences;
    sequences.shuffle(&mut rng);
    let train = sequences.split_off(needed);
    let test = sequences.split_off(n_fit);
    Ok(DatasetSplit {
        train,
        train_fit: sequences,
        test,
        seq_len,
        seed,
    })
}

//! Deterministic synthetic multi-genre corpora.
//!
//! Each genre has its own syllable inventory, from which it draws a
//! pseudo-word lexicon of nouns, verbs and adjectives, and its own sentence
//! templates. All genres share English function words and a handful of
//! generic templates, so a model trained on some genres transfers partially
//! to the others.

use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution as _, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Genre {
    Reviews,
    Email,
    Legal,
    News,
    Science,
    Fiction,
}

impl Genre {
    pub const ALL: [Genre; 6] = [
        Genre::Reviews,
        Genre::Email,
        Genre::Legal,
        Genre::News,
        Genre::Science,
        Genre::Fiction,
    ];

    /// Every genre except reviews.
    pub const GENERAL: [Genre; 5] = [
        Genre::Email,
        Genre::Legal,
        Genre::News,
        Genre::Science,
        Genre::Fiction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Genre::Reviews => "reviews",
            Genre::Email => "email",
            Genre::Legal => "legal",
            Genre::News => "news",
            Genre::Science => "science",
            Genre::Fiction => "fiction",
        }
    }

    fn phonology(self) -> Phonology {
        match self {
            Genre::Reviews => Phonology {
                onsets: &["b", "br", "k", "gl", "z", "v", "sn", "qu", "fl", "p"],
                nuclei: &["oo", "a", "i", "ee", "u", "oa"],
                codas: &["", "x", "z", "ck", "mp", "ny", "p"],
            },
            Genre::Email => Phonology {
                onsets: &["m", "n", "t", "s", "r", "l", "th", "sh"],
                nuclei: &["e", "a", "i", "o"],
                codas: &["", "n", "t", "s", "ll", "nd"],
            },
            Genre::Legal => Phonology {
                onsets: &["pr", "tr", "st", "d", "c", "j", "r", "h"],
                nuclei: &["e", "i", "a", "io", "u"],
                codas: &["", "nt", "ct", "ss", "ty", "tion"],
            },
            Genre::News => Phonology {
                onsets: &["w", "h", "g", "m", "k", "d", "b", "ch"],
                nuclei: &["a", "e", "o", "ai", "ou"],
                codas: &["", "r", "rd", "st", "ng", "k"],
            },
            Genre::Science => Phonology {
                onsets: &["ph", "th", "ch", "x", "kr", "sp", "n", "m"],
                nuclei: &["y", "o", "e", "i", "ae"],
                codas: &["", "n", "m", "ne", "ide", "ic"],
            },
            Genre::Fiction => Phonology {
                onsets: &["dr", "sh", "wh", "l", "f", "gr", "st", "y"],
                nuclei: &["o", "ea", "i", "a", "ow"],
                codas: &["", "th", "ng", "rk", "ld", "ne"],
            },
        }
    }

    fn templates(self) -> &'static [&'static str] {
        match self {
            Genre::Reviews => &[
                "i bought this {t} for my {N} and it {V} {A}.",
                "{R} stars.",
                "the {t} is {A} but the {N} is {A}.",
                "would {V} again!",
                "do not {V} this {t}.",
                "great {t}, {A} {N}, {A} {N}.",
                "my {N} {V} the {t} every day.",
                "it {V} after {D} days, so {A}.",
                "the {t} came with a {A} {N}.",
            ],
            Genre::Email => &[
                "hi {P},",
                "thanks for the {t}.",
                "please {V} the {t} by {W}.",
                "best regards, {P}",
                "let me know if the {t} is {A}.",
                "i will {V} the {N} tomorrow.",
                "can we {V} the {t} on {W}?",
            ],
            Genre::Legal => &[
                "pursuant to section {D} of the {t}, the {N} shall {V} the {N}.",
                "the court {V} that the {t} was {A}.",
                "whereas the {N} is {A}, the {t} shall be {A}.",
                "the {N} may not {V} any {t} without the {N}.",
                "in the matter of {P} v. {P}, the {t} was {V}.",
            ],
            Genre::News => &[
                "the {N} of {P} {V} on {W}.",
                "officials said the {t} was {A}.",
                "according to the {N}, {D} {N}s were {V}.",
                "{P} told reporters that the {t} would {V}.",
                "the {A} {t} will {V} next {W}.",
            ],
            Genre::Science => &[
                "we {V} the {t} using a {A} {N}.",
                "results show that the {t} is {A} ({D}%).",
                "the {N} of the {t} was {V}.",
                "a {A} {N} {V} the {t} in {D} trials.",
                "this suggests that the {N} {V} the {t}.",
            ],
            Genre::Fiction => &[
                "she {V} the {A} {t}.",
                "\"{A},\" he said.",
                "the {N} was {A} and the {N} {V}.",
                "{P} {V} into the {A} {t}.",
                "for a long time nobody {V} the {t}.",
            ],
        }
    }
}

impl fmt::Display for Genre {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Genre {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Genre::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown genre `{s}`")))
    }
}

const SHARED_TEMPLATES: &[&str] = &[
    "the {A} {N} {V} the {t}.",
    "it is {A} and {A}.",
    "there was a {N} in the {t}.",
    "we {V} that the {t} is {A}.",
    "this is one of the most {A} {N}s i have seen.",
    "as for the {t}, it was {A}.",
];

const WEEKDAYS: &[&str] = &["monday", "tuesday", "wednesday", "thursday", "friday"];

struct Phonology {
    onsets: &'static [&'static str],
    nuclei: &'static [&'static str],
    codas: &'static [&'static str],
}

/// A lexicon with Zipf-distributed word frequencies.
struct Lexicon {
    words: Vec<String>,
    dist: WeightedIndex<f64>,
}

impl Lexicon {
    fn new(phon: &Phonology, size: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut words = Vec::with_capacity(size);
        let mut seen = std::collections::HashSet::new();
        while words.len() < size {
            let syllables = rng.gen_range(1..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(phon.onsets.choose(rng).expect("non-empty"));
                w.push_str(phon.nuclei.choose(rng).expect("non-empty"));
                w.push_str(phon.codas.choose(rng).expect("non-empty"));
            }
            if seen.insert(w.clone()) {
                words.push(w);
            }
        }
        let weights: Vec<f64> = (0..size).map(|r| 1.0 / (r as f64 + 1.0).powf(1.1)).collect();
        Lexicon {
            words,
            dist: WeightedIndex::new(weights).expect("positive weights"),
        }
    }

    fn sample<'a>(&'a self, rng: &mut ChaCha8Rng) -> &'a str {
        &self.words[self.dist.sample(rng)]
    }
}

struct GenreModel {
    genre: Genre,
    nouns: Lexicon,
    verbs: Lexicon,
    adjs: Lexicon,
    names: Lexicon,
}

impl GenreModel {
    fn new(genre: Genre, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (genre as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let phon = genre.phonology();
        GenreModel {
            genre,
            nouns: Lexicon::new(&phon, 400, &mut rng),
            verbs: Lexicon::new(&phon, 150, &mut rng),
            adjs: Lexicon::new(&phon, 120, &mut rng),
            names: Lexicon::new(&phon, 60, &mut rng),
        }
    }

    fn sentence(&self, topics: &[&str], rng: &mut ChaCha8Rng, out: &mut String) {
        let template = if rng.gen_bool(0.25) {
            SHARED_TEMPLATES.choose(rng)
        } else {
            self.genre.templates().choose(rng)
        }
        .expect("non-empty");
        let start = out.len();
        let mut rest = *template;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let close = open + rest[open..].find('}').expect("balanced template");
            match &rest[open + 1..close] {
                "N" => out.push_str(self.nouns.sample(rng)),
                "V" => out.push_str(self.verbs.sample(rng)),
                "A" => out.push_str(self.adjs.sample(rng)),
                "t" => out.push_str(topics.choose(rng).expect("non-empty")),
                "P" => {
                    let name = self.names.sample(rng);
                    let mut cs = name.chars();
                    if let Some(c) = cs.next() {
                        out.extend(c.to_uppercase());
                        out.push_str(cs.as_str());
                    }
                }
                "W" => out.push_str(WEEKDAYS.choose(rng).expect("non-empty")),
                "D" => out.push_str(&rng.gen_range(2..100).to_string()),
                "R" => out.push_str(&rng.gen_range(1..=5).to_string()),
                other => unreachable!("unknown slot {other}"),
            }
            rest = &rest[close + 1..];
        }
        out.push_str(rest);
        // Capitalize the sentence start.
        if let Some(c) = out[start..].chars().next() {
            if c.is_ascii_lowercase() {
                out.replace_range(start..start + 1, &c.to_ascii_uppercase().to_string());
            }
        }
    }

    fn document(&self, rng: &mut ChaCha8Rng, out: &mut String) {
        let topics: Vec<&str> = (0..3).map(|_| self.nouns.sample(rng)).collect();
        let n = rng.gen_range(3..=12);
        for i in 0..n {
            if i > 0 {
                out.push(' ');
            }
            self.sentence(&topics, rng, out);
        }
        out.push_str("\n\n");
    }
}

/// Generates roughly `bytes` bytes (whole documents, at least one) of text
/// drawn from `genres` with equal probability per document.
pub fn generate(genres: &[Genre], bytes: usize, seed: u64) -> Result<String> {
    let weighted: Vec<(Genre, f64)> = genres.iter().map(|&g| (g, 1.0)).collect();
    generate_weighted(&weighted, bytes, seed)
}

/// Like [`generate`], with each document's genre drawn in proportion to
/// its weight.
pub fn generate_weighted(genres: &[(Genre, f64)], bytes: usize, seed: u64) -> Result<String> {
    if genres.is_empty() {
        return Err(Error::InvalidArgument("at least one genre is required".into()));
    }
    let pick = WeightedIndex::new(genres.iter().map(|&(_, w)| w))
        .map_err(|e| Error::InvalidArgument(format!("genre weights: {e}")))?;
    // Lexicons depend only on the genre, so every corpus agrees on them.
    let models: Vec<GenreModel> = genres
        .iter()
        .map(|&(g, _)| GenreModel::new(g, LEXICON_SEED))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::with_capacity(bytes + 1024);
    while out.is_empty() || out.len() < bytes {
        models[pick.sample(&mut rng)].document(&mut rng, &mut out);
    }
    Ok(out)
}

/// Parses `name` or `name:weight`.
pub fn parse_weighted(s: &str) -> Result<(Genre, f64)> {
    match s.split_once(':') {
        None => Ok((s.parse()?, 1.0)),
        Some((name, w)) => {
            let w: f64 = w
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad genre weight in `{s}`")))?;
            Ok((name.parse()?, w))
        }
    }
}

const LEXICON_SEED: u64 = 0x5eed_1e81_c0de;

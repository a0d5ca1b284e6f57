//! Spec-driven experiment sweeps: the main comparison of all combination
//! kinds, fit-set size, expert versus generalist as the small model,
//! domain versus mixin fitting, and expert quality.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{oracle_perplexity, perplexity_of_combination, perplexity_of_side, Side};
use crate::combine::{CombinationParams, Kind};
use crate::error::{Error, Result};
use crate::fit::{fit_params, FitConfig, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS};
use crate::lm::{dump_cache, DistCache, LanguageModel, NGramConfig, NGramLM};
use crate::text::{build_vocab, chunk, split_fit_test, DatasetSplit, VocabMode, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Every kind fitted on the domain fit set, scored on both test sets.
    Main,
    /// Fitting on the first `n` fit sequences.
    FitSize,
    /// The domain expert versus a second generalist as the small model.
    SmallModel,
    /// Fitting on domain data versus domain plus general data.
    Mixin,
    /// Experts trained on growing fractions of the domain training set.
    ExpertQuality,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Main => "main",
            ExperimentKind::FitSize => "fit_size",
            ExperimentKind::SmallModel => "small_model",
            ExperimentKind::Mixin => "mixin",
            ExperimentKind::ExpertQuality => "expert_quality",
        }
    }
}

/// The weaker general model standing in for the small model in
/// [`ExperimentKind::SmallModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecondGeneralist {
    pub order: usize,
    /// Fraction of the general training sequences it is trained on.
    #[serde(default = "one")]
    pub fraction: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub domain_corpus: PathBuf,
    pub general_corpus: PathBuf,
    #[serde(default)]
    pub vocab_mode: VocabMode,
    #[serde(default = "default_vocab_max")]
    pub vocab_max_size: usize,
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
    #[serde(default = "default_n")]
    pub n_fit: usize,
    #[serde(default = "default_n")]
    pub n_test: usize,
    #[serde(default = "default_small")]
    pub small: NGramConfig,
    #[serde(default = "default_large")]
    pub large: NGramConfig,
    #[serde(default = "default_second")]
    pub second_generalist: SecondGeneralist,
    #[serde(default = "default_kinds")]
    pub kinds: Vec<Kind>,
    #[serde(default = "default_experiments")]
    pub experiments: Vec<ExperimentKind>,
    #[serde(default = "default_fit_sizes")]
    pub fit_sizes: Vec<usize>,
    #[serde(default = "default_fractions")]
    pub expert_fractions: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
}

fn default_name() -> String {
    "experiment".into()
}
fn default_vocab_max() -> usize {
    8192
}
fn default_seq_len() -> usize {
    1024
}
fn default_n() -> usize {
    1000
}
fn default_small() -> NGramConfig {
    NGramConfig::new(3, 0.05)
}
fn default_large() -> NGramConfig {
    NGramConfig::new(5, 0.05)
}
fn default_second() -> SecondGeneralist {
    SecondGeneralist {
        order: 5,
        fraction: 0.5,
    }
}
fn default_kinds() -> Vec<Kind> {
    Kind::ALL.to_vec()
}
fn default_experiments() -> Vec<ExperimentKind> {
    vec![ExperimentKind::Main]
}
fn default_fit_sizes() -> Vec<usize> {
    vec![100, 500, 1000]
}
fn default_fractions() -> Vec<f64> {
    vec![0.01, 0.1, 1.0]
}
fn default_batch() -> usize {
    DEFAULT_BATCH_SIZE
}
fn default_epochs() -> usize {
    DEFAULT_EPOCHS
}

impl ExperimentSpec {
    /// A spec with every optional key at its default.
    pub fn new(domain_corpus: impl Into<PathBuf>, general_corpus: impl Into<PathBuf>) -> Self {
        let json = serde_json::json!({
            "domain_corpus": domain_corpus.into(),
            "general_corpus": general_corpus.into(),
        });
        serde_json::from_value(json).expect("defaults are valid")
    }

    /// Reads a JSON spec; relative corpus paths are taken relative to the
    /// spec file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec: ExperimentSpec =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if let Some(dir) = path.parent() {
            for p in [&mut spec.domain_corpus, &mut spec.general_corpus] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(spec)
    }

    fn fit_config(&self, kind: Kind) -> FitConfig {
        FitConfig {
            kind,
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            mixin_cache: None,
        }
    }
}

fn spec_err(key: &str, source: Error) -> Error {
    Error::SpecInput {
        key: key.to_string(),
        source: Box::new(source),
    }
}

/// One table cell group: a model under a condition, scored on the domain
/// test set and, where applicable, the general test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub condition: String,
    pub model: String,
    pub domain_ppl: Option<f64>,
    pub general_ppl: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub name: String,
    pub rows: Vec<ResultRow>,
    pub wall_time_secs: f64,
}

impl ExperimentResults {
    pub fn find(&self, experiment: &str, condition: &str, model: &str) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.experiment == experiment && r.condition == condition && r.model == model)
    }

    pub fn table(&self) -> String {
        render_table(&self.rows)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum FitKey {
    Domain { kind: Kind, sequences: usize },
    Mixin(Kind),
}

/// Vocabulary, data splits, stand-in models and distribution caches shared
/// by all experiments of a spec.
pub struct Workbench {
    pub spec: ExperimentSpec,
    pub vocab: Vocabulary,
    pub domain: DatasetSplit,
    pub general: DatasetSplit,
    pub small: NGramLM,
    pub large: NGramLM,
    pub domain_fit: DistCache,
    pub domain_test: DistCache,
    pub general_fit: DistCache,
    pub general_test: DistCache,
    fitted: HashMap<FitKey, CombinationParams>,
}

impl Workbench {
    pub fn prepare(spec: ExperimentSpec) -> Result<Self> {
        let read = |key: &str, path: &Path| {
            fs::read_to_string(path).map_err(|e| spec_err(key, Error::io(path, e)))
        };
        let domain_text = read("domain_corpus", &spec.domain_corpus)?;
        let general_text = read("general_corpus", &spec.general_corpus)?;
        let vocab = match spec.vocab_mode {
            VocabMode::Byte => Vocabulary::bytes(),
            VocabMode::Word => {
                let both = format!("{domain_text}\n{general_text}");
                build_vocab(&both, VocabMode::Word, spec.vocab_max_size)
                    .map_err(|e| spec_err("vocab_max_size", e))?
            }
        };
        let split = |key: &str, text: &str| -> Result<DatasetSplit> {
            let seqs = chunk(&vocab.tokenize(text), spec.seq_len).map_err(|e| spec_err("seq_len", e))?;
            split_fit_test(seqs, spec.n_fit, spec.n_test, spec.seed).map_err(|e| spec_err(key, e))
        };
        let domain = split("domain_corpus", &domain_text)?;
        let general = split("general_corpus", &general_text)?;
        let v = vocab.size();
        let bos = vocab.bos_id();
        let small =
            NGramLM::train(&domain.train, v, bos, &spec.small).map_err(|e| spec_err("small", e))?;
        let large =
            NGramLM::train(&general.train, v, bos, &spec.large).map_err(|e| spec_err("large", e))?;
        let domain_fit = dump_cache(&small, &large, &domain.train_fit)?;
        let domain_test = dump_cache(&small, &large, &domain.test)?;
        let general_fit = dump_cache(&small, &large, &general.train_fit)?;
        let general_test = dump_cache(&small, &large, &general.test)?;
        Ok(Workbench {
            spec,
            vocab,
            domain,
            general,
            small,
            large,
            domain_fit,
            domain_test,
            general_fit,
            general_test,
            fitted: HashMap::new(),
        })
    }

    fn positions(&self, sequences: usize) -> usize {
        sequences * (self.spec.seq_len - 1)
    }

    fn fit(&self, kind: Kind, cache: &DistCache, mixin: Option<&DistCache>) -> Result<CombinationParams> {
        let cfg = self.spec.fit_config(kind);
        let init = CombinationParams::init(kind, cache.vocab_size(), self.spec.seed);
        Ok(fit_params(init, cache, mixin, &cfg)?.params)
    }

    /// Parameters of `kind` fitted on the first `sequences` domain fit
    /// sequences, memoized.
    pub fn domain_fit_params(&mut self, kind: Kind, sequences: usize) -> Result<&CombinationParams> {
        if sequences == 0 || sequences > self.spec.n_fit {
            return Err(spec_err(
                "fit_sizes",
                Error::NotEnoughData {
                    needed: sequences.max(1),
                    available: self.spec.n_fit,
                },
            ));
        }
        let key = FitKey::Domain { kind, sequences };
        if !self.fitted.contains_key(&key) {
            let params = if sequences == self.spec.n_fit {
                self.fit(kind, &self.domain_fit, None)?
            } else {
                let prefix = self.domain_fit.prefix(self.positions(sequences));
                self.fit(kind, &prefix, None)?
            };
            self.fitted.insert(key.clone(), params);
        }
        Ok(&self.fitted[&key])
    }

    pub fn mixin_fit_params(&mut self, kind: Kind) -> Result<&CombinationParams> {
        let key = FitKey::Mixin(kind);
        if !self.fitted.contains_key(&key) {
            let params = self.fit(kind, &self.domain_fit, Some(&self.general_fit))?;
            self.fitted.insert(key.clone(), params);
        }
        Ok(&self.fitted[&key])
    }

    fn baselines(
        experiment: &str,
        condition: &str,
        domain: &DistCache,
        general: Option<&DistCache>,
    ) -> Result<Vec<ResultRow>> {
        let score = |c: &DistCache, which: &str| -> Result<f64> {
            Ok(match which {
                "small" => perplexity_of_side(c, Side::Small)?.perplexity,
                "large" => perplexity_of_side(c, Side::Large)?.perplexity,
                _ => oracle_perplexity(c)?.perplexity,
            })
        };
        ["small", "large", "oracle"]
            .iter()
            .map(|&which| {
                Ok(ResultRow {
                    experiment: experiment.into(),
                    condition: condition.into(),
                    model: which.into(),
                    domain_ppl: Some(score(domain, which)?),
                    general_ppl: general.map(|g| score(g, which)).transpose()?,
                })
            })
            .collect()
    }

    fn combo_row(
        experiment: &str,
        condition: &str,
        params: &CombinationParams,
        domain: &DistCache,
        general: Option<&DistCache>,
    ) -> Result<ResultRow> {
        Ok(ResultRow {
            experiment: experiment.into(),
            condition: condition.into(),
            model: params.kind().name().into(),
            domain_ppl: Some(perplexity_of_combination(domain, params)?.perplexity),
            general_ppl: general
                .map(|g| perplexity_of_combination(g, params).map(|r| r.perplexity))
                .transpose()?,
        })
    }

    /// Every kind fitted on the full domain fit set.
    pub fn run_main(&mut self) -> Result<Vec<ResultRow>> {
        let exp = ExperimentKind::Main.name();
        let mut rows = Self::baselines(exp, "domain-fit", &self.domain_test, Some(&self.general_test))?;
        for kind in self.spec.kinds.clone() {
            let n = self.spec.n_fit;
            let params = self.domain_fit_params(kind, n)?.clone();
            rows.push(Self::combo_row(exp, "domain-fit", &params, &self.domain_test, Some(&self.general_test))?);
        }
        Ok(rows)
    }

    pub fn run_fit_size(&mut self) -> Result<Vec<ResultRow>> {
        let exp = ExperimentKind::FitSize.name();
        let mut rows = Vec::new();
        for n in self.spec.fit_sizes.clone() {
            let condition = n.to_string();
            rows.extend(Self::baselines(exp, &condition, &self.domain_test, None)?);
            for kind in self.spec.kinds.clone() {
                let params = self.domain_fit_params(kind, n)?.clone();
                rows.push(Self::combo_row(exp, &condition, &params, &self.domain_test, None)?);
            }
        }
        Ok(rows)
    }

    /// Compares the expert with a second, weaker generalist as the small
    /// model, both combined with the same large generalist.
    pub fn run_small_model(&mut self) -> Result<Vec<ResultRow>> {
        let exp = ExperimentKind::SmallModel.name();
        let mut rows = Self::baselines(exp, "expert", &self.domain_test, None)?;
        for kind in self.spec.kinds.clone() {
            let n = self.spec.n_fit;
            let params = self.domain_fit_params(kind, n)?.clone();
            rows.push(Self::combo_row(exp, "expert", &params, &self.domain_test, None)?);
        }
        let (fit, test) = self.second_generalist_caches()?;
        rows.extend(Self::baselines(exp, "generalist", &test, None)?);
        for &kind in &self.spec.kinds {
            let params = self.fit(kind, &fit, None)?;
            rows.push(Self::combo_row(exp, "generalist", &params, &test, None)?);
        }
        Ok(rows)
    }

    /// Domain fit and test caches with the second generalist as the small
    /// model.
    pub fn second_generalist_caches(&self) -> Result<(DistCache, DistCache)> {
        let sg = &self.spec.second_generalist;
        if !(sg.fraction > 0.0 && sg.fraction <= 1.0) {
            return Err(spec_err(
                "second_generalist",
                Error::InvalidArgument(format!("fraction must be in (0, 1], got {}", sg.fraction)),
            ));
        }
        let n = ((self.general.train.len() as f64 * sg.fraction).ceil() as usize).max(1);
        let cfg = NGramConfig {
            order: sg.order,
            alpha: self.spec.large.alpha,
            interp: None,
        };
        let lm = NGramLM::train(&self.general.train[..n], self.vocab.size(), self.vocab.bos_id(), &cfg)
            .map_err(|e| spec_err("second_generalist", e))?;
        Ok((
            dump_cache(&lm, &self.large, &self.domain.train_fit)?,
            dump_cache(&lm, &self.large, &self.domain.test)?,
        ))
    }

    pub fn run_mixin(&mut self) -> Result<Vec<ResultRow>> {
        let exp = ExperimentKind::Mixin.name();
        let mut rows = Vec::new();
        for condition in ["domain-fit", "mixin-fit"] {
            rows.extend(Self::baselines(exp, condition, &self.domain_test, Some(&self.general_test))?);
            for kind in self.spec.kinds.clone() {
                let params = if condition == "mixin-fit" {
                    self.mixin_fit_params(kind)?.clone()
                } else {
                    let n = self.spec.n_fit;
                    self.domain_fit_params(kind, n)?.clone()
                };
                rows.push(Self::combo_row(exp, condition, &params, &self.domain_test, Some(&self.general_test))?);
            }
        }
        Ok(rows)
    }

    pub fn run_expert_quality(&mut self) -> Result<Vec<ResultRow>> {
        let exp = ExperimentKind::ExpertQuality.name();
        let mut rows = Vec::new();
        for &fraction in &self.spec.expert_fractions {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(spec_err(
                    "expert_fractions",
                    Error::InvalidArgument(format!("fraction must be in (0, 1], got {fraction}")),
                ));
            }
            let n = ((self.domain.train.len() as f64 * fraction).ceil() as usize).max(1);
            let expert = NGramLM::train(&self.domain.train[..n], self.vocab.size(), self.vocab.bos_id(), &self.spec.small)
                .map_err(|e| spec_err("expert_fractions", e))?;
            let fit = dump_cache(&expert, &self.large, &self.domain.train_fit)?;
            let test = dump_cache(&expert, &self.large, &self.domain.test)?;
            let condition = format!("{}%", fraction * 100.0);
            rows.extend(Self::baselines(exp, &condition, &test, None)?);
            for &kind in &self.spec.kinds {
                let params = self.fit(kind, &fit, None)?;
                rows.push(Self::combo_row(exp, &condition, &params, &test, None)?);
            }
        }
        Ok(rows)
    }

    pub fn run(&mut self, experiment: ExperimentKind) -> Result<Vec<ResultRow>> {
        log::info!("running {}", experiment.name());
        match experiment {
            ExperimentKind::Main => self.run_main(),
            ExperimentKind::FitSize => self.run_fit_size(),
            ExperimentKind::SmallModel => self.run_small_model(),
            ExperimentKind::Mixin => self.run_mixin(),
            ExperimentKind::ExpertQuality => self.run_expert_quality(),
        }
    }

    pub fn small_lm(&self) -> &dyn LanguageModel {
        &self.small
    }

    pub fn large_lm(&self) -> &dyn LanguageModel {
        &self.large
    }
}

/// Prepares the shared models and caches, then runs every listed
/// experiment in order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResults> {
    let start = Instant::now();
    let mut bench = Workbench::prepare(spec.clone())?;
    let mut rows = Vec::new();
    for &e in &spec.experiments {
        rows.extend(bench.run(e)?);
    }
    Ok(ExperimentResults {
        name: spec.name.clone(),
        rows,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Aligned plain-text tables, one per experiment: models as rows,
/// conditions as columns, in-domain and (when present) general perplexity.
pub fn render_table(rows: &[ResultRow]) -> String {
    let mut out = String::new();
    let mut experiments: Vec<&str> = Vec::new();
    for r in rows {
        if !experiments.contains(&r.experiment.as_str()) {
            experiments.push(&r.experiment);
        }
    }
    for exp in experiments {
        let rows: Vec<&ResultRow> = rows.iter().filter(|r| r.experiment == exp).collect();
        let mut conditions: Vec<&str> = Vec::new();
        let mut models: Vec<&str> = Vec::new();
        for r in &rows {
            if !conditions.contains(&r.condition.as_str()) {
                conditions.push(&r.condition);
            }
            if !models.contains(&r.model.as_str()) {
                models.push(&r.model);
            }
        }
        let has_general = rows.iter().any(|r| r.general_ppl.is_some());
        let mut header = vec!["model".to_string()];
        for c in &conditions {
            if has_general {
                header.push(format!("{c} dom"));
                header.push(format!("{c} gen"));
            } else {
                header.push(c.to_string());
            }
        }
        let mut table = vec![header];
        for m in &models {
            let mut line = vec![m.to_string()];
            for c in &conditions {
                let r = rows.iter().find(|r| r.model == *m && r.condition == *c);
                let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
                line.push(cell(r.and_then(|r| r.domain_ppl)));
                if has_general {
                    line.push(cell(r.and_then(|r| r.general_ppl)));
                }
            }
            table.push(line);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|j| table.iter().map(|l| l[j].len()).max().unwrap_or(0))
            .collect();
        let _ = writeln!(out, "== {exp} ==");
        for (i, line) in table.iter().enumerate() {
            let cells: Vec<String> = line
                .iter()
                .enumerate()
                .map(|(j, c)| if j == 0 { format!("{c:<w$}", w = widths[j]) } else { format!("{c:>w$}", w = widths[j]) })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                let _ = writeln!(out, "{}", "-".repeat(total));
            }
        }
        out.push('\n');
    }
    out
}

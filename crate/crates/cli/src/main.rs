//! Command-line front end: corpora → stand-in LMs → distribution caches →
//! fitted combinations → evaluation and analysis.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use fuselm::eval::{self, ExperimentSpec, Side};
use fuselm::fit::{self, FitConfig};
use fuselm::lm::{dump_cache, LanguageModel, NGramConfig, RemoteLM};
use fuselm::synth::{self, Genre};
use fuselm::text::{build_vocab, chunk, split_fit_test, DatasetSplit, VocabMode};
use fuselm::{CombinationParams, DistCache, Error, Kind, NGramLM, TokenSequence, Vocabulary};

#[derive(Parser)]
#[command(name = "fuselm", version, about = "Fuse a small domain-expert LM with a large black-box LM")]
struct Cli {
    /// Flat JSON file supplying defaults for any flag (keys use underscores).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every random choice.
    #[arg(long, global = true, env = "FUSELM_SEED")]
    seed: Option<u64>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    SynthCorpus(SynthArgs),
    /// Build a vocabulary file from a corpus.
    Vocab(VocabArgs),
    /// Train an n-gram model on the train part of a corpus.
    TrainLm(TrainLmArgs),
    /// Cache next-token distributions of a small and a large model.
    DumpDists(DumpArgs),
    /// Fit a combination function on a cache.
    Fit(FitArgs),
    /// Perplexity of a model, a fitted combination or the max-prob oracle.
    Eval(EvalArgs),
    /// Spearman analysis of the combination weight and a token heatmap.
    Analyze(AnalyzeArgs),
    /// Run an experiment spec and emit its results tables.
    Experiment(ExperimentArgs),
}

/// Keys accepted in the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    corpus: Option<PathBuf>,
    vocab: Option<PathBuf>,
    mode: Option<VocabMode>,
    max_size: Option<usize>,
    seq_len: Option<usize>,
    n_fit: Option<usize>,
    n_test: Option<usize>,
    part: Option<Part>,
    order: Option<usize>,
    alpha: Option<f64>,
    small: Option<PathBuf>,
    large: Option<PathBuf>,
    remote: Option<String>,
    cache: Option<PathBuf>,
    params: Option<PathBuf>,
    kind: Option<Kind>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    mixin_cache: Option<PathBuf>,
    out: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    html: Option<PathBuf>,
    spec: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Part {
    Train,
    Fit,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelSide {
    Small,
    Large,
}

#[derive(Args)]
struct SynthArgs {
    /// Genre to draw documents from, as `name` or `name:weight`; repeat to
    /// mix genres.
    #[arg(long = "genre", required = true, value_parser = synth::parse_weighted)]
    genres: Vec<(Genre, f64)>,
    /// Approximate output size in bytes.
    #[arg(long)]
    bytes: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VocabArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    mode: Option<VocabMode>,
    /// Word mode: number of words kept besides the reserved tokens.
    #[arg(long)]
    max_size: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// How a corpus is cut into sequences and split.
#[derive(Args, Clone)]
struct SplitArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Tokens per sequence.
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    n_fit: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
}

#[derive(Args)]
struct TrainLmArgs {
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Comma-separated interpolation weights for orders 1..n.
    #[arg(long, value_delimiter = ',')]
    interp: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    split: SplitArgs,
    /// Which part of the split to cache.
    #[arg(long, value_enum)]
    part: Option<Part>,
    /// Small expert n-gram checkpoint.
    #[arg(long)]
    small: Option<PathBuf>,
    /// Large generalist n-gram checkpoint.
    #[arg(long, conflicts_with = "remote")]
    large: Option<PathBuf>,
    /// Endpoint of a remote large model speaking the distribution protocol.
    #[arg(long)]
    remote: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    kind: Option<Kind>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Second cache fitted jointly with the first.
    #[arg(long)]
    mixin_cache: Option<PathBuf>,
    /// Parameter checkpoint; the fit report goes to `<out>.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Score a fitted combination.
    #[arg(long, conflicts_with_all = ["oracle", "model", "lm"])]
    params: Option<PathBuf>,
    /// Score the max-prob oracle.
    #[arg(long, conflicts_with_all = ["model", "lm"])]
    oracle: bool,
    /// Score one of the cached models.
    #[arg(long, value_enum, conflicts_with = "lm")]
    model: Option<ModelSide>,
    /// Stream an n-gram checkpoint over the test part of a corpus instead
    /// of reading a cache.
    #[arg(long)]
    lm: Option<PathBuf>,
    #[command(flatten)]
    split: SplitArgs,
    /// JSON result file; defaults to `<input>.eval.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    params: Option<PathBuf>,
    /// Vocabulary used to render tokens in the heatmap.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Heatmap output file.
    #[arg(long)]
    html: Option<PathBuf>,
    /// Tokens shown in the heatmap.
    #[arg(long, default_value_t = 1000)]
    heatmap_tokens: usize,
    /// JSON result file; defaults to `<params>.analysis.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Receives `results.json` and `results.txt`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

const DEFAULT_SEQ_LEN: usize = 1024;
const DEFAULT_N: usize = 1000;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidArgument(msg.into()).into()
}

fn pick<T>(flag: Option<T>, file: Option<T>, name: &str) -> anyhow::Result<T> {
    flag.or(file).ok_or_else(|| usage(format!("missing required --{name}")))
}

fn existing(path: PathBuf) -> anyhow::Result<PathBuf> {
    if !path.exists() {
        return Err(usage(format!("input path {} does not exist", path.display())));
    }
    Ok(path)
}

fn input(flag: Option<PathBuf>, file: Option<PathBuf>, name: &str) -> anyhow::Result<PathBuf> {
    existing(pick(flag, file, name)?)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

struct Ctx {
    file: FileConfig,
    seed: u64,
}

impl Ctx {
    fn split(&self, a: SplitArgs) -> anyhow::Result<(Vocabulary, DatasetSplit)> {
        let f = &self.file;
        let corpus = input(a.corpus, f.corpus.clone(), "corpus")?;
        let vocab_path = input(a.vocab, f.vocab.clone(), "vocab")?;
        let seq_len = a.seq_len.or(f.seq_len).unwrap_or(DEFAULT_SEQ_LEN);
        let n_fit = a.n_fit.or(f.n_fit).unwrap_or(DEFAULT_N);
        let n_test = a.n_test.or(f.n_test).unwrap_or(DEFAULT_N);
        let vocab = Vocabulary::load(&vocab_path)?;
        let text = fs::read_to_string(&corpus).map_err(|e| Error::Io { path: corpus.clone(), source: e })?;
        let seqs = chunk(&vocab.tokenize(&text), seq_len)?;
        log::info!("{}: {} sequences of {seq_len} tokens", corpus.display(), seqs.len());
        Ok((vocab, split_fit_test(seqs, n_fit, n_test, self.seed)?))
    }
}

fn part_of(split: &DatasetSplit, part: Part) -> &[TokenSequence] {
    match part {
        Part::Train => &split.train,
        Part::Fit => &split.train_fit,
        Part::Test => &split.test,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(existing(p.clone())?)
                .with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", p.display())))?
        }
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let ctx = Ctx { file, seed };
    let f = &ctx.file;
    match cli.command {
        Command::SynthCorpus(a) => {
            let out = pick(a.out, f.out.clone(), "out")?;
            let text = synth::generate_weighted(&a.genres, a.bytes, seed)?;
            fs::write(&out, &text).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} bytes to {}", text.len(), out.display());
        }
        Command::Vocab(a) => {
            let corpus = input(a.corpus, f.corpus.clone(), "corpus")?;
            let mode = a.mode.or(f.mode).unwrap_or_default();
            let max_size = a.max_size.or(f.max_size).unwrap_or(8192);
            let out = pick(a.out, f.out.clone(), "out")?;
            let text = fs::read_to_string(&corpus).with_context(|| format!("reading {}", corpus.display()))?;
            let vocab = build_vocab(&text, mode, max_size)?;
            vocab.save(&out)?;
            println!("{mode} vocabulary of {} tokens -> {}", vocab.size(), out.display());
        }
        Command::TrainLm(a) => {
            let order = pick(a.order, f.order, "order")?;
            let alpha = a.alpha.or(f.alpha).unwrap_or(0.05);
            let out = pick(a.out, f.out.clone(), "out")?;
            let (vocab, split) = ctx.split(a.split)?;
            let cfg = NGramConfig {
                order,
                alpha,
                interp: a.interp,
            };
            let lm = NGramLM::train(&split.train, vocab.size(), vocab.bos_id(), &cfg)?;
            lm.save(&out)?;
            println!(
                "order-{order} model on {} train sequences -> {}",
                split.train.len(),
                out.display()
            );
        }
        Command::DumpDists(a) => {
            let part = a.part.or(f.part).unwrap_or(Part::Fit);
            let out = pick(a.out, f.out.clone(), "out")?;
            let small = NGramLM::load(&input(a.small, f.small.clone(), "small")?)?;
            let remote = a.remote.or(f.remote.clone());
            let large: Box<dyn LanguageModel> = match (a.large.or(f.large.clone()), remote) {
                (Some(_), Some(_)) => return Err(usage("give either --large or --remote, not both")),
                (Some(p), None) => Box::new(NGramLM::load(&existing(p)?)?),
                (None, Some(url)) => Box::new(RemoteLM::connect(&url)?),
                (None, None) => return Err(usage("missing required --large or --remote")),
            };
            let (_, split) = ctx.split(a.split)?;
            let cache = dump_cache(&small, large.as_ref(), part_of(&split, part))?;
            cache.write(&out)?;
            println!("{} positions -> {}", cache.len(), out.display());
        }
        Command::Fit(a) => {
            let kind = pick(a.kind, f.kind, "kind")?;
            let cache_path = input(a.cache, f.cache.clone(), "cache")?;
            let out = pick(a.out, f.out.clone(), "out")?;
            let config = FitConfig {
                kind,
                lr: a.lr.or(f.lr),
                batch_size: a.batch_size.or(f.batch_size).unwrap_or(fit::DEFAULT_BATCH_SIZE),
                epochs: a.epochs.or(f.epochs).unwrap_or(fit::DEFAULT_EPOCHS),
                seed,
                mixin_cache: a.mixin_cache.or(f.mixin_cache.clone()).map(existing).transpose()?,
            };
            config.validate()?;
            let cache = DistCache::read(&cache_path)?;
            let report = fit::fit(&cache, &config)?;
            report.params.save(&out)?;
            report.write_json(&with_suffix(&out, ".json"))?;
            println!("kind        {kind}");
            println!("lr          {}", config.lr());
            println!("batch_size  {}", config.batch_size);
            println!("epochs      {}", config.epochs);
            println!("steps       {}", report.steps());
            println!("positions   {}", report.positions_seen);
            if let Some(l) = report.loss_trace.last() {
                println!("final loss  {l:.6}");
            }
            println!("params      {}", out.display());
        }
        Command::Eval(a) => {
            let (label, result, input_path) = if let Some(lm_path) = a.lm {
                let lm_path = existing(lm_path)?;
                let lm = NGramLM::load(&lm_path)?;
                let (_, split) = ctx.split(a.split)?;
                (format!("lm {}", lm_path.display()), eval::perplexity_of_model(&lm, &split.test)?, lm_path)
            } else {
                let cache_path = input(a.cache, f.cache.clone(), "cache")?;
                let cache = DistCache::read(&cache_path)?;
                let (label, r) = if a.oracle {
                    ("oracle".to_string(), eval::oracle_perplexity(&cache)?)
                } else if let Some(side) = a.model {
                    let (name, side) = match side {
                        ModelSide::Small => ("small", Side::Small),
                        ModelSide::Large => ("large", Side::Large),
                    };
                    (name.to_string(), eval::perplexity_of_side(&cache, side)?)
                } else {
                    let params_path = input(a.params, f.params.clone(), "params")?;
                    let params = CombinationParams::load(&params_path)?;
                    (params.kind().to_string(), eval::perplexity_of_combination(&cache, &params)?)
                };
                (label, r, cache_path)
            };
            let out = a.out.unwrap_or_else(|| with_suffix(&input_path, ".eval.json"));
            let mut json = serde_json::to_value(&result)?;
            json["model"] = label.clone().into();
            write_json(&out, &json)?;
            println!("{label}  perplexity {:.4}  tokens {}", result.perplexity, result.token_count);
        }
        Command::Analyze(a) => {
            let cache = DistCache::read(&input(a.cache, f.cache.clone(), "cache")?)?;
            let params_path = input(a.params, f.params.clone(), "params")?;
            let params = CombinationParams::load(&params_path)?;
            let analysis = eval::analyze(&cache, &params)?;
            let t = &analysis.tokens;
            if let Some(html) = a.html.or(f.html.clone()) {
                let vocab = match a.vocab.or(f.vocab.clone()) {
                    Some(p) => Vocabulary::load(&existing(p)?)?,
                    None => Vocabulary::bytes(),
                };
                let n = a.heatmap_tokens.min(t.targets.len());
                let tokens: Vec<String> = t.targets[..n].iter().map(|&id| vocab.display_token(id)).collect();
                eval::write_heatmap(&html, &tokens, &t.diff[..n], &t.lambda[..n])?;
                println!("heatmap     {}", html.display());
            }
            let out = a.out.unwrap_or_else(|| with_suffix(&params_path, ".analysis.json"));
            write_json(&out, &serde_json::to_value(&analysis)?)?;
            println!("kind        {}", params.kind());
            println!("tokens      {}", t.targets.len());
            println!("spearman    {:.4}", analysis.rho);
        }
        Command::Experiment(a) => {
            let spec_path = input(a.spec, f.spec.clone(), "spec")?;
            let out_dir = a.out_dir.or(f.out_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
            let mut spec = ExperimentSpec::from_file(&spec_path)?;
            if cli.seed.is_some() || f.seed.is_some() {
                spec.seed = seed;
            }
            let results = eval::run_experiment(&spec)?;
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            write_json(&out_dir.join("results.json"), &serde_json::to_value(&results)?)?;
            let table = results.table();
            fs::write(out_dir.join("results.txt"), &table)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_usage() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_default_env()
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

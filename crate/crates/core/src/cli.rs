//! Command-line front end: `synth`, `train`, `prepare-pairs`, `eval`, `tag`.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for runtime errors.

use std::ffi::OsString;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::evaluation::{micro_f1, parse_conll, write_conll, EvalResult, TaggedSentence};
use crate::label_space::{EntitySpan, EntityTypeSet, LabelSpace};
use crate::par::Parallelism;
use crate::prob_algebra::Divergence;
use crate::synth::{generate_bundle, SplitSizes, SyntheticLanguageSpec};
use crate::tagger::{load_checkpoint, save_checkpoint};
use crate::training::{evaluate, train_run_with, RunMode, TrainingConfig, TrainingData};
use crate::translation::{
    build_pair_set, candidate_sources, read_pair_file, read_pair_stats, write_pair_file, CachedEngine,
    Direction, ExternalEngine, Lexicon, LexiconEngine, PairSource, ReorderRule, TranslationCache,
    TranslationEngine, EXTERNAL_URL_ENV,
};

pub const MODEL_FILE: &str = "model.json";
pub const REPORT_FILE: &str = "report.json";
pub const LOG_FILE: &str = "train.log";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Parser)]
#[command(name = "conner", version, about = "Cross-lingual tagging with consistency training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic language pair with gold annotations.
    Synth(SynthArgs),
    /// Train a tagger and write checkpoint, report and log.
    Train(TrainArgs),
    /// Project candidate spans through a translation engine.
    PreparePairs(PairArgs),
    /// Score a checkpoint or a prediction file against gold tags.
    Eval(EvalArgs),
    /// Tag a CoNLL file with a checkpoint.
    Tag(TagArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// `default` or a JSON spec file
    #[arg(long, default_value = "default")]
    spec: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Fraction of shared surface forms; overrides the spec
    #[arg(long, allow_hyphen_values = true, value_parser = unit_interval)]
    overlap: Option<f64>,
    #[arg(long, value_parser = positive_usize)]
    source_train: Option<usize>,
    #[arg(long, value_parser = positive_usize)]
    source_dev: Option<usize>,
    #[arg(long, value_parser = positive_usize)]
    target_train: Option<usize>,
    #[arg(long, value_parser = positive_usize)]
    target_test: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Run-config file; flags given on the command line take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    /// Labeled source-language CoNLL file
    #[arg(long)]
    train: PathBuf,
    /// Labeled source-language dev file
    #[arg(long)]
    dev: PathBuf,
    /// Unlabeled target-language text (CoNLL, tags ignored)
    #[arg(long)]
    unlabeled: Option<PathBuf>,
    /// Conjugate pairs built from target text
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Conjugate pairs built from labeled source text
    #[arg(long)]
    label_pairs: Option<PathBuf>,
    /// Labeled target-language test file
    #[arg(long)]
    test: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "PER,LOC,ORG,MISC")]
    types: String,
    #[arg(long, default_value = "src")]
    source_lang: String,
    #[arg(long, default_value = "tgt")]
    target_lang: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true, value_parser = non_negative)]
    alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true, value_parser = non_negative)]
    beta: Option<f64>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<RunMode>,
    #[arg(long, value_parser = parse_divergence)]
    divergence: Option<Divergence>,
    #[arg(long, value_parser = positive_usize)]
    epochs: Option<usize>,
    #[arg(long, allow_hyphen_values = true, value_parser = positive_f64)]
    lr: Option<f64>,
    #[arg(long, allow_hyphen_values = true, value_parser = dropout_rate)]
    dropout: Option<f64>,
    #[arg(long, value_parser = positive_usize)]
    patience: Option<usize>,
    #[arg(long, value_parser = positive_usize)]
    labeled_batch_size: Option<usize>,
    #[arg(long, value_parser = positive_usize)]
    unlabeled_batch_size: Option<usize>,
    /// Run on one thread (results are identical either way)
    #[arg(long)]
    sequential: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum EngineKind {
    /// Lexicon substitution with a reorder rule
    Lexicon,
    /// Answers only from the translation cache
    Cached,
    /// HTTP engine at $CONNER_EXTERNAL_ENGINE_URL
    External,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DirectionArg {
    /// Left lexicon column to right
    Forward,
    /// Right lexicon column to left
    Backward,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ReorderArg {
    Identity,
    Reverse,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("spans").required(true).args(["weak", "gold"])))]
struct PairArgs {
    /// CoNLL file whose sentences are projected
    #[arg(long)]
    input: PathBuf,
    /// Weak-tagger checkpoint selecting candidate spans
    #[arg(long)]
    weak: Option<PathBuf>,
    /// Use the input's gold entities as candidates
    #[arg(long)]
    gold: bool,
    #[arg(long, default_value = "PER,LOC,ORG,MISC")]
    types: String,
    #[arg(long, value_enum, default_value_t = EngineKind::Lexicon)]
    engine: EngineKind,
    /// Lexicon TSV for the lexicon engine
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DirectionArg::Backward)]
    direction: DirectionArg,
    #[arg(long, value_enum, default_value_t = ReorderArg::Reverse)]
    reorder: ReorderArg,
    /// Probability that the lexicon engine breaks a placeholder
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true, value_parser = unit_interval)]
    rho: f64,
    /// Translation cache (JSON lines); written through for live engines
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, default_value = "tgt")]
    input_lang: String,
    #[arg(long, default_value = "src")]
    output_lang: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["model", "pred"])))]
struct EvalArgs {
    /// Gold CoNLL file
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Predicted CoNLL file aligned with --test
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Entity types when scoring --pred
    #[arg(long, default_value = "PER,LOC,ORG,MISC")]
    types: String,
    #[arg(long, default_value = "tgt")]
    lang: String,
    /// Write the full result as JSON
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Args)]
struct TagArgs {
    #[arg(long)]
    model: PathBuf,
    /// CoNLL input; a tag column, if present, is ignored
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "tgt")]
    lang: String,
    #[arg(long)]
    sequential: bool,
}

fn non_negative(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        _ => Err(format!("expected a non-negative number, got {s:?}")),
    }
}

fn positive_f64(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(format!("expected a positive number, got {s:?}")),
    }
}

fn unit_interval(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
        _ => Err(format!("expected a number in [0, 1], got {s:?}")),
    }
}

fn dropout_rate(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if (0.0..1.0).contains(&v) => Ok(v),
        _ => Err(format!("expected a number in [0, 1), got {s:?}")),
    }
}

fn positive_usize(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(format!("expected a positive integer, got {s:?}")),
    }
}

fn parse_mode(s: &str) -> std::result::Result<RunMode, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = RunMode::ALL.iter().map(|m| m.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn parse_divergence(s: &str) -> std::result::Result<Divergence, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = Divergence::ALL.iter().map(|d| d.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn parallelism(sequential: bool) -> Parallelism {
    if sequential {
        Parallelism::Sequential
    } else {
        Parallelism::Parallel
    }
}

fn types_flag(list: &str) -> CliResult<LabelSpace> {
    EntityTypeSet::parse_list(list)
        .map(LabelSpace::new)
        .map_err(|e| CliError::Usage(format!("--types: {e}")))
}

/// Reads CoNLL text, detecting from the first token line whether a tag
/// column is present. Tags are dropped when `keep_tags` is false.
fn read_text(path: &Path, space: &LabelSpace, lang: &str, keep_tags: bool) -> Result<Vec<TaggedSentence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let has_tags = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .is_some_and(|l| l.split_whitespace().count() >= 2);
    let sentences = parse_conll(&text, has_tags, space, lang).map_err(|e| with_path(e, path))?;
    Ok(if keep_tags {
        sentences
    } else {
        sentences
            .into_iter()
            .map(|s| TaggedSentence::unlabeled(s.tokens, lang))
            .collect()
    })
}

fn read_labeled(path: &Path, space: &LabelSpace, lang: &str) -> Result<Vec<TaggedSentence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conll(&text, true, space, lang).map_err(|e| with_path(e, path))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse { line, message, .. } => Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        },
        other => other,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn synth(args: SynthArgs) -> CliResult<String> {
    let mut spec = if args.spec == "default" {
        SyntheticLanguageSpec::default()
    } else {
        let path = Path::new(&args.spec);
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?
    };
    if let Some(o) = args.overlap {
        spec.overlap = o;
    }
    let d = SplitSizes::default();
    let sizes = SplitSizes {
        source_train: args.source_train.unwrap_or(d.source_train),
        source_dev: args.source_dev.unwrap_or(d.source_dev),
        target_train: args.target_train.unwrap_or(d.target_train),
        target_test: args.target_test.unwrap_or(d.target_test),
    };
    let bundle = generate_bundle(&spec, sizes, args.seed)?;
    bundle.write(&args.out)?;
    Ok(format!(
        "synth: seed {} wrote {}/{}/{}/{} sentences and {} lexicon entries to {}",
        args.seed,
        sizes.source_train,
        sizes.source_dev,
        sizes.target_train,
        sizes.target_test,
        bundle.lexicon.len(),
        args.out.display()
    ))
}

fn effective_config(args: &TrainArgs) -> CliResult<TrainingConfig> {
    let mut c = match &args.config {
        Some(p) => TrainingConfig::read(p)?,
        None => TrainingConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => {$(if let Some(v) = args.$f { c.$f = v; })*};
    }
    set!(seed, alpha, beta, mode, divergence, epochs, lr, dropout, patience, labeled_batch_size, unlabeled_batch_size);
    c.validate().map_err(|e| CliError::Usage(format!("--config: {e}")))?;
    Ok(c)
}

fn train(args: TrainArgs) -> CliResult<String> {
    let config = effective_config(&args)?;
    let space = types_flag(&args.types)?;
    let par = parallelism(args.sequential);
    let mut data = TrainingData::new(
        space.clone(),
        read_labeled(&args.train, &space, &args.source_lang)?,
        read_labeled(&args.dev, &space, &args.source_lang)?,
    );
    if let Some(p) = &args.unlabeled {
        data.unlabeled = read_text(p, &space, &args.target_lang, false)?;
    }
    if let Some(p) = &args.test {
        data.test = read_labeled(p, &space, &args.target_lang)?;
    }
    if let Some(p) = &args.pairs {
        data.pairs = read_pair_file(p)?;
        data.pair_stats = read_pair_stats(p)?;
    }
    if let Some(p) = &args.label_pairs {
        data.label_pairs = read_pair_file(p)?;
    }
    let needs = |cond: bool, flag: &str| -> CliResult<()> {
        if cond {
            Err(CliError::Usage(format!("--mode {} needs {flag}", config.mode.name())))
        } else {
            Ok(())
        }
    };
    needs(config.trans_weight() > 0.0 && config.mode.uses_target_pairs() && args.pairs.is_none(), "--pairs")?;
    needs(config.trans_weight() > 0.0 && config.mode.uses_label_pairs() && args.label_pairs.is_none(), "--label-pairs")?;
    needs(config.drop_weight() > 0.0 && config.mode.drop_on_unlabeled() && args.unlabeled.is_none(), "--unlabeled")?;

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    config.write(args.out.join(CONFIG_FILE))?;
    let log_path = args.out.join(LOG_FILE);
    write_text(&log_path, "")?;
    let outcome = train_run_with(&data, &config, par, |rec| {
        let mut f = OpenOptions::new()
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        writeln!(f, "{}", rec.log_line()).map_err(|e| Error::io(&log_path, e))
    })?;
    save_checkpoint(&outcome.tagger, args.out.join(MODEL_FILE))?;
    let report = &outcome.report;
    write_text(&args.out.join(REPORT_FILE), &report.to_json())?;
    let test = report
        .test
        .as_ref()
        .map(|t| format!(", test F1 {:.4}", t.f1))
        .unwrap_or_default();
    Ok(format!(
        "train: mode {} epochs {} selected {} dev F1 {:.4}{} -> {}",
        config.mode.name(),
        report.epochs.len(),
        report.selected_epoch,
        report.best_dev_f1,
        test,
        args.out.display()
    ))
}

fn prepare_pairs(args: PairArgs) -> CliResult<String> {
    let par = parallelism(args.sequential);
    let langs = (args.input_lang.as_str(), args.output_lang.as_str());
    let sources: Vec<PairSource> = if let Some(weak) = &args.weak {
        let tagger = load_checkpoint(weak)?;
        let sentences = read_text(&args.input, &tagger.space, &args.input_lang, false)?;
        let tokens: Vec<Vec<String>> = sentences.into_iter().map(|s| s.tokens).collect();
        candidate_sources(&tagger, &tokens, par)?
    } else {
        let space = types_flag(&args.types)?;
        let sentences = read_text(&args.input, &space, &args.input_lang, true)?;
        if sentences.iter().any(|s| s.tags.is_none()) {
            return Err(CliError::Usage("--gold needs a tagged --input".into()));
        }
        sentences
            .iter()
            .enumerate()
            .map(|(i, s)| PairSource {
                sentence_id: i,
                tokens: s.tokens.clone(),
                candidates: s.spans().iter().map(EntitySpan::bounds).collect(),
            })
            .collect()
    };

    let cache = match &args.cache {
        Some(p) => Some(TranslationCache::open(p)?),
        None => None,
    };
    let live: Option<Box<dyn TranslationEngine>> = match args.engine {
        EngineKind::Lexicon => {
            let path = args
                .lexicon
                .as_ref()
                .ok_or_else(|| CliError::Usage("--engine lexicon needs --lexicon".into()))?;
            let direction = match args.direction {
                DirectionArg::Forward => Direction::Forward,
                DirectionArg::Backward => Direction::Backward,
            };
            let reorder = match args.reorder {
                ReorderArg::Identity => ReorderRule::Identity,
                ReorderArg::Reverse => ReorderRule::Reverse,
            };
            let engine = LexiconEngine::new(Arc::new(Lexicon::read_tsv(path)?), direction, reorder, langs)
                .with_placeholder_noise(args.rho, args.seed);
            Some(Box::new(engine))
        }
        EngineKind::External => {
            let engine = ExternalEngine::from_env(langs.0, langs.1)
                .ok_or_else(|| CliError::Usage(format!("--engine external needs {EXTERNAL_URL_ENV}")))?;
            Some(Box::new(engine))
        }
        EngineKind::Cached => None,
    };
    let wrapped;
    let engine: &dyn TranslationEngine = match (&live, &cache) {
        (Some(e), Some(c)) => {
            wrapped = CachedEngine::new(e.as_ref(), c);
            &wrapped
        }
        (Some(e), None) => e.as_ref(),
        (None, Some(c)) => {
            let ids = c.engine_ids();
            let [id] = ids.as_slice() else {
                return Err(CliError::Usage(format!(
                    "--engine cached needs a --cache holding exactly one engine, found {}",
                    ids.len()
                )));
            };
            wrapped = CachedEngine::cache_only(id, langs, c);
            &wrapped
        }
        (None, None) => return Err(CliError::Usage("--engine cached needs --cache".into())),
    };
    let set = build_pair_set(&sources, engine, par)?;
    if let Some(c) = &cache {
        c.flush()?;
    }
    write_pair_file(&args.out, &set.pairs, &set.stats)?;
    Ok(format!(
        "prepare-pairs: {} pairs from {} candidates ({} dropped, {} failed sentences) -> {}",
        set.stats.emitted,
        set.stats.candidates,
        set.stats.total_dropped(),
        set.stats.failed_sentences,
        args.out.display()
    ))
}

fn eval(args: EvalArgs) -> CliResult<String> {
    let par = parallelism(args.sequential);
    let result: EvalResult;
    let space;
    if let Some(model) = &args.model {
        let tagger = load_checkpoint(model)?;
        let gold = read_labeled(&args.test, &tagger.space, &args.lang)?;
        result = evaluate(&tagger, &gold, par)?;
        space = tagger.space;
    } else {
        space = types_flag(&args.types)?;
        let gold = read_labeled(&args.test, &space, &args.lang)?;
        let pred_path = args.pred.as_ref().expect("clap group");
        let pred = read_labeled(pred_path, &space, &args.lang)?;
        if pred.len() != gold.len() || pred.iter().zip(&gold).any(|(p, g)| p.tokens != g.tokens) {
            return Err(Error::invalid("--pred does not match the sentences of --test").into());
        }
        let spans = |s: &[TaggedSentence]| s.iter().map(TaggedSentence::spans).collect::<Vec<_>>();
        result = micro_f1(&spans(&gold), &spans(&pred))?;
    }
    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&result.named(&space)).map_err(|e| Error::json("eval result", e))?;
        write_text(out, &(json + "\n"))?;
    }
    let c = result.counts;
    Ok(format!(
        "eval: P {:.4} R {:.4} F1 {:.4} (gold {}, predicted {}, correct {})",
        result.precision, result.recall, result.f1, c.gold, c.predicted, c.correct
    ))
}

fn tag(args: TagArgs) -> CliResult<String> {
    let tagger = load_checkpoint(&args.model)?;
    let input = read_text(&args.input, &tagger.space, &args.lang, false)?;
    let tagged: Vec<TaggedSentence> = crate::par::map(parallelism(args.sequential), &input, |_, s| {
        let tags = tagger.predict(&s.tokens)?;
        TaggedSentence::labeled(s.tokens.clone(), tags, &args.lang)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    write_conll(&tagged, &tagger.space, &args.out)?;
    let entities: usize = tagged.iter().map(|s| s.spans().len()).sum();
    Ok(format!(
        "tag: {} sentences, {} entities -> {}",
        tagged.len(),
        entities,
        args.out.display()
    ))
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Messages go to stdout and stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::PreparePairs(a) => prepare_pairs(a),
        Command::Eval(a) => eval(a),
        Command::Tag(a) => tag(a),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

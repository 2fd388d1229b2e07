use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{micro_f1, EvalResult, NamedEvalResult, TaggedSentence};
use crate::label_space::{EntitySpan, LabelSpace};
use crate::par::{self, Parallelism};
use crate::tagger::{AdamW, Tagger, Vocabulary};
use crate::translation::{ConjugatePair, DropStats};

use super::config::TrainingConfig;
use super::losses::{derive_seed, total_loss_step, LabeledExample, PairExample};

/// Everything a run may draw on. Which parts are used depends on the mode.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub space: LabelSpace,
    /// Labeled source-language sentences.
    pub labeled: Vec<TaggedSentence>,
    /// Unlabeled target-language sentences.
    pub unlabeled: Vec<TaggedSentence>,
    /// Pairs whose original side is unlabeled target text.
    pub pairs: Vec<ConjugatePair>,
    /// Pairs whose original side is labeled source text.
    pub label_pairs: Vec<ConjugatePair>,
    /// Source-language dev set for model selection.
    pub dev: Vec<TaggedSentence>,
    /// Target-language test set; may be empty.
    pub test: Vec<TaggedSentence>,
    pub pair_stats: Option<DropStats>,
}

impl TrainingData {
    pub fn new(space: LabelSpace, labeled: Vec<TaggedSentence>, dev: Vec<TaggedSentence>) -> Self {
        TrainingData {
            space,
            labeled,
            unlabeled: Vec::new(),
            pairs: Vec::new(),
            label_pairs: Vec::new(),
            dev,
            test: Vec::new(),
            pair_stats: None,
        }
    }

    /// Vocabulary over every token the run can see during training.
    pub fn vocabulary(&self) -> Vocabulary {
        let sentences = self
            .labeled
            .iter()
            .chain(&self.unlabeled)
            .map(|s| s.tokens.as_slice());
        let pair_sides = self
            .pairs
            .iter()
            .chain(&self.label_pairs)
            .flat_map(|p| [p.original_tokens.as_slice(), p.translated_tokens.as_slice()]);
        let all: Vec<&[String]> = sentences.chain(pair_sides).collect();
        Vocabulary::build(all.iter().copied())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub ce: f64,
    pub drop: f64,
    pub trans: f64,
    pub total: f64,
    pub dev_f1: f64,
}

impl EpochRecord {
    pub fn log_line(&self) -> String {
        format!(
            "epoch {} steps {} ce {:.6} drop {:.6} trans {:.6} total {:.6} dev_f1 {:.6}",
            self.epoch, self.steps, self.ce, self.drop, self.trans, self.total, self.dev_f1
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DataCounts {
    pub labeled: usize,
    pub unlabeled: usize,
    pub pairs: usize,
    pub label_pairs: usize,
    pub dev: usize,
    pub test: usize,
    pub vocab: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Effective configuration of the run.
    pub config: TrainingConfig,
    pub data: DataCounts,
    pub epochs: Vec<EpochRecord>,
    pub selected_epoch: usize,
    pub best_dev_f1: f64,
    pub stopped_early: bool,
    /// Metrics of the selected checkpoint on the test set.
    pub test: Option<NamedEvalResult>,
    pub pair_drops: Option<DropStats>,
}

impl TrainingReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

pub struct TrainOutcome {
    pub report: TrainingReport,
    /// Tagger at the selected epoch.
    pub tagger: Tagger,
}

/// Entity-level scores of Viterbi predictions against gold tags.
pub fn evaluate(tagger: &Tagger, sentences: &[TaggedSentence], parallelism: Parallelism) -> Result<EvalResult> {
    if sentences.iter().any(|s| s.tags.is_none()) {
        return Err(Error::invalid("evaluation needs labeled sentences"));
    }
    let pred: Vec<Vec<EntitySpan>> = par::map(parallelism, sentences, |_, s| tagger.predict_spans(&s.tokens))
        .into_iter()
        .collect::<Result<_>>()?;
    let gold: Vec<Vec<EntitySpan>> = sentences.iter().map(TaggedSentence::spans).collect();
    micro_f1(&gold, &pred)
}

/// Endless reshuffled pass over `0..n`; every cycle has its own order.
struct CyclicStream {
    order: Vec<usize>,
    pos: usize,
    cycle: u64,
    seed: u64,
}

impl CyclicStream {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = CyclicStream {
            order: (0..n).collect(),
            pos: 0,
            cycle: 0,
            seed,
        };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[self.cycle]));
        self.order.sort_unstable();
        self.order.shuffle(&mut rng);
    }

    fn take(&mut self, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        if self.order.is_empty() {
            return out;
        }
        while out.len() < k {
            if self.pos == self.order.len() {
                self.cycle += 1;
                self.pos = 0;
                self.shuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Model selection on a score that should go up.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_score: f64,
    pub best_epoch: usize,
    since_improvement: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Verdict {
    /// This epoch becomes the selected checkpoint.
    pub keep: bool,
    /// Patience is exhausted.
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best_score: f64::NEG_INFINITY,
            best_epoch: 0,
            since_improvement: 0,
        }
    }

    /// A tie keeps the later epoch but does not reset patience.
    pub fn observe(&mut self, epoch: usize, score: f64) -> Verdict {
        let improved = score > self.best_score;
        let keep = score >= self.best_score;
        if keep {
            self.best_score = score;
            self.best_epoch = epoch;
        }
        if improved {
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        Verdict {
            keep,
            stop: self.since_improvement >= self.patience,
        }
    }
}

fn encode_pairs(tagger: &Tagger, pairs: &[ConjugatePair]) -> Vec<PairExample> {
    pairs
        .iter()
        .map(|p| PairExample {
            original_ids: tagger.encode(&p.original_tokens),
            original_span: p.original_span,
            translated_ids: tagger.encode(&p.translated_tokens),
            translated_span: p.translated_span,
        })
        .collect()
}

const STREAM_LABELED: u64 = 1;
const STREAM_PAIRS: u64 = 2;
const STREAM_UNLABELED: u64 = 3;
const STREAM_STEP: u64 = 4;

pub fn train_run(data: &TrainingData, config: &TrainingConfig, parallelism: Parallelism) -> Result<TrainOutcome> {
    train_run_with(data, config, parallelism, |_| Ok(()))
}

/// Trains with early stopping on dev F1, calling `on_epoch` after each
/// epoch. Among epochs with equal dev F1 the later one is kept.
pub fn train_run_with(
    data: &TrainingData,
    config: &TrainingConfig,
    parallelism: Parallelism,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mode = config.mode;
    if data.labeled.is_empty() {
        return Err(Error::invalid("labeled corpus is empty"));
    }
    if data.dev.is_empty() {
        return Err(Error::invalid("dev corpus is empty"));
    }
    if data.labeled.iter().any(|s| s.tags.is_none()) {
        return Err(Error::invalid("labeled corpus contains unlabeled sentences"));
    }
    let beta = config.trans_weight();
    let alpha = config.drop_weight();
    if beta > 0.0 && mode.uses_target_pairs() && data.pairs.is_empty() {
        return Err(Error::invalid(format!("mode {} needs conjugate pairs", mode.name())));
    }
    if beta > 0.0 && mode.uses_label_pairs() && data.label_pairs.is_empty() {
        return Err(Error::invalid(format!("mode {} needs labeled-source pairs", mode.name())));
    }
    if alpha > 0.0 && mode.drop_on_unlabeled() && data.unlabeled.is_empty() {
        return Err(Error::invalid(format!("mode {} needs unlabeled sentences", mode.name())));
    }

    let vocab = data.vocabulary();
    let mut tagger = Tagger::new(config.tagger_config(), data.space.clone(), vocab)?;
    let labeled: Vec<LabeledExample> = data
        .labeled
        .iter()
        .map(|s| LabeledExample {
            ids: tagger.encode(&s.tokens),
            tags: s.tags.clone().expect("checked above"),
        })
        .collect();
    let pairs = if mode.uses_label_pairs() {
        encode_pairs(&tagger, &data.label_pairs)
    } else if mode.uses_target_pairs() {
        encode_pairs(&tagger, &data.pairs)
    } else {
        Vec::new()
    };
    let unlabeled: Vec<Vec<usize>> = if mode.drop_on_unlabeled() {
        data.unlabeled.iter().map(|s| tagger.encode(&s.tokens)).collect()
    } else {
        Vec::new()
    };

    let mut pair_stream = CyclicStream::new(pairs.len(), derive_seed(config.seed, &[STREAM_PAIRS]));
    let mut unl_stream = CyclicStream::new(unlabeled.len(), derive_seed(config.seed, &[STREAM_UNLABELED]));
    let mut opt = AdamW::new(config.weight_decay);
    let mut records = Vec::new();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best: Option<Tagger> = None;
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..labeled.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[STREAM_LABELED, epoch as u64]));
        order.shuffle(&mut rng);
        let (mut ce, mut drop, mut trans, mut total) = (0.0, 0.0, 0.0, 0.0);
        let mut steps = 0;
        for (step, chunk) in order.chunks(config.labeled_batch_size).enumerate() {
            let lb: Vec<&LabeledExample> = chunk.iter().map(|&i| &labeled[i]).collect();
            let pb: Vec<&PairExample> = if beta > 0.0 {
                pair_stream
                    .take(config.unlabeled_batch_size)
                    .into_iter()
                    .map(|i| &pairs[i])
                    .collect()
            } else {
                Vec::new()
            };
            let ub: Vec<&[usize]> = if alpha > 0.0 {
                unl_stream
                    .take(config.unlabeled_batch_size)
                    .into_iter()
                    .map(|i| unlabeled[i].as_slice())
                    .collect()
            } else {
                Vec::new()
            };
            let step_seed = derive_seed(config.seed, &[STREAM_STEP, epoch as u64, step as u64]);
            let at = |e: Error| match e {
                Error::TrainingDiverged { what, .. } => Error::TrainingDiverged { epoch, step, what },
                other => other,
            };
            let out = total_loss_step(&tagger, &lb, &pb, &ub, config, step_seed, parallelism).map_err(at)?;
            tagger.apply_gradients(&out.grads, &mut opt, config.lr).map_err(at)?;
            if !tagger.params.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    step,
                    what: "non-finite parameters".into(),
                });
            }
            ce += out.ce;
            drop += out.drop;
            trans += out.trans;
            total += out.total;
            steps += 1;
        }
        let n = steps as f64;
        let dev_f1 = evaluate(&tagger, &data.dev, parallelism)?.f1;
        let record = EpochRecord {
            epoch,
            steps,
            ce: ce / n,
            drop: drop / n,
            trans: trans / n,
            total: total / n,
            dev_f1,
        };
        on_epoch(&record)?;
        records.push(record);

        let verdict = stopper.observe(epoch, dev_f1);
        if verdict.keep {
            best = Some(tagger.clone());
        }
        if verdict.stop && epoch < config.epochs {
            stopped_early = true;
            break;
        }
    }

    let best_tagger = best.expect("at least one epoch");
    let (best_dev_f1, selected_epoch) = (stopper.best_score, stopper.best_epoch);
    let test = if data.test.is_empty() {
        None
    } else {
        Some(evaluate(&best_tagger, &data.test, parallelism)?.named(&data.space))
    };
    let report = TrainingReport {
        config: config.clone(),
        data: DataCounts {
            labeled: data.labeled.len(),
            unlabeled: data.unlabeled.len(),
            pairs: data.pairs.len(),
            label_pairs: data.label_pairs.len(),
            dev: data.dev.len(),
            test: data.test.len(),
            vocab: best_tagger.vocab.len(),
        },
        epochs: records,
        selected_epoch,
        best_dev_f1,
        stopped_early,
        test,
        pair_drops: data.pair_stats.clone(),
    };
    Ok(TrainOutcome {
        report,
        tagger: best_tagger,
    })
}

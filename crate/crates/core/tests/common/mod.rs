#![allow(dead_code)]

use conner::evaluation::TaggedSentence;
use conner::label_space::{EntitySpan, LabelSpace, SpanBounds};
use conner::synth::{generate_bundle, CorpusBundle, SplitSizes, SyntheticLanguageSpec};
use conner::tagger::{Gradients, Tagger, TaggerConfig, Vocabulary, NUM_BLOCKS};
use conner::training::{LabeledExample, PairExample};

/// Two entity types, vocabulary of 20 (19 words + UNK), d_emb 4, d_hid 6.
pub fn micro_tagger(seed: u64, dropout: f64) -> Tagger {
    let words: Vec<String> = (0..19).map(|i| format!("w{i:02}")).collect();
    let vocab = Vocabulary::build([words.as_slice()]);
    assert_eq!(vocab.len(), 20);
    let space = LabelSpace::from_names(["PER", "LOC"]).unwrap();
    let config = TaggerConfig {
        vocab_size: 20,
        d_emb: 4,
        window: 1,
        d_hid: 6,
        dropout,
        seed,
    };
    let mut tagger = Tagger::new(config, space, vocab).unwrap();
    // nonzero biases and transitions so every parameter block is exercised
    for (k, b) in tagger.params.hidden_b.iter_mut().enumerate() {
        *b = 0.05 * k as f64 - 0.1;
    }
    for (k, b) in tagger.params.emit_b.iter_mut().enumerate() {
        *b = 0.1 * ((k * 7) % 5) as f64 - 0.2;
    }
    for (k, t) in tagger.params.transitions.iter_mut().enumerate() {
        *t = 0.03 * ((k * 11) % 13) as f64 - 0.15;
    }
    tagger
}

pub fn micro_labeled() -> Vec<LabeledExample> {
    let space = LabelSpace::from_names(["PER", "LOC"]).unwrap();
    let make = |ids: Vec<usize>, spans: &[EntitySpan]| LabeledExample {
        tags: conner::label_space::encode_entities(ids.len(), spans).unwrap(),
        ids,
    };
    let a = make(vec![3, 7, 8, 1, 12], &[EntitySpan::new(1, 2, 0), EntitySpan::new(4, 4, 1)]);
    let b = make(vec![5, 0, 14, 15, 16, 2], &[EntitySpan::new(2, 4, 1)]);
    for ex in [&a, &b] {
        assert!(ex.tags.iter().all(|t| space.contains(*t)));
    }
    vec![a, b]
}

pub fn micro_pair() -> PairExample {
    PairExample {
        original_ids: vec![3, 7, 8, 1, 12],
        original_span: SpanBounds::new(1, 2),
        translated_ids: vec![10, 11, 9, 18, 17, 4],
        translated_span: SpanBounds::new(2, 4),
    }
}

/// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)` over
/// every parameter, with central differences of step `h`.
pub fn max_fd_error(
    tagger: &Tagger,
    grads: &Gradients,
    h: f64,
    mut loss: impl FnMut(&Tagger) -> f64,
) -> f64 {
    let analytic = grads.to_dense(&tagger.params);
    let mut probe = tagger.clone();
    let mut worst = 0.0f64;
    for b in 0..NUM_BLOCKS {
        let n = tagger.params.blocks()[b].len();
        for i in 0..n {
            let orig = tagger.params.blocks()[b][i];
            probe.params.blocks_mut()[b][i] = orig + h;
            let lp = loss(&probe);
            probe.params.blocks_mut()[b][i] = orig - h;
            let lm = loss(&probe);
            probe.params.blocks_mut()[b][i] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic[b][i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

pub fn small_sizes() -> SplitSizes {
    SplitSizes {
        source_train: 160,
        source_dev: 40,
        target_train: 120,
        target_test: 60,
    }
}

pub fn small_bundle(seed: u64) -> CorpusBundle {
    generate_bundle(&SyntheticLanguageSpec::default(), small_sizes(), seed).unwrap()
}

pub fn tokens_of(sentences: &[TaggedSentence]) -> Vec<Vec<String>> {
    sentences.iter().map(|s| s.tokens.clone()).collect()
}

pub fn temp_dir(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("conner-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

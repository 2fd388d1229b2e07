//! Alignment-free span projection: mask a span with a placeholder,
//! translate, find the placeholder, translate the span on its own and
//! splice it back in.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::engine::{EngineError, TranslationEngine};
use crate::error::{Error, Result};
use crate::label_space::{decode_tags, DecodeMode, SpanBounds};
use crate::par::{self, Parallelism};
use crate::tagger::Tagger;

pub const PLACEHOLDER_PREFIX: &str = "SPANX";

pub fn placeholder(ordinal: usize) -> String {
    format!("{PLACEHOLDER_PREFIX}{ordinal:03}")
}

/// `SPANX` followed by exactly three digits.
pub fn is_placeholder(token: &str) -> bool {
    token.len() == PLACEHOLDER_PREFIX.len() + 3
        && token.starts_with(PLACEHOLDER_PREFIX)
        && token[PLACEHOLDER_PREFIX.len()..].bytes().all(|b| b.is_ascii_digit())
}

pub fn mask_span(tokens: &[String], span: SpanBounds, ordinal: usize) -> Result<Vec<String>> {
    if span.start > span.end || span.end >= tokens.len() {
        return Err(Error::invalid(format!(
            "span ({}, {}) out of bounds for {} tokens",
            span.start,
            span.end,
            tokens.len()
        )));
    }
    if ordinal > 999 {
        return Err(Error::invalid("placeholder ordinal must fit in three digits"));
    }
    let mut out = Vec::with_capacity(tokens.len() - span.len() + 1);
    out.extend_from_slice(&tokens[..span.start]);
    out.push(placeholder(ordinal));
    out.extend_from_slice(&tokens[span.end + 1..]);
    Ok(out)
}

/// Where a placeholder ended up, plus any punctuation glued onto it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlaceholderMatch {
    Found {
        index: usize,
        leading: Option<char>,
        trailing: Option<char>,
    },
    Missing,
    Duplicated(usize),
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

fn match_token(token: &str, target: &str) -> Option<(Option<char>, Option<char>)> {
    let lower = token.to_lowercase();
    let mut body = lower.as_str();
    let mut leading = None;
    let mut trailing = None;
    if let Some(c) = body.chars().next().filter(|&c| is_punct(c)) {
        leading = Some(c);
        body = &body[c.len_utf8()..];
    }
    if let Some(c) = body.chars().last().filter(|&c| is_punct(c)) {
        trailing = Some(c);
        body = &body[..body.len() - c.len_utf8()];
    }
    (body == target).then_some((leading, trailing))
}

/// Finds the placeholder, tolerating case changes and one punctuation
/// character attached at either end.
pub fn locate_placeholder(tokens: &[String], ordinal: usize) -> PlaceholderMatch {
    let target = placeholder(ordinal).to_lowercase();
    let hits: Vec<(usize, Option<char>, Option<char>)> = tokens
        .iter()
        .enumerate()
        .filter_map(|(i, t)| match_token(t, &target).map(|(l, r)| (i, l, r)))
        .collect();
    match hits.as_slice() {
        [] => PlaceholderMatch::Missing,
        [(index, leading, trailing)] => PlaceholderMatch::Found {
            index: *index,
            leading: *leading,
            trailing: *trailing,
        },
        many => PlaceholderMatch::Duplicated(many.len()),
    }
}

/// A span in an original sentence and its counterpart in the translation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConjugatePair {
    pub sentence_id: usize,
    pub original_tokens: Vec<String>,
    pub original_span: SpanBounds,
    pub translated_tokens: Vec<String>,
    pub translated_span: SpanBounds,
    pub engine_id: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    PlaceholderLost,
    PlaceholderDuplicated,
    EmptySpanTranslation,
    EngineFailure,
}

impl DropReason {
    pub fn name(self) -> &'static str {
        match self {
            DropReason::PlaceholderLost => "placeholder-lost",
            DropReason::PlaceholderDuplicated => "placeholder-duplicated",
            DropReason::EmptySpanTranslation => "empty-span-translation",
            DropReason::EngineFailure => "engine-failure",
        }
    }
}

/// Candidate spans that produced no pair, by reason.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropStats {
    pub candidates: usize,
    pub emitted: usize,
    pub dropped: BTreeMap<DropReason, usize>,
    /// Sentences abandoned because the engine failed.
    pub failed_sentences: usize,
}

impl DropStats {
    pub fn total_dropped(&self) -> usize {
        self.dropped.values().sum()
    }

    pub fn count(&self, reason: DropReason) -> usize {
        self.dropped.get(&reason).copied().unwrap_or(0)
    }

    fn drop(&mut self, reason: DropReason) {
        *self.dropped.entry(reason).or_default() += 1;
    }

    pub fn merge(&mut self, other: &DropStats) {
        self.candidates += other.candidates;
        self.emitted += other.emitted;
        self.failed_sentences += other.failed_sentences;
        for (&r, &n) in &other.dropped {
            *self.dropped.entry(r).or_default() += n;
        }
    }
}

fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(String::from).collect()
}

/// Projects each candidate span independently through `engine`. Any engine
/// failure abandons the whole sentence.
pub fn build_conjugate_pairs(
    sentence_id: usize,
    tokens: &[String],
    candidates: &[SpanBounds],
    engine: &dyn TranslationEngine,
) -> std::result::Result<(Vec<ConjugatePair>, DropStats), PairError> {
    let mut pairs = Vec::new();
    let mut stats = DropStats {
        candidates: candidates.len(),
        ..DropStats::default()
    };
    let mut sorted = candidates.to_vec();
    sorted.sort();
    for w in sorted.windows(2) {
        if w[1].start <= w[0].end {
            return Err(PairError::Input(Error::invalid("candidate spans overlap")));
        }
    }
    for (ordinal, &span) in sorted.iter().enumerate() {
        let masked = mask_span(tokens, span, ordinal).map_err(PairError::Input)?;
        let translated = tokenize(&engine.translate(&masked.join(" "))?);
        let (index, leading, trailing) = match locate_placeholder(&translated, ordinal) {
            PlaceholderMatch::Found {
                index,
                leading,
                trailing,
            } => (index, leading, trailing),
            PlaceholderMatch::Missing => {
                stats.drop(DropReason::PlaceholderLost);
                continue;
            }
            PlaceholderMatch::Duplicated(_) => {
                stats.drop(DropReason::PlaceholderDuplicated);
                continue;
            }
        };
        let span_text = tokens[span.start..=span.end].join(" ");
        let span_translation = tokenize(&engine.translate(&span_text)?);
        if span_translation.is_empty() {
            stats.drop(DropReason::EmptySpanTranslation);
            continue;
        }
        let mut out = Vec::with_capacity(translated.len() + span_translation.len() + 1);
        out.extend_from_slice(&translated[..index]);
        if let Some(c) = leading {
            out.push(c.to_string());
        }
        let start = out.len();
        out.extend(span_translation);
        let end = out.len() - 1;
        if let Some(c) = trailing {
            out.push(c.to_string());
        }
        out.extend_from_slice(&translated[index + 1..]);
        pairs.push(ConjugatePair {
            sentence_id,
            original_tokens: tokens.to_vec(),
            original_span: span,
            translated_tokens: out,
            translated_span: SpanBounds::new(start, end),
            engine_id: engine.id().to_string(),
        });
        stats.emitted += 1;
    }
    Ok((pairs, stats))
}

#[derive(Debug, thiserror::Error)]
pub enum PairError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Input(Error),
}

impl From<PairError> for Error {
    fn from(e: PairError) -> Self {
        match e {
            PairError::Engine(e) => Error::Engine(e),
            PairError::Input(e) => e,
        }
    }
}

/// Boundaries of the weak tagger's predicted entities; types are discarded.
pub fn select_candidate_spans(weak_tagger: &Tagger, tokens: &[String]) -> Result<Vec<SpanBounds>> {
    if tokens.is_empty() {
        return Ok(Vec::new());
    }
    let tags = weak_tagger.predict(tokens)?;
    Ok(decode_tags(&tags, DecodeMode::Strict)?
        .into_iter()
        .map(|s| s.bounds())
        .collect())
}

/// One sentence queued for projection.
#[derive(Clone, Debug)]
pub struct PairSource {
    pub sentence_id: usize,
    pub tokens: Vec<String>,
    pub candidates: Vec<SpanBounds>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairSet {
    pub pairs: Vec<ConjugatePair>,
    pub stats: DropStats,
}

/// Projects a whole corpus. Sentences run concurrently; output is ordered by
/// sentence id, then span start. Engine failures are counted per sentence
/// and do not stop the run.
pub fn build_pair_set(
    sources: &[PairSource],
    engine: &dyn TranslationEngine,
    mode: Parallelism,
) -> Result<PairSet> {
    let results = par::map(mode, sources, |_, src| {
        build_conjugate_pairs(src.sentence_id, &src.tokens, &src.candidates, engine)
    });
    let mut set = PairSet::default();
    for (src, res) in sources.iter().zip(results) {
        match res {
            Ok((pairs, stats)) => {
                set.pairs.extend(pairs);
                set.stats.merge(&stats);
            }
            Err(PairError::Engine(_)) => {
                set.stats.candidates += src.candidates.len();
                set.stats.failed_sentences += 1;
                *set.stats.dropped.entry(DropReason::EngineFailure).or_default() += src.candidates.len();
            }
            Err(PairError::Input(e)) => return Err(e),
        }
    }
    set.pairs
        .sort_by_key(|p| (p.sentence_id, p.original_span.start));
    Ok(set)
}

/// Runs the weak tagger over every sentence to pick candidate spans.
pub fn candidate_sources(
    weak_tagger: &Tagger,
    sentences: &[Vec<String>],
    mode: Parallelism,
) -> Result<Vec<PairSource>> {
    par::map(mode, sentences, |i, tokens| {
        Ok(PairSource {
            sentence_id: i,
            tokens: tokens.clone(),
            candidates: select_candidate_spans(weak_tagger, tokens)?,
        })
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::translation::lexicon::{Direction, Lexicon, LexiconEngine, ReorderRule};

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn mask_examples() {
        let s = toks("Bruce Willis wurde in Westdeutschland geboren .");
        let m = mask_span(&s, SpanBounds::new(4, 4), 4).unwrap();
        assert_eq!(m, toks("Bruce Willis wurde in SPANX004 geboren ."));
        assert_eq!(mask_span(&s, SpanBounds::new(0, 6), 0).unwrap(), toks("SPANX000"));
        assert_eq!(mask_span(&s, SpanBounds::new(2, 4), 1).unwrap().len(), 5);
        assert!(mask_span(&s, SpanBounds::new(5, 7), 0).is_err());
    }

    #[test]
    fn locate_examples() {
        let t = toks("Bruce Willis was born in SPANX004 .");
        assert!(matches!(locate_placeholder(&t, 4), PlaceholderMatch::Found { index: 5, .. }));
        let t = toks("… spanx004,");
        assert_eq!(
            locate_placeholder(&t, 4),
            PlaceholderMatch::Found {
                index: 1,
                leading: None,
                trailing: Some(',')
            }
        );
        assert_eq!(locate_placeholder(&toks("no marker"), 4), PlaceholderMatch::Missing);
        assert_eq!(locate_placeholder(&toks("SPANX004 x SPANX004"), 4), PlaceholderMatch::Duplicated(2));
        assert_eq!(locate_placeholder(&toks("SPANX005"), 4), PlaceholderMatch::Missing);
    }

    fn german_english() -> LexiconEngine {
        let pairs = [
            ("Bruce", "Bruce"),
            ("Willis", "Willis"),
            ("wurde", "was"),
            ("in", "in"),
            ("geboren", "born"),
            (".", "."),
        ];
        let mut lex: Vec<(String, String)> = pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        lex.push(("Westdeutschland".into(), "West_German".into()));
        LexiconEngine::new(
            Arc::new(Lexicon::from_pairs(lex).unwrap()),
            Direction::Forward,
            ReorderRule::Identity,
            ("de", "en"),
        )
    }

    /// Engine for the worked example: "wurde" moves before "geboren" and the
    /// compound splits into two words.
    struct Fig2;

    impl TranslationEngine for Fig2 {
        fn id(&self) -> &str {
            "fig2"
        }
        fn languages(&self) -> (&str, &str) {
            ("de", "en")
        }
        fn translate(&self, text: &str) -> std::result::Result<String, EngineError> {
            Ok(match text {
                "Bruce Willis wurde in SPANX000 geboren ." => "Bruce Willis was born in SPANX000 .".into(),
                "Westdeutschland" => "West German".into(),
                other => other.into(),
            })
        }
    }

    #[test]
    fn worked_example_pair() {
        let s = toks("Bruce Willis wurde in Westdeutschland geboren .");
        let (pairs, stats) = build_conjugate_pairs(0, &s, &[SpanBounds::new(4, 4)], &Fig2).unwrap();
        assert_eq!(stats.emitted, 1);
        let p = &pairs[0];
        assert_eq!(p.translated_tokens, toks("Bruce Willis was born in West German ."));
        assert_eq!(p.translated_span, SpanBounds::new(5, 6));
        assert_eq!(
            p.translated_tokens[p.translated_span.start..=p.translated_span.end].join(" "),
            "West German"
        );
        assert_eq!(p.original_tokens[4], "Westdeutschland");
    }

    #[test]
    fn full_noise_drops_everything() {
        let engine = german_english().with_placeholder_noise(1.0, 3);
        let s = toks("Bruce Willis wurde in Westdeutschland geboren .");
        let spans = [SpanBounds::new(0, 1), SpanBounds::new(4, 4)];
        let (pairs, stats) = build_conjugate_pairs(0, &s, &spans, &engine).unwrap();
        assert!(pairs.is_empty());
        assert_eq!(stats.count(DropReason::PlaceholderLost), 2);
        assert_eq!(stats.emitted + stats.total_dropped(), stats.candidates);
    }

    #[test]
    fn engine_failure_abandons_sentence_only() {
        struct Flaky;
        impl TranslationEngine for Flaky {
            fn id(&self) -> &str {
                "flaky"
            }
            fn languages(&self) -> (&str, &str) {
                ("a", "b")
            }
            fn translate(&self, text: &str) -> std::result::Result<String, EngineError> {
                if text.contains("boom") {
                    Err(EngineError::Failed {
                        engine: "flaky".into(),
                        request: text.into(),
                        message: "down".into(),
                    })
                } else {
                    Ok(text.into())
                }
            }
        }
        let err = build_conjugate_pairs(0, &toks("boom x"), &[SpanBounds::new(1, 1)], &Flaky).unwrap_err();
        assert!(matches!(err, PairError::Engine(ref e) if e.request().contains("boom")));

        let sources = vec![
            PairSource {
                sentence_id: 0,
                tokens: toks("boom x"),
                candidates: vec![SpanBounds::new(1, 1)],
            },
            PairSource {
                sentence_id: 1,
                tokens: toks("fine y"),
                candidates: vec![SpanBounds::new(0, 0), SpanBounds::new(1, 1)],
            },
        ];
        let set = build_pair_set(&sources, &Flaky, Parallelism::Parallel).unwrap();
        assert_eq!(set.pairs.len(), 2);
        assert_eq!(set.stats.failed_sentences, 1);
        assert_eq!(set.stats.count(DropReason::EngineFailure), 1);
        assert_eq!(set.stats.candidates, 3);
    }

    #[test]
    fn lexicon_identity_pairs_carry_the_span_image() {
        let engine = german_english();
        let s = toks("Bruce Willis wurde in Westdeutschland geboren .");
        let (pairs, _) =
            build_conjugate_pairs(7, &s, &[SpanBounds::new(4, 4), SpanBounds::new(0, 1)], &engine).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].original_span, SpanBounds::new(0, 1));
        let p = &pairs[1];
        assert_eq!(p.translated_tokens[p.translated_span.start], "West_German");
        assert!(pairs.iter().all(|p| p.sentence_id == 7 && p.engine_id == "lexicon"));
    }
}

//! Entity-level micro-F1 and CoNLL corpus I/O.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label_space::{decode_tags, DecodeMode, EntitySpan, LabelSpace, Tag};

/// A tokenized sentence, with gold tags when labeled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaggedSentence {
    pub tokens: Vec<String>,
    pub tags: Option<Vec<Tag>>,
    pub lang: String,
}

impl TaggedSentence {
    pub fn labeled(tokens: Vec<String>, tags: Vec<Tag>, lang: &str) -> Result<Self> {
        if tokens.len() != tags.len() {
            return Err(Error::invalid("tokens and tags differ in length"));
        }
        decode_tags(&tags, DecodeMode::Strict)?;
        Ok(TaggedSentence {
            tokens,
            tags: Some(tags),
            lang: lang.to_string(),
        })
    }

    pub fn unlabeled(tokens: Vec<String>, lang: &str) -> Self {
        TaggedSentence {
            tokens,
            tags: None,
            lang: lang.to_string(),
        }
    }

    /// Gold entities; empty for unlabeled sentences.
    pub fn spans(&self) -> Vec<EntitySpan> {
        self.tags
            .as_deref()
            .map(|t| decode_tags(t, DecodeMode::Strict).expect("validated on construction"))
            .unwrap_or_default()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Counts {
    /// Precision is 0 when nothing was predicted, recall 0 when nothing was gold.
    pub fn prf(&self) -> Prf {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.correct, self.predicted);
        let recall = ratio(self.correct, self.gold);
        // 2PR/(P+R) rewritten over the counts, which rounds only once
        let f1 = ratio(2 * self.correct, self.gold + self.predicted);
        Prf {
            precision,
            recall,
            f1,
        }
    }

    fn add(&mut self, other: Counts) {
        self.gold += other.gold;
        self.predicted += other.predicted;
        self.correct += other.correct;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
    /// Keyed by entity type index.
    pub per_type: BTreeMap<usize, Counts>,
}

impl EvalResult {
    /// Structured form with type names, for reports.
    pub fn named(&self, space: &LabelSpace) -> NamedEvalResult {
        NamedEvalResult {
            precision: self.precision,
            recall: self.recall,
            f1: self.f1,
            counts: self.counts,
            per_type: self
                .per_type
                .iter()
                .map(|(&t, c)| {
                    let name = space.types().names().get(t).cloned().unwrap_or_else(|| t.to_string());
                    (name, TypeResult { counts: *c, scores: c.prf() })
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeResult {
    #[serde(flatten)]
    pub counts: Counts,
    #[serde(flatten)]
    pub scores: Prf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedEvalResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
    pub per_type: BTreeMap<String, TypeResult>,
}

/// An entity is correct iff its boundaries and type both match a gold entity.
pub fn micro_f1(gold: &[Vec<EntitySpan>], pred: &[Vec<EntitySpan>]) -> Result<EvalResult> {
    if gold.len() != pred.len() {
        return Err(Error::invalid(format!(
            "{} gold sentences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut total = Counts::default();
    let mut per_type: BTreeMap<usize, Counts> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        let g_set: HashSet<&EntitySpan> = g.iter().collect();
        let p_set: HashSet<&EntitySpan> = p.iter().collect();
        for s in &g_set {
            per_type.entry(s.type_index).or_default().gold += 1;
        }
        for s in &p_set {
            let c = per_type.entry(s.type_index).or_default();
            c.predicted += 1;
            if g_set.contains(s) {
                c.correct += 1;
            }
        }
        total.add(Counts {
            gold: g_set.len(),
            predicted: p_set.len(),
            correct: p_set.intersection(&g_set).count(),
        });
    }
    let prf = total.prf();
    Ok(EvalResult {
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        counts: total,
        per_type,
    })
}

/// Reads a CoNLL file: `token<sep>tag` per line (or just `token` when
/// `has_labels` is false), sentences separated by blank lines. The separator
/// is a single tab or a run of spaces.
pub fn read_conll(
    path: impl AsRef<Path>,
    has_labels: bool,
    space: &LabelSpace,
    lang: &str,
) -> Result<Vec<TaggedSentence>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conll(&text, has_labels, space, lang).map_err(|e| match e {
        Error::Parse { line, message, .. } => Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        },
        other => other,
    })
}

pub fn parse_conll(text: &str, has_labels: bool, space: &LabelSpace, lang: &str) -> Result<Vec<TaggedSentence>> {
    let mut sentences = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut finish = |tokens: &mut Vec<String>, tags: &mut Vec<Tag>| -> Result<()> {
        if tokens.is_empty() {
            return Ok(());
        }
        let toks = std::mem::take(tokens);
        if has_labels {
            let index = sentences.len();
            let t = std::mem::take(tags);
            decode_tags(&t, DecodeMode::Strict).map_err(|e| match e {
                Error::IllegalSequence { position, .. } => Error::IllegalSequence {
                    position,
                    sentence: Some(index),
                },
                other => other,
            })?;
            sentences.push(TaggedSentence {
                tokens: toks,
                tags: Some(t),
                lang: lang.to_string(),
            });
        } else {
            sentences.push(TaggedSentence::unlabeled(toks, lang));
        }
        Ok(())
    };
    for (n, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            finish(&mut tokens, &mut tags)?;
            continue;
        }
        let bad = |message: &str| Error::Parse {
            path: Default::default(),
            line: n + 1,
            message: message.to_string(),
        };
        let cols: Vec<&str> = if line.contains('\t') {
            line.split('\t').collect()
        } else {
            line.split(' ').filter(|c| !c.is_empty()).collect()
        };
        match (has_labels, cols.as_slice()) {
            (true, [tok, tag]) if !tok.is_empty() => {
                tokens.push(tok.to_string());
                tags.push(space.parse_tag(tag).map_err(|_| bad(&format!("unknown tag {tag:?}")))?);
            }
            (false, [tok]) if !tok.is_empty() => tokens.push(tok.to_string()),
            _ => {
                return Err(bad(if has_labels {
                    "expected `token tag`"
                } else {
                    "expected a single token"
                }))
            }
        }
    }
    finish(&mut tokens, &mut tags)?;
    Ok(sentences)
}

pub fn format_conll(sentences: &[TaggedSentence], space: &LabelSpace) -> Result<String> {
    let mut out = String::new();
    for s in sentences {
        if s.tokens.is_empty() {
            return Err(Error::invalid("cannot write an empty sentence"));
        }
        for (i, tok) in s.tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("token {tok:?} cannot be written as CoNLL")));
            }
            out.push_str(tok);
            if let Some(tags) = &s.tags {
                out.push('\t');
                out.push_str(&space.display(tags[i]).to_string());
            }
            out.push('\n');
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_conll(sentences: &[TaggedSentence], space: &LabelSpace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_conll(sentences, space)?).map_err(|e| Error::io(path, e))
}

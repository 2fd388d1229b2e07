//! Deterministic synthetic language pairs with gold entity annotations.
//!
//! Source sentences are sampled from slot templates. Each target sentence is
//! the lexicon image of an independent source "twin", reordered by the
//! language pair's reorder rule, with its entity spans carried along.

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{write_conll, TaggedSentence};
use crate::label_space::{encode_entities, EntitySpan, EntityTypeSet, LabelSpace};
use crate::translation::{Direction, Lexicon, LexiconEngine, ReorderRule};

/// One template slot, written in the template mini-language as:
/// `w<k>` plain word `k`, `*` a random filler word, `.` sentence end,
/// `TYPE:min-max` an entity of `min..=max` name tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Slot {
    Word(usize),
    Filler,
    Stop,
    Entity {
        type_index: usize,
        min_len: usize,
        max_len: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticLanguageSpec {
    pub entity_types: EntityTypeSet,
    pub names_per_type: usize,
    pub plain_words: usize,
    /// Plain words below this index are reserved for template cue words;
    /// fillers are drawn from the rest.
    pub cue_words: usize,
    pub templates: Vec<String>,
    pub lexicon_seed: u64,
    pub reorder: ReorderRule,
    /// Fraction of words whose target form equals the source form.
    pub overlap: f64,
    pub source_lang: String,
    pub target_lang: String,
}

pub const STOP_SOURCE: &str = ".";
pub const STOP_TARGET: &str = "。";

impl Default for SyntheticLanguageSpec {
    /// Four entity types, 60 names per type, 60 plain words, 12 templates.
    fn default() -> Self {
        let templates = [
            "PER:2-2 w0 w1 LOC:1-2 .",
            "w2 PER:1-2 w3 ORG:1-3 * .",
            "ORG:1-3 w4 * w5 LOC:1-1 .",
            "w6 MISC:1-2 w7 * PER:1-2 .",
            "LOC:1-2 w8 w9 * .",
            "* w10 ORG:1-2 w11 PER:2-2 w12 .",
            "PER:1-1 w13 MISC:1-3 w14 * .",
            "w15 * w16 LOC:1-3 w17 ORG:1-2 .",
            "MISC:1-2 w18 * w19 .",
            "w20 PER:2-3 w21 * w22 LOC:1-1 .",
            "ORG:1-2 w23 MISC:1-1 w24 * * .",
            "* * w25 w26 PER:1-2 w27 .",
        ];
        SyntheticLanguageSpec {
            entity_types: EntityTypeSet::conll(),
            names_per_type: 60,
            plain_words: 60,
            cue_words: 28,
            templates: templates.iter().map(|s| s.to_string()).collect(),
            lexicon_seed: 2022,
            reorder: ReorderRule::Reverse,
            overlap: 0.0,
            source_lang: "src".into(),
            target_lang: "tgt".into(),
        }
    }
}

impl SyntheticLanguageSpec {
    pub fn parse_templates(&self) -> Result<Vec<Vec<Slot>>> {
        let bad = |t: &str, why: &str| Error::InvalidSpec(format!("template {t:?}: {why}"));
        let mut out = Vec::with_capacity(self.templates.len());
        for t in &self.templates {
            let mut slots = Vec::new();
            for item in t.split_whitespace() {
                let slot = if item == "*" {
                    Slot::Filler
                } else if item == "." {
                    Slot::Stop
                } else if let Some(k) = item.strip_prefix('w').and_then(|k| k.parse().ok()) {
                    if k >= self.cue_words {
                        return Err(bad(t, &format!("cue word {k} is not below cue_words")));
                    }
                    Slot::Word(k)
                } else if let Some((ty, range)) = item.split_once(':') {
                    let type_index = self
                        .entity_types
                        .index_of(ty)
                        .ok_or_else(|| bad(t, &format!("unknown entity type {ty}")))?;
                    let (lo, hi) = range
                        .split_once('-')
                        .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
                        .ok_or_else(|| bad(t, &format!("bad length range {range:?}")))?;
                    if lo == 0 || lo > hi {
                        return Err(bad(t, "entity length range must satisfy 1 <= min <= max"));
                    }
                    Slot::Entity {
                        type_index,
                        min_len: lo,
                        max_len: hi,
                    }
                } else {
                    return Err(bad(t, &format!("unknown slot {item:?}")));
                };
                slots.push(slot);
            }
            if slots.is_empty() {
                return Err(bad(t, "empty template"));
            }
            for w in slots.windows(2) {
                if matches!(w, [Slot::Entity { .. }, Slot::Entity { .. }]) {
                    return Err(bad(t, "adjacent entity slots make boundaries ambiguous"));
                }
            }
            out.push(slots);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(Error::InvalidSpec("no templates".into()));
        }
        if self.names_per_type == 0 {
            return Err(Error::InvalidSpec("names_per_type must be positive".into()));
        }
        if self.cue_words > self.plain_words {
            return Err(Error::InvalidSpec("cue_words exceeds plain_words".into()));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::InvalidSpec("overlap must be in [0, 1]".into()));
        }
        let templates = self.parse_templates()?;
        let uses_filler = templates.iter().flatten().any(|s| *s == Slot::Filler);
        if uses_filler && self.cue_words == self.plain_words {
            return Err(Error::InvalidSpec("templates use fillers but no filler words exist".into()));
        }
        Ok(())
    }
}

/// Word forms for both languages. Source and target syllables use disjoint
/// consonant sets, so forms only coincide when shared on purpose.
#[derive(Clone, Debug)]
struct WordTables {
    /// `names[type][k]` as (source, target)
    names: Vec<Vec<(String, String)>>,
    plain: Vec<(String, String)>,
}

fn make_word(rng: &mut ChaCha8Rng, consonants: &[u8], vowels: &[u8], capital: bool) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(*consonants.choose(rng).expect("non-empty") as char);
        w.push(*vowels.choose(rng).expect("non-empty") as char);
    }
    if capital {
        w[..1].make_ascii_uppercase();
    }
    w
}

fn word_tables(spec: &SyntheticLanguageSpec) -> WordTables {
    const SRC_C: &[u8] = b"bdgkmnpt";
    const SRC_V: &[u8] = b"aeiou";
    const TGT_C: &[u8] = b"fhjlrsvz";
    const TGT_V: &[u8] = b"aeiouy";
    let mut rng = ChaCha8Rng::seed_from_u64(spec.lexicon_seed);
    let mut seen = HashSet::new();
    let mut fresh = |rng: &mut ChaCha8Rng, c: &[u8], v: &[u8], cap: bool| loop {
        let w = make_word(rng, c, v, cap);
        if seen.insert(w.clone()) {
            return w;
        }
    };
    let mut pair = |rng: &mut ChaCha8Rng, cap: bool| {
        let src = fresh(rng, SRC_C, SRC_V, cap);
        let tgt = if rng.gen::<f64>() < spec.overlap {
            src.clone()
        } else {
            fresh(rng, TGT_C, TGT_V, cap)
        };
        (src, tgt)
    };
    let names = (0..spec.entity_types.len())
        .map(|_| (0..spec.names_per_type).map(|_| pair(&mut rng, true)).collect())
        .collect();
    let plain = (0..spec.plain_words).map(|_| pair(&mut rng, false)).collect();
    WordTables { names, plain }
}

fn build_lexicon(tables: &WordTables) -> Result<Lexicon> {
    let mut entries: Vec<(String, String)> = tables.names.iter().flatten().cloned().collect();
    entries.extend(tables.plain.iter().cloned());
    entries.push((STOP_SOURCE.to_string(), STOP_TARGET.to_string()));
    Lexicon::from_pairs(entries)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub source_train: usize,
    pub source_dev: usize,
    pub target_train: usize,
    pub target_test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            source_train: 2000,
            source_dev: 500,
            target_train: 2000,
            target_test: 500,
        }
    }
}

/// All splits of one generated language pair.
#[derive(Clone, Debug)]
pub struct CorpusBundle {
    pub spec: SyntheticLanguageSpec,
    pub sizes: SplitSizes,
    pub seed: u64,
    pub space: LabelSpace,
    pub source_train: Vec<TaggedSentence>,
    pub source_dev: Vec<TaggedSentence>,
    /// Target training text with labels removed.
    pub target_train: Vec<TaggedSentence>,
    /// Labels of `target_train`, never used for training.
    pub target_train_gold: Vec<TaggedSentence>,
    /// Source sentences that `target_train` was translated from.
    pub target_train_twins: Vec<TaggedSentence>,
    pub target_test: Vec<TaggedSentence>,
    pub lexicon: Arc<Lexicon>,
}

impl CorpusBundle {
    /// Lexicon engine translating source to target.
    pub fn forward_engine(&self) -> LexiconEngine {
        LexiconEngine::new(
            self.lexicon.clone(),
            Direction::Forward,
            self.spec.reorder,
            (&self.spec.source_lang, &self.spec.target_lang),
        )
    }

    /// Lexicon engine translating target back to source.
    pub fn backward_engine(&self) -> LexiconEngine {
        LexiconEngine::new(
            self.lexicon.clone(),
            Direction::Backward,
            self.spec.reorder,
            (&self.spec.target_lang, &self.spec.source_lang),
        )
    }
}

fn sample_source(
    rng: &mut ChaCha8Rng,
    templates: &[Vec<Slot>],
    tables: &WordTables,
    cue_words: usize,
) -> (Vec<String>, Vec<EntitySpan>) {
    let template = templates.choose(rng).expect("validated non-empty");
    let mut tokens = Vec::new();
    let mut spans = Vec::new();
    for slot in template {
        match *slot {
            Slot::Word(k) => tokens.push(tables.plain[k].0.clone()),
            Slot::Filler => {
                let k = rng.gen_range(cue_words..tables.plain.len());
                tokens.push(tables.plain[k].0.clone());
            }
            Slot::Stop => tokens.push(STOP_SOURCE.to_string()),
            Slot::Entity {
                type_index,
                min_len,
                max_len,
            } => {
                let len = rng.gen_range(min_len..=max_len);
                let start = tokens.len();
                for _ in 0..len {
                    let names = &tables.names[type_index];
                    tokens.push(names[rng.gen_range(0..names.len())].0.clone());
                }
                spans.push(EntitySpan::new(start, tokens.len() - 1, type_index));
            }
        }
    }
    (tokens, spans)
}

/// Carries entity spans through a token alignment (`alignment[i]` is the
/// output position of input token `i`).
pub fn project_spans(spans: &[EntitySpan], alignment: &[usize]) -> Vec<EntitySpan> {
    let mut out: Vec<EntitySpan> = spans
        .iter()
        .map(|s| {
            let pos = alignment[s.start..=s.end].iter();
            let lo = *pos.clone().min().expect("non-empty span");
            let hi = *pos.max().expect("non-empty span");
            EntitySpan::new(lo, hi, s.type_index)
        })
        .collect();
    out.sort();
    out
}

fn labeled(tokens: Vec<String>, spans: &[EntitySpan], lang: &str) -> TaggedSentence {
    let tags = encode_entities(tokens.len(), spans).expect("generated spans are well-formed");
    TaggedSentence::labeled(tokens, tags, lang).expect("generated tags are legal")
}

pub fn generate_bundle(spec: &SyntheticLanguageSpec, sizes: SplitSizes, seed: u64) -> Result<CorpusBundle> {
    spec.validate()?;
    for (name, n) in [
        ("source_train", sizes.source_train),
        ("source_dev", sizes.source_dev),
        ("target_train", sizes.target_train),
        ("target_test", sizes.target_test),
    ] {
        if n == 0 {
            return Err(Error::InvalidSpec(format!("split {name} must have at least one sentence")));
        }
    }
    let templates = spec.parse_templates()?;
    let tables = word_tables(spec);
    let lexicon = Arc::new(build_lexicon(&tables)?);
    let space = LabelSpace::new(spec.entity_types.clone());
    let engine = LexiconEngine::new(
        lexicon.clone(),
        Direction::Forward,
        spec.reorder,
        (&spec.source_lang, &spec.target_lang),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source_split = |n: usize, rng: &mut ChaCha8Rng| -> Vec<(Vec<String>, Vec<EntitySpan>)> {
        (0..n).map(|_| sample_source(rng, &templates, &tables, spec.cue_words)).collect()
    };
    let src = &spec.source_lang;
    let tgt = &spec.target_lang;
    let source_train: Vec<_> = source_split(sizes.source_train, &mut rng)
        .into_iter()
        .map(|(t, s)| labeled(t, &s, src))
        .collect();
    let source_dev: Vec<_> = source_split(sizes.source_dev, &mut rng)
        .into_iter()
        .map(|(t, s)| labeled(t, &s, src))
        .collect();

    let translate_split = |n: usize, rng: &mut ChaCha8Rng| {
        let mut twins = Vec::with_capacity(n);
        let mut gold = Vec::with_capacity(n);
        for (tokens, spans) in source_split(n, rng) {
            let entry = engine.translate_tokens(&tokens);
            gold.push(labeled(entry.output, &project_spans(&spans, &entry.alignment), tgt));
            twins.push(labeled(tokens, &spans, src));
        }
        (twins, gold)
    };
    let (target_train_twins, target_train_gold) = translate_split(sizes.target_train, &mut rng);
    let (_, target_test) = translate_split(sizes.target_test, &mut rng);
    let target_train = target_train_gold
        .iter()
        .map(|s| TaggedSentence::unlabeled(s.tokens.clone(), tgt))
        .collect();

    Ok(CorpusBundle {
        spec: spec.clone(),
        sizes,
        seed,
        space,
        source_train,
        source_dev,
        target_train,
        target_train_gold,
        target_train_twins,
        target_test,
        lexicon,
    })
}

pub const SOURCE_TRAIN_FILE: &str = "source_train.conll";
pub const SOURCE_DEV_FILE: &str = "source_dev.conll";
pub const TARGET_TRAIN_FILE: &str = "target_train.conll";
pub const TARGET_TRAIN_GOLD_FILE: &str = "target_train.gold.conll";
pub const TARGET_TEST_FILE: &str = "target_test.conll";
pub const LEXICON_FILE: &str = "lexicon.tsv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of what was generated, written next to the corpus files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub spec: SyntheticLanguageSpec,
    pub sizes: SplitSizes,
    pub entity_counts: Vec<(String, [usize; 4])>,
    pub lexicon_entries: usize,
    pub files: Vec<String>,
}

impl CorpusBundle {
    pub fn manifest(&self) -> Manifest {
        let mut counts = vec![[0usize; 4]; self.space.num_types()];
        let splits = [
            &self.source_train,
            &self.source_dev,
            &self.target_train_gold,
            &self.target_test,
        ];
        for (k, split) in splits.iter().enumerate() {
            for s in split.iter() {
                for e in s.spans() {
                    counts[e.type_index][k] += 1;
                }
            }
        }
        Manifest {
            seed: self.seed,
            spec: self.spec.clone(),
            sizes: self.sizes,
            entity_counts: self
                .space
                .types()
                .names()
                .iter()
                .cloned()
                .zip(counts)
                .collect(),
            lexicon_entries: self.lexicon.len(),
            files: [
                SOURCE_TRAIN_FILE,
                SOURCE_DEV_FILE,
                TARGET_TRAIN_FILE,
                TARGET_TRAIN_GOLD_FILE,
                TARGET_TEST_FILE,
                LEXICON_FILE,
            ]
            .map(String::from)
            .to_vec(),
        }
    }

    /// Writes every split as CoNLL, the lexicon TSV and the manifest.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_conll(&self.source_train, &self.space, dir.join(SOURCE_TRAIN_FILE))?;
        write_conll(&self.source_dev, &self.space, dir.join(SOURCE_DEV_FILE))?;
        write_conll(&self.target_train, &self.space, dir.join(TARGET_TRAIN_FILE))?;
        write_conll(&self.target_train_gold, &self.space, dir.join(TARGET_TRAIN_GOLD_FILE))?;
        write_conll(&self.target_test, &self.space, dir.join(TARGET_TEST_FILE))?;
        self.lexicon.write_tsv(
            dir.join(LEXICON_FILE),
            &format!("{}\t{}", self.spec.source_lang, self.spec.target_lang),
        )?;
        let manifest = serde_json::to_string_pretty(&self.manifest()).map_err(|e| Error::json("manifest", e))?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, manifest + "\n").map_err(|e| Error::io(&path, e))
    }
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

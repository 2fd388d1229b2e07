//! Word-for-word translation between two synthetic languages.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::engine::{EngineError, TranslationEngine};
use super::pipeline::{is_placeholder, PLACEHOLDER_PREFIX};
use crate::error::{Error, Result};

/// Bijective source-to-target word table.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: Vec<(String, String)>,
    forward: HashMap<String, usize>,
    backward: HashMap<String, usize>,
}

impl Lexicon {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut lex = Lexicon::default();
        for (src, tgt) in pairs {
            for w in [&src, &tgt] {
                if w.is_empty() || w.chars().any(char::is_whitespace) {
                    return Err(Error::invalid(format!("lexicon word {w:?} is empty or has whitespace")));
                }
            }
            if lex.forward.contains_key(&src) || lex.backward.contains_key(&tgt) {
                return Err(Error::invalid(format!(
                    "lexicon is not bijective at {src:?} -> {tgt:?}"
                )));
            }
            let i = lex.entries.len();
            lex.forward.insert(src.clone(), i);
            lex.backward.insert(tgt.clone(), i);
            lex.entries.push((src, tgt));
        }
        Ok(lex)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn lookup(&self, word: &str, direction: Direction) -> Option<&str> {
        match direction {
            Direction::Forward => self.forward.get(word).map(|&i| self.entries[i].1.as_str()),
            Direction::Backward => self.backward.get(word).map(|&i| self.entries[i].0.as_str()),
        }
    }

    /// Tab-separated `source<TAB>target`, one pair per line; `#` starts a comment line.
    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            match (cols.next(), cols.next(), cols.next()) {
                (Some(s), Some(t), None) => pairs.push((s.to_string(), t.to_string())),
                _ => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: n + 1,
                        message: "expected two tab-separated columns".into(),
                    })
                }
            }
        }
        Self::from_pairs(pairs).map_err(|e| match e {
            Error::InvalidInput(message) => Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message,
            },
            other => other,
        })
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>, comment: &str) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for line in comment.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        for (s, t) in &self.entries {
            out.push_str(s);
            out.push('\t');
            out.push_str(t);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Left column to right column.
    #[default]
    Forward,
    Backward,
}

/// Word-order rule applied after word substitution. Every rule is its own
/// inverse and commutes with collapsing a contiguous span to one token, so
/// placeholder translation and whole-sentence translation agree.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReorderRule {
    Identity,
    #[default]
    Reverse,
}

impl ReorderRule {
    /// `order[k]` is the input position emitted at output position `k`.
    pub fn order(self, len: usize) -> Vec<usize> {
        match self {
            ReorderRule::Identity => (0..len).collect(),
            ReorderRule::Reverse => (0..len).rev().collect(),
        }
    }
}

impl std::str::FromStr for ReorderRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(ReorderRule::Identity),
            "reverse" => Ok(ReorderRule::Reverse),
            _ => Err(Error::invalid(format!("unknown reorder rule {s:?}"))),
        }
    }
}

/// Ground truth for one translate call: `alignment[i]` is the output
/// position of input token `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerEntry {
    pub output: Vec<String>,
    pub alignment: Vec<usize>,
}

/// Deterministic mock MT: lexicon substitution plus a reorder rule.
/// Placeholders pass through, except that with probability `rho` each one is
/// split in two (a common tokenizer failure), which makes it unrecoverable.
#[derive(Debug)]
pub struct LexiconEngine {
    id: String,
    languages: (String, String),
    lexicon: Arc<Lexicon>,
    direction: Direction,
    reorder: ReorderRule,
    rho: f64,
    noise_seed: u64,
    ledger: Mutex<HashMap<String, LedgerEntry>>,
}

impl LexiconEngine {
    pub fn new(
        lexicon: Arc<Lexicon>,
        direction: Direction,
        reorder: ReorderRule,
        languages: (&str, &str),
    ) -> Self {
        LexiconEngine {
            id: "lexicon".to_string(),
            languages: (languages.0.to_string(), languages.1.to_string()),
            lexicon,
            direction,
            reorder,
            rho: 0.0,
            noise_seed: 0,
            ledger: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_placeholder_noise(mut self, rho: f64, seed: u64) -> Self {
        self.rho = rho.clamp(0.0, 1.0);
        self.noise_seed = seed;
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    /// Translation of a token list, with its alignment.
    pub fn translate_tokens(&self, tokens: &[String]) -> LedgerEntry {
        let words: Vec<&str> = tokens
            .iter()
            .map(|t| {
                if is_placeholder(t) {
                    t.as_str()
                } else {
                    self.lexicon.lookup(t, self.direction).unwrap_or(t)
                }
            })
            .collect();
        let order = self.reorder.order(words.len());
        let mut alignment = vec![0; words.len()];
        for (k, &i) in order.iter().enumerate() {
            alignment[i] = k;
        }
        let output = order.iter().map(|&i| words[i].to_string()).collect();
        LedgerEntry { output, alignment }
    }

    /// Alignment recorded for a previous `translate(text)` call.
    pub fn ledger_entry(&self, text: &str) -> Option<LedgerEntry> {
        self.ledger.lock().expect("ledger poisoned").get(text).cloned()
    }

    pub fn ledger_len(&self) -> usize {
        self.ledger.lock().expect("ledger poisoned").len()
    }

    fn corrupt(&self, text: &str, position: usize) -> bool {
        if self.rho <= 0.0 {
            return false;
        }
        if self.rho >= 1.0 {
            return true;
        }
        let mut h = Sha256::new();
        h.update(self.noise_seed.to_le_bytes());
        h.update((position as u64).to_le_bytes());
        h.update(text.as_bytes());
        let digest = h.finalize();
        let bits = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        ((bits >> 11) as f64 / (1u64 << 53) as f64) < self.rho
    }
}

impl TranslationEngine for LexiconEngine {
    fn id(&self) -> &str {
        &self.id
    }

    fn languages(&self) -> (&str, &str) {
        (&self.languages.0, &self.languages.1)
    }

    fn translate(&self, text: &str) -> Result<String, EngineError> {
        let tokens: Vec<String> = text.split_whitespace().map(String::from).collect();
        let entry = self.translate_tokens(&tokens);
        let mut out = Vec::with_capacity(entry.output.len());
        for (k, tok) in entry.output.iter().enumerate() {
            if is_placeholder(tok) && self.corrupt(text, k) {
                out.push(PLACEHOLDER_PREFIX[..4].to_string());
                out.push(tok[4..].to_string());
            } else {
                out.push(tok.clone());
            }
        }
        self.ledger
            .lock()
            .expect("ledger poisoned")
            .insert(text.to_string(), entry);
        Ok(out.join(" "))
    }
}

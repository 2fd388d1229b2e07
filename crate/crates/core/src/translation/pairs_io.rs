//! Conjugate-pair files: one JSON record per line, plus a `.stats.json`
//! sidecar holding the drop counts of the run that produced them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pipeline::{ConjugatePair, DropStats};
use crate::error::{Error, Result};
use crate::label_space::SpanBounds;

pub const PAIR_FILE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairRecord {
    version: u32,
    sentence_id: usize,
    original_tokens: Vec<String>,
    original_span: SpanBounds,
    translated_tokens: Vec<String>,
    translated_span: SpanBounds,
    engine_id: String,
}

fn stats_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".stats.json");
    PathBuf::from(s)
}

pub fn write_pair_file(path: impl AsRef<Path>, pairs: &[ConjugatePair], stats: &DropStats) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for p in pairs {
        let rec = PairRecord {
            version: PAIR_FILE_VERSION,
            sentence_id: p.sentence_id,
            original_tokens: p.original_tokens.clone(),
            original_span: p.original_span,
            translated_tokens: p.translated_tokens.clone(),
            translated_span: p.translated_span,
            engine_id: p.engine_id.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).map_err(|e| Error::json("pair record", e))?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    let sp = stats_path(path);
    let stats = serde_json::to_string_pretty(stats).map_err(|e| Error::json("drop stats", e))?;
    fs::write(&sp, stats + "\n").map_err(|e| Error::io(&sp, e))
}

pub fn read_pair_file(path: impl AsRef<Path>) -> Result<Vec<ConjugatePair>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let rec: PairRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if rec.version != PAIR_FILE_VERSION {
            return Err(bad(format!("unsupported pair record version {}", rec.version)));
        }
        let in_bounds = |s: SpanBounds, n: usize| s.start <= s.end && s.end < n;
        if !in_bounds(rec.original_span, rec.original_tokens.len())
            || !in_bounds(rec.translated_span, rec.translated_tokens.len())
        {
            return Err(bad("span out of bounds".into()));
        }
        pairs.push(ConjugatePair {
            sentence_id: rec.sentence_id,
            original_tokens: rec.original_tokens,
            original_span: rec.original_span,
            translated_tokens: rec.translated_tokens,
            translated_span: rec.translated_span,
            engine_id: rec.engine_id,
        });
    }
    Ok(pairs)
}

/// Drop counts written next to a pair file, if present.
pub fn read_pair_stats(path: impl AsRef<Path>) -> Result<Option<DropStats>> {
    let sp = stats_path(path.as_ref());
    if !sp.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Error::json(sp.display().to_string(), e))
}

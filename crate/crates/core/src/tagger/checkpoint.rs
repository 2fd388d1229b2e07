use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Tagger, TaggerConfig, TaggerParameters, Vocabulary};
use crate::error::{Error, Result};
use crate::label_space::{EntityTypeSet, LabelSpace};

pub const CHECKPOINT_FORMAT: &str = "conner-tagger";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: TaggerConfig,
    entity_types: EntityTypeSet,
    vocab: Vocabulary,
    params: TaggerParameters,
}

pub fn save_checkpoint(tagger: &Tagger, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        config: tagger.config.clone(),
        entity_types: tagger.space.types().clone(),
        vocab: tagger.vocab.clone(),
        params: tagger.params.clone(),
    };
    let text = serde_json::to_string(&file).map_err(|e| Error::json("checkpoint", e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Tagger> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
        return Err(Error::invalid(format!(
            "{}: unsupported checkpoint {} v{}",
            path.display(),
            file.format,
            file.version
        )));
    }
    file.config.validate()?;
    let space = LabelSpace::new(file.entity_types);
    let cfg = &file.config;
    let p = &file.params;
    let t = space.size();
    let expected = [
        (p.embeddings.len(), cfg.vocab_size * cfg.d_emb),
        (p.hidden_w.len(), cfg.d_hid * cfg.input_dim()),
        (p.hidden_b.len(), cfg.d_hid),
        (p.emit_w.len(), t * cfg.d_hid),
        (p.emit_b.len(), t),
        (p.transitions.len(), (t + 2) * (t + 2)),
        (file.vocab.len(), cfg.vocab_size),
        (p.num_tags, t),
    ];
    if expected.iter().any(|(a, b)| a != b) {
        return Err(Error::invalid(format!(
            "{}: weight shapes do not match the stored config",
            path.display()
        )));
    }
    if !p.is_finite() {
        return Err(Error::invalid(format!("{}: non-finite weights", path.display())));
    }
    Ok(Tagger::from_parts(file.config, space, file.vocab, file.params))
}

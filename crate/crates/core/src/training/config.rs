use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob_algebra::Divergence;
use crate::tagger::TaggerConfig;

/// Which loss terms a run optimizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// CE + α·drop on labeled source + β·trans on target pairs.
    #[default]
    Conner,
    Vanilla,
    TransUnlabel,
    DropoutLabel,
    /// β·trans on pairs built from labeled source sentences.
    TransLabel,
    /// α·drop on unlabeled target sentences.
    DropoutUnlabel,
}

impl RunMode {
    pub const ALL: [RunMode; 6] = [
        RunMode::Conner,
        RunMode::Vanilla,
        RunMode::TransUnlabel,
        RunMode::DropoutLabel,
        RunMode::TransLabel,
        RunMode::DropoutUnlabel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RunMode::Conner => "conner",
            RunMode::Vanilla => "vanilla",
            RunMode::TransUnlabel => "trans-unlabel",
            RunMode::DropoutLabel => "dropout-label",
            RunMode::TransLabel => "trans-label",
            RunMode::DropoutUnlabel => "dropout-unlabel",
        }
    }

    pub fn drop_on_labeled(self) -> bool {
        matches!(self, RunMode::Conner | RunMode::DropoutLabel)
    }

    pub fn drop_on_unlabeled(self) -> bool {
        self == RunMode::DropoutUnlabel
    }

    pub fn uses_target_pairs(self) -> bool {
        matches!(self, RunMode::Conner | RunMode::TransUnlabel)
    }

    pub fn uses_label_pairs(self) -> bool {
        self == RunMode::TransLabel
    }
}

impl std::str::FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RunMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown run mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub alpha: f64,
    pub beta: f64,
    pub divergence: Divergence,
    pub mode: RunMode,
    pub labeled_batch_size: usize,
    pub unlabeled_batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub dropout: f64,
    pub weight_decay: f64,
    pub d_emb: usize,
    pub d_hid: usize,
    pub window: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            alpha: 0.5,
            beta: 0.5,
            divergence: Divergence::BiKl,
            mode: RunMode::Conner,
            labeled_batch_size: 16,
            unlabeled_batch_size: 16,
            epochs: 10,
            lr: 0.05,
            seed: 0,
            patience: 10,
            dropout: 0.1,
            weight_decay: 0.01,
            d_emb: 32,
            d_hid: 64,
            window: 1,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("weight_decay", self.weight_decay)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.labeled_batch_size == 0 || self.unlabeled_batch_size == 0 {
            return bad("batch sizes must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        self.tagger_config().validate()
    }

    pub fn tagger_config(&self) -> TaggerConfig {
        TaggerConfig {
            vocab_size: 1,
            d_emb: self.d_emb,
            window: self.window,
            d_hid: self.d_hid,
            dropout: self.dropout,
            seed: self.seed,
        }
    }

    /// Weight of the dropout term, zero when the mode does not use it.
    pub fn drop_weight(&self) -> f64 {
        if self.mode.drop_on_labeled() || self.mode.drop_on_unlabeled() {
            self.alpha
        } else {
            0.0
        }
    }

    pub fn trans_weight(&self) -> f64 {
        if self.mode.uses_target_pairs() || self.mode.uses_label_pairs() {
            self.beta
        } else {
            0.0
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("run config", e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

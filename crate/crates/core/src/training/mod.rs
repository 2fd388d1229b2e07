//! The combined objective (cross-entropy, dropout consistency, translation
//! consistency), its ablation modes, and the training loop.

mod config;
mod losses;
mod run;

pub use config::{RunMode, TrainingConfig};
pub use losses::{
    combine_losses, cross_entropy_into, derive_seed, dropout_consistency_loss,
    dropout_consistency_with_masks, total_loss_step, translation_consistency_into,
    translation_consistency_loss, LabeledExample, PairExample, StepOutput,
};
pub use run::{
    evaluate, train_run, train_run_with, DataCounts, EarlyStopping, EpochRecord, TrainOutcome, TrainingData,
    TrainingReport, Verdict,
};

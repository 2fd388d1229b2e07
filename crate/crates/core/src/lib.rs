//! Cross-lingual sequence tagging with translation-based span consistency
//! and dropout-based token consistency, on a small from-scratch CRF tagger.

pub mod cli;
pub mod error;
pub mod evaluation;
pub mod label_space;
pub mod par;
pub mod prob_algebra;
pub mod synth;
pub mod tagger;
pub mod training;
pub mod translation;

pub use error::{Error, Result};

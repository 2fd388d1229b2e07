//! Placeholder-based translation of candidate spans into conjugate pairs.

mod cache;
mod engine;
mod external;
mod lexicon;
mod pairs_io;
mod pipeline;

pub use cache::{text_key, CachedEngine, TranslationCache};
pub use engine::{EngineError, TranslationEngine};
pub use external::{ExternalEngine, EXTERNAL_URL_ENV};
pub use lexicon::{Direction, LedgerEntry, Lexicon, LexiconEngine, ReorderRule};
pub use pairs_io::{read_pair_file, read_pair_stats, write_pair_file, PAIR_FILE_VERSION};
pub use pipeline::{
    build_conjugate_pairs, build_pair_set, candidate_sources, is_placeholder, locate_placeholder,
    mask_span, placeholder, select_candidate_spans, ConjugatePair, DropReason, DropStats, PairError,
    PairSet, PairSource, PlaceholderMatch, PLACEHOLDER_PREFIX,
};

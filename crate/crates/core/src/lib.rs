//! Crafting and ranking accidental-trigger candidates for voice-assistant wake
//! words with a weighted phone-level Levenshtein distance, plus analysis of
//! smart-speaker measurement logs.
//!
//! Modules, bottom-up:
//!
//! * [`lexicon`]: phone inventory, CMU-style pronouncing dictionary, wake words.
//! * [`distance`]: the weighted edit distance and its alignment breakdown.
//! * [`weights`]: phone-dependent weight tables built from probe scores.
//! * [`candidates`]: vocabularies, blocklists, top-K ranking, synthesis manifests.
//! * [`tuning`]: rank-based grid search, trigger filter, cross-validation.
//! * [`harness`]: verification windows, reproducibility bins, kappa, summaries.
//! * [`workbench`]: configuration and the pipelines behind the CLI.

pub mod candidates;
pub mod distance;
pub mod harness;
pub mod lexicon;
pub mod tuning;
pub mod weights;
pub mod workbench;

pub use candidates::{
    build_blocklist, export_manifest, extract_ngrams, rank_candidates, Candidate, CandidateSource, RankedList,
    SynthesisManifest, VoiceConfig,
};
pub use distance::{align, distance_to_wakeword, CostModel, DistanceBreakdown, EditOp, ScaleFactors, Variant};
pub use lexicon::{parse_phone, Inventory, Phone, PhoneSeq, PronouncingDictionary, Pronunciation, WakeWordSpec};
pub use tuning::{Grid, LabeledTrigger, TieRank, TuningContext, TuningResult};
pub use weights::{build_weight_table, WeightTable};

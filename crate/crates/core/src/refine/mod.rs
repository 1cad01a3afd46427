//! Loop refinement: perceptual hashing of loop spectrograms, duplicate
//! removal, absorption of mixture components, layout normalization and positive pair derivation.

mod dedup;
mod hash;
mod pairs;
mod redundancy;

pub use dedup::{dedup_loops, refine_layout, DedupCandidate, DedupOutcome, DUPLICATE_DISTANCE};
pub use hash::{average_hash, bilinear_resize, SpectrogramHash};
pub use pairs::{derive_pairs, Label, LoopPair, Strategy, ACTIVE_THRESHOLD};
pub use redundancy::{absorb_redundant, Absorption, REDUNDANT_RESIDUAL};

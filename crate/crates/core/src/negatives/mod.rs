//! Negative pair generation: two strategies draw loops from different songs,
//! three manipulate one loop of a positive pair.

mod detector;
mod manipulate;
mod sampler;

pub use detector::{is_pure_drum_or_bass, DrumBassDetector, EnergyProfile, HeuristicDetector, LabelDetector};
pub use manipulate::{
    apply_permutation, non_identity_permutations, permutation_for_seed, rearrange_loop, reverse_loop, shift_for_seed,
    shift_loop, BEATS_PER_LOOP, BEAT_SAMPLES,
};
pub use sampler::{
    build_negative_set, manipulated_id, sample_random, sample_selected, stratified_counts, LoopRef, ManipulatedLoop,
    Manipulation, NegativeSet, SamplingConfig, StrategyChoice,
};

//! Bar-synchronous loop extraction: tempo grid, song tensor, factorization
//! and rendering of loop audio.

mod grid;
mod ntf;
mod render;
mod tensor;

pub use grid::{build_bar_grid, onset_envelope, BarGrid, MAX_BPM, MIN_BPM};
pub use ntf::{
    default_rank, kl_divergence, ntf_factorize, relative_error, LoopLayout, NtfModel,
    DEFAULT_ITERATIONS,
};
pub use render::{best_instance, extract_loop_audio, reconstruct_loop_spectrogram, soft_masks, MASK_FLOOR};
pub use tensor::{bar_mel, grid_position, resample_rows, tensorize, SongTensor, FRAMES_PER_BAR, MIN_BARS};

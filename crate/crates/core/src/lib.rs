//! Loop compatibility toolkit.

pub mod audio;
pub mod error;
pub mod eval;
pub mod extract;
pub mod mashability;
pub mod mining;
pub mod negatives;
pub mod neural;
pub mod refine;
pub mod store;
pub mod synth;

pub use error::{Error, Result};

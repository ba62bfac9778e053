//! Pyramid optical-flow operators at desk scale.
//!
//! The crate compares sampling and warping cost volumes, implements loss
//! max-pooling, the cross-level gradient that gradient stopping removes,
//! hand-crafted flow cues and the pseudo-ground-truth filter chain, plus
//! the metrics and training-dynamics statistics used to check them.

pub mod cost_volume;
pub mod cues;
pub mod diagnostics;
pub mod distill;
pub mod error;
pub mod gradcheck;
pub mod grid;
pub mod io;
pub mod losses;
pub mod toy;

pub use error::{Error, Result};
pub use grid::{FlowField, Image};

/// Configures the global rayon pool from `PYRAFLOW_THREADS` (unset or 0
/// means one thread per core). Returns the thread count in effect.
pub fn init_threads() -> usize {
    let n = std::env::var("PYRAFLOW_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()).unwrap_or(0);
    // a second call finds the pool already built, which is fine
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    rayon::current_num_threads()
}

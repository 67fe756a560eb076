//! Joint occlusion inference and multimodal trajectory prediction on
//! partially observable bird's-eye-view traffic scenes.
//!
//! The crate is organized bottom-up:
//!
//! - [`scene`]: vectorized scene representation, ego frame, cropping and featurization
//! - [`geometry`]: line-of-sight occlusion, shadow polygons, observability regimes and anchors
//! - [`synth`]: synthetic scene generator and the line-delimited scene file format
//! - [`numerics`]: tensors, reverse-mode autodiff, attention layers, AdamW, checkpoints
//! - [`informer`]: the encoder/decoder network with occupancy, mode and trajectory heads
//! - [`train`]: loss, training loop, metrics, baselines and the observability sweep

// `!(x > 0.0)` rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod numerics;
pub mod geometry;
pub mod informer;
pub mod scene;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

/// Version string embedded in every output file.
pub const TOOL_VERSION: &str = concat!("scene-informer ", env!("CARGO_PKG_VERSION"));

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "SCENE_INFORMER_THREADS";

/// Runs `f` on a worker pool sized by [`THREADS_ENV`] (default: all cores).
/// Results of parallel stages never depend on the pool size.
pub fn with_workers<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    let threads = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0);
    match threads.and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

//! Spatial data mining with fuzzy topological relations.
//!
//! Geographic features are rasterized onto a tiled grid, turned into fuzzy
//! membership fields, and related to each other through fuzzy region
//! connection calculus (overlap) and exact vector distances. The resulting
//! attributes feed an evolutionary program learner that produces one boolean
//! classification program per class.

pub mod config;
pub mod eval;
pub mod ingest;
pub mod learner;
pub mod pipeline;
pub mod raster;
pub mod preprocess;
pub mod rcc;
pub mod synth;

/// Runs `f` on a dedicated rayon pool with `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool construction")
        .install(f)
}

//! Multi-view supervised hashing for image retrieval.
//!
//! Images are described in four feature views (RGB and HSV histograms, LBP
//! texture, HOG). A classifier per view measures how stable its scores stay
//! under noise; the resulting relation vector weights the pairwise hashing
//! loss and steers how per-view codes are fused into the final binary code.

mod binio;
pub mod error;
pub mod features;
pub mod fusion;
pub mod hashcore;
pub mod ingest;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod retrieval;
pub mod rng;
pub mod synth;
pub mod viewrel;

pub use error::{Error, Result};
pub use model::{Model, RelationSource};

//! Whole-slide image retrieval from fixed-size attentive mosaics.
//!
//! A slide enters as a matrix of patch embeddings and is compressed into a
//! fixed set of M mosaic vectors by attention pooling, plus one unit-norm
//! semantic vector aligned with report text by contrastive training. Search
//! runs on the compressed forms only: binarized mosaics are compared with a
//! median-of-minimum Hamming distance, semantic vectors with Euclidean
//! distance, and the two families are fused after per-family z-scoring.
//! Query cost is therefore constant in the patch count of the archive.
//!
//! Module map:
//!
//! - [`core`]: shared types, bit-packed codes, Hamming distance, vector math
//! - [`encoder`]: attentive mosaic encoder, text embedding, embedding file I/O
//! - [`training`]: contrastive + diversity losses, exact gradients, AdamW loop,
//!   synthetic datasets
//! - [`index`]: on-disk index, fused image search, cross-modal queries
//! - [`eval`]: retrieval accuracy, inter-rater agreement, paired significance
//! - [`bench`]: cost models and scaling measurements against a
//!   fractional-sampling baseline
//! - [`cli`]: command-line front end

pub mod bench;
pub mod cli;
pub mod core;
pub mod encoder;
pub mod eval;
pub mod index;
pub mod training;

mod error;

pub use error::{Error, Result};

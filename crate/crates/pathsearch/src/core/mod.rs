//! Shared primitives: dense embedding matrices, bit-packed mosaic codes,
//! Hamming distance, and unit-vector math.
//!
//! Everything downstream (encoder, index, eval, bench) builds on these types.
//! Distances and norms are computed in f64 regardless of on-disk precision.

mod bits;
mod matrix;
mod record;
mod vector;

pub use bits::{binarize, hamming_distance, BinaryMosaicCode, CodeView};
pub use matrix::{MosaicSet, PatchEmbeddingMatrix};
pub use record::{RetrievalResult, SlideRecord};
pub use vector::{euclidean_distance, l2_normalize, SemanticVector};

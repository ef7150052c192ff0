//! Index records and query results.

use super::bits::BinaryMosaicCode;
use super::vector::SemanticVector;

/// One indexed slide: compressed mosaic code plus semantic vector(s).
/// `label` is a category id resolved through the index label table;
/// `text_semantic` is present only when report text was indexed.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideRecord {
    pub id: String,
    pub label: Option<u16>,
    pub mosaic: BinaryMosaicCode,
    pub semantic: SemanticVector,
    pub text_semantic: Option<SemanticVector>,
}

/// One ranked hit from a fused image query. Distances are the raw
/// per-family values; `fused_distance` is computed on the normalized scale.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub candidate_id: String,
    pub fused_distance: f64,
    pub mosaic_distance: f64,
    pub semantic_distance: f64,
    /// 1-based position in the ranking.
    pub rank: usize,
}

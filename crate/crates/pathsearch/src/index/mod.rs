//! Retrieval index and the fused query path.
//!
//! An image query runs two distance families over the candidate records:
//!
//! 1. **Mosaic stage** — the query's binarized mosaic codes against each
//!    candidate's codes under MedianMinHamming: for every query code take
//!    the minimum Hamming distance to any candidate code, then take the
//!    median over query codes (even M averages the middle pair).
//! 2. **Semantic stage** — Euclidean distance between unit slide vectors.
//!
//! Each family is then z-scored over the candidate set (population σ, an ε
//! in the denominator) and fused as `D = z_mosaic + β·z_semantic`; ascending
//! fused distance wins. Normalization defaults on because raw Hamming
//! (integer, scale ~bits) and Euclidean (≤ 2) are incommensurable. Ties
//! break by raw semantic distance, then lexical id, so rankings never
//! depend on record order. A query that carries its own index id is
//! excluded from its candidate set (leave-one-out convention).
//!
//! Cross-modal lookups (text→image, image→text, text→text) rank by the
//! semantic family alone against the stored image or report vectors.

mod psix;

pub use psix::{load_index, save_index};

use std::collections::HashMap;

use crate::core::{
    euclidean_distance, hamming_distance, BinaryMosaicCode, RetrievalResult, SemanticVector,
    SlideRecord,
};
use crate::{Error, Result};

/// Record label id meaning "unlabeled" on disk.
pub(crate) const LABEL_NONE: u16 = u16::MAX;

/// How mosaic and semantic distances combine into one ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    /// Weight of the semantic family (β).
    pub beta: f64,
    /// Z-score each family over the candidates before fusing.
    pub normalize: bool,
    /// Added to σ in the z-score denominator.
    pub epsilon: f64,
    pub top_k: usize,
    /// Restrict the semantic stage and fusion to the n mosaic-nearest
    /// candidates. Off by default: the reference query path fuses over the
    /// full candidate set.
    pub mosaic_shortlist: Option<usize>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            beta: 1.0,
            normalize: true,
            epsilon: 1e-8,
            top_k: 5,
            mosaic_shortlist: None,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::InvalidValue {
                key: "beta".into(),
                message: format!("{} is not a valid fusion weight", self.beta),
            });
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::InvalidValue {
                key: "epsilon".into(),
                message: "must be finite and non-negative".into(),
            });
        }
        if self.top_k == 0 {
            return Err(Error::InvalidValue {
                key: "top_k".into(),
                message: "must be at least 1".into(),
            });
        }
        if self.mosaic_shortlist == Some(0) {
            return Err(Error::InvalidValue {
                key: "mosaic_shortlist".into(),
                message: "must be at least 1 when set".into(),
            });
        }
        Ok(())
    }
}

/// A query's slide-level representation. `id` enables leave-one-out
/// self-exclusion when the query is itself an index record.
#[derive(Debug, Clone)]
pub struct QuerySlide {
    pub id: Option<String>,
    pub mosaic: BinaryMosaicCode,
    pub semantic: SemanticVector,
}

/// Distance-evaluation counters, incremented by the `_counted` query paths.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct OpCounters {
    /// Single-pair Hamming distance evaluations.
    pub mosaic: u64,
    /// Semantic multiply-accumulates (dim per vector comparison).
    pub semantic: u64,
}

/// An immutable-after-build collection of slide records sharing one mosaic
/// geometry (m codes of dim bits) and one semantic dimensionality.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    m: usize,
    dim: usize,
    float_width: u8,
    label_names: Vec<String>,
    records: Vec<SlideRecord>,
    by_id: HashMap<String, usize>,
}

impl RetrievalIndex {
    pub fn new(m: usize, dim: usize) -> Result<Self> {
        Self::with_float_width(m, dim, 8)
    }

    /// `float_width` is the on-disk bytes per semantic component (8 = f64,
    /// 4 = f32, quantizing on save).
    pub fn with_float_width(m: usize, dim: usize, float_width: u8) -> Result<Self> {
        if m == 0 || dim == 0 {
            return Err(Error::InvalidValue {
                key: "index geometry".into(),
                message: format!("m={m}, dim={dim} must both be at least 1"),
            });
        }
        if float_width != 4 && float_width != 8 {
            return Err(Error::InvalidValue {
                key: "float_width".into(),
                message: format!("{float_width} is not 4 or 8"),
            });
        }
        Ok(RetrievalIndex {
            m,
            dim,
            float_width,
            label_names: Vec::new(),
            records: Vec::new(),
            by_id: HashMap::new(),
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn float_width(&self) -> u8 {
        self.float_width
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[SlideRecord] {
        &self.records
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn label_name(&self, id: u16) -> Option<&str> {
        self.label_names.get(id as usize).map(String::as_str)
    }

    /// Register a label name, returning its id; existing names are reused.
    pub fn add_label(&mut self, name: &str) -> Result<u16> {
        if let Some(pos) = self.label_names.iter().position(|n| n == name) {
            return Ok(pos as u16);
        }
        if self.label_names.len() >= LABEL_NONE as usize {
            return Err(Error::InvalidValue {
                key: "label table".into(),
                message: "label table is full".into(),
            });
        }
        self.label_names.push(name.to_string());
        Ok((self.label_names.len() - 1) as u16)
    }

    pub fn get(&self, id: &str) -> Option<&SlideRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    /// Append one record; ids are unique and every dimension must match the
    /// index geometry.
    pub fn push(&mut self, record: SlideRecord) -> Result<()> {
        if record.id.is_empty() {
            return Err(Error::InvalidValue {
                key: "record id".into(),
                message: "must be non-empty".into(),
            });
        }
        if self.by_id.contains_key(&record.id) {
            return Err(Error::InvalidValue {
                key: "record id".into(),
                message: format!("duplicate id {:?}", record.id),
            });
        }
        if record.mosaic.m() != self.m {
            return Err(Error::DimensionMismatch {
                context: "record mosaic count",
                expected: self.m,
                got: record.mosaic.m(),
            });
        }
        if record.mosaic.bits() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "record mosaic bits",
                expected: self.dim,
                got: record.mosaic.bits(),
            });
        }
        if record.semantic.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "record semantic dim",
                expected: self.dim,
                got: record.semantic.dim(),
            });
        }
        if let Some(t) = &record.text_semantic {
            if t.dim() != self.dim {
                return Err(Error::DimensionMismatch {
                    context: "record text dim",
                    expected: self.dim,
                    got: t.dim(),
                });
            }
        }
        if let Some(label) = record.label {
            if label as usize >= self.label_names.len() {
                return Err(Error::InvalidValue {
                    key: "record label".into(),
                    message: format!("label id {label} has no table entry"),
                });
            }
        }
        self.by_id.insert(record.id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }
}

/// Slide-level mosaic distance: for each query code the minimum Hamming
/// distance to any candidate code, then the median over query codes (even
/// counts average the middle pair). Deliberately asymmetric: minima are
/// taken over the candidate's codes only.
pub fn median_min_hamming(q: &BinaryMosaicCode, c: &BinaryMosaicCode) -> Result<f64> {
    let mut ops = 0u64;
    median_min_hamming_counted(q, c, &mut ops)
}

/// [`median_min_hamming`] that also counts Hamming evaluations.
pub fn median_min_hamming_counted(
    q: &BinaryMosaicCode,
    c: &BinaryMosaicCode,
    ops: &mut u64,
) -> Result<f64> {
    if q.m() != c.m() {
        return Err(Error::DimensionMismatch {
            context: "mosaic counts",
            expected: q.m(),
            got: c.m(),
        });
    }
    if q.bits() != c.bits() {
        return Err(Error::BitLengthMismatch {
            a: q.bits(),
            b: c.bits(),
        });
    }
    let mut minima = Vec::with_capacity(q.m());
    for i in 0..q.m() {
        let qi = q.code(i);
        let mut best = u32::MAX;
        for j in 0..c.m() {
            let d = hamming_distance(qi, c.code(j))?;
            *ops += 1;
            best = best.min(d);
        }
        minima.push(best);
    }
    minima.sort_unstable();
    let l = minima.len();
    Ok(if l % 2 == 1 {
        minima[l / 2] as f64
    } else {
        (minima[l / 2 - 1] as f64 + minima[l / 2] as f64) / 2.0
    })
}

/// `(x - μ) / (σ_pop + ε)` over the whole list. A constant list (σ = 0)
/// maps to zeros even when ε = 0.
pub fn zscore(values: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Empty("zscore input"));
    }
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    let denom = var.sqrt() + epsilon;
    if denom == 0.0 {
        return Ok(vec![0.0; values.len()]);
    }
    Ok(values.iter().map(|x| (x - mu) / denom).collect())
}

/// Fused image-to-image query. See the module docs for the exact pipeline.
pub fn query_image(
    index: &RetrievalIndex,
    query: &QuerySlide,
    cfg: &FusionConfig,
) -> Result<Vec<RetrievalResult>> {
    let mut ops = OpCounters::default();
    query_image_counted(index, query, cfg, &mut ops)
}

/// [`query_image`] with distance-evaluation counters (used by the
/// complexity benchmark; the counters instrument this real code path).
pub fn query_image_counted(
    index: &RetrievalIndex,
    query: &QuerySlide,
    cfg: &FusionConfig,
    ops: &mut OpCounters,
) -> Result<Vec<RetrievalResult>> {
    cfg.validate()?;
    if index.is_empty() {
        return Err(Error::Empty("index"));
    }
    if query.mosaic.m() != index.m {
        return Err(Error::DimensionMismatch {
            context: "query mosaic count",
            expected: index.m,
            got: query.mosaic.m(),
        });
    }
    if query.mosaic.bits() != index.dim || query.semantic.dim() != index.dim {
        return Err(Error::DimensionMismatch {
            context: "query dim",
            expected: index.dim,
            got: query.semantic.dim(),
        });
    }

    // Mosaic stage over every candidate.
    let mut cand: Vec<(usize, f64)> = Vec::with_capacity(index.len());
    for (i, rec) in index.records.iter().enumerate() {
        if query.id.as_deref() == Some(rec.id.as_str()) {
            continue;
        }
        let dm = median_min_hamming_counted(&query.mosaic, &rec.mosaic, &mut ops.mosaic)?;
        cand.push((i, dm));
    }
    if cand.is_empty() {
        return Err(Error::Empty("candidate set after self-exclusion"));
    }

    // Optional mosaic-distance prune before the semantic stage.
    if let Some(keep) = cfg.mosaic_shortlist {
        if keep < cand.len() {
            cand.sort_by(|a, b| {
                a.1.total_cmp(&b.1)
                    .then_with(|| index.records[a.0].id.cmp(&index.records[b.0].id))
            });
            cand.truncate(keep);
        }
    }

    // Semantic stage on the surviving candidates.
    let mut sem = Vec::with_capacity(cand.len());
    for &(i, _) in &cand {
        sem.push(euclidean_distance(&query.semantic, &index.records[i].semantic)?);
        ops.semantic += index.dim as u64;
    }

    let mosaic_family: Vec<f64> = cand.iter().map(|&(_, d)| d).collect();
    let fused: Vec<f64> = if cfg.normalize {
        let zm = zscore(&mosaic_family, cfg.epsilon)?;
        let zs = zscore(&sem, cfg.epsilon)?;
        zm.iter()
            .zip(&zs)
            .map(|(m, s)| m + cfg.beta * s)
            .collect()
    } else {
        mosaic_family
            .iter()
            .zip(&sem)
            .map(|(m, s)| m + cfg.beta * s)
            .collect()
    };

    let mut order: Vec<usize> = (0..cand.len()).collect();
    order.sort_by(|&a, &b| {
        fused[a]
            .total_cmp(&fused[b])
            .then_with(|| sem[a].total_cmp(&sem[b]))
            .then_with(|| index.records[cand[a].0].id.cmp(&index.records[cand[b].0].id))
    });

    let k = if cfg.top_k > order.len() {
        log::warn!(
            "top_k {} exceeds the {} available candidates; truncating",
            cfg.top_k,
            order.len()
        );
        order.len()
    } else {
        cfg.top_k
    };
    Ok(order[..k]
        .iter()
        .enumerate()
        .map(|(rank0, &j)| RetrievalResult {
            candidate_id: index.records[cand[j].0].id.clone(),
            fused_distance: fused[j],
            mosaic_distance: mosaic_family[j],
            semantic_distance: sem[j],
            rank: rank0 + 1,
        })
        .collect())
}

/// One ranked hit from a single-family (semantic-only) query.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticHit {
    pub candidate_id: String,
    pub distance: f64,
    /// 1-based position in the ranking.
    pub rank: usize,
}

enum SemanticSide {
    Image,
    Text,
}

fn rank_by_semantic(
    index: &RetrievalIndex,
    probe: &SemanticVector,
    side: SemanticSide,
    top_k: usize,
    exclude_id: Option<&str>,
) -> Result<Vec<SemanticHit>> {
    if top_k == 0 {
        return Err(Error::InvalidValue {
            key: "top_k".into(),
            message: "must be at least 1".into(),
        });
    }
    if index.is_empty() {
        return Err(Error::Empty("index"));
    }
    if probe.dim() != index.dim {
        return Err(Error::DimensionMismatch {
            context: "query dim",
            expected: index.dim,
            got: probe.dim(),
        });
    }
    let mut hits: Vec<(f64, &str)> = Vec::new();
    for rec in &index.records {
        if exclude_id == Some(rec.id.as_str()) {
            continue;
        }
        let target = match side {
            SemanticSide::Image => Some(&rec.semantic),
            SemanticSide::Text => rec.text_semantic.as_ref(),
        };
        let Some(target) = target else { continue };
        hits.push((euclidean_distance(probe, target)?, rec.id.as_str()));
    }
    if hits.is_empty() {
        return Err(match side {
            SemanticSide::Image => Error::Empty("candidate set after self-exclusion"),
            SemanticSide::Text => Error::Empty("records with text embeddings"),
        });
    }
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    if top_k > hits.len() {
        log::warn!(
            "top_k {top_k} exceeds the {} available candidates; truncating",
            hits.len()
        );
    }
    Ok(hits
        .into_iter()
        .take(top_k)
        .enumerate()
        .map(|(rank0, (distance, id))| SemanticHit {
            candidate_id: id.to_string(),
            distance,
            rank: rank0 + 1,
        })
        .collect())
}

/// Rank index records by image-semantic distance to a text embedding.
pub fn query_text_to_image(
    index: &RetrievalIndex,
    text: &SemanticVector,
    top_k: usize,
    exclude_id: Option<&str>,
) -> Result<Vec<SemanticHit>> {
    rank_by_semantic(index, text, SemanticSide::Image, top_k, exclude_id)
}

/// Rank records carrying report embeddings by distance to an image vector.
/// Records without text are skipped; an index with none is an error.
pub fn query_image_to_text(
    index: &RetrievalIndex,
    image: &SemanticVector,
    top_k: usize,
    exclude_id: Option<&str>,
) -> Result<Vec<SemanticHit>> {
    rank_by_semantic(index, image, SemanticSide::Text, top_k, exclude_id)
}

/// Rank records carrying report embeddings by distance to a text embedding.
pub fn query_text_to_text(
    index: &RetrievalIndex,
    text: &SemanticVector,
    top_k: usize,
    exclude_id: Option<&str>,
) -> Result<Vec<SemanticHit>> {
    rank_by_semantic(index, text, SemanticSide::Text, top_k, exclude_id)
}

/// Bytes per record for the packed mosaic block: `m * ceil(dim/8)`.
pub fn mosaic_block_bytes(m: usize, dim: usize) -> usize {
    m * dim.div_ceil(8)
}

/// Bytes per record for one semantic vector block.
pub fn semantic_block_bytes(dim: usize, float_width: u8) -> usize {
    dim * float_width as usize
}

/// Bytes a fractional-sampling baseline stores per slide: `floor(f*p)`
/// patch codes of `ceil(dim/8)` bytes each.
pub fn baseline_mosaic_store_bytes(p: usize, f: f64, dim: usize) -> usize {
    (f * p as f64).floor() as usize * dim.div_ceil(8)
}

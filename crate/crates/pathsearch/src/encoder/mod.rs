//! Attentive mosaic encoder.
//!
//! A slide's patch matrix is first passed through one self-attention layer so
//! every patch embedding carries slide context ("correlation"), then M gated
//! attention branches each pool the correlated patches into one mosaic
//! vector. A further gated attention pool over the mosaic rows, an optional
//! square projection, and L2 normalization produce the slide-level semantic
//! vector. All attention weights are strictly positive and sum to one, so
//! pooled outputs are convex combinations of their inputs and the encoder is
//! invariant to patch order.
//!
//! Row convention: data matrices hold one item per row and transform by
//! right-multiplication (`x · Wq`); gated branches use `rows · V1^T` so the
//! stored `V1`/`V2` have shape D x C.

mod model_io;
mod pemb;
mod text;

pub use model_io::{load_model, save_model};
pub use pemb::{read_patch_csv, read_patch_file, read_pemb, write_pemb};
pub use text::{HashTextEmbedder, TextEmbedder};

use ndarray::{Array1, Array2};
use rand::distributions::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::core::{l2_normalize, MosaicSet, PatchEmbeddingMatrix, SemanticVector};
use crate::{Error, Result};

/// One gated attention head: logit(h) = w . (tanh(V1 h) * sigmoid(V2 h)).
#[derive(Debug, Clone, PartialEq)]
pub struct GatedAttentionParams {
    /// D x C, tanh path.
    pub v1: Array2<f64>,
    /// D x C, sigmoid gate path.
    pub v2: Array2<f64>,
    /// D, logit projection.
    pub w: Array1<f64>,
}

impl GatedAttentionParams {
    pub fn hidden_dim(&self) -> usize {
        self.v1.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.v1.ncols()
    }

    fn validate(&self, dim: usize, hidden: usize) -> Result<()> {
        for (mat, context) in [
            (&self.v1, "gated attention V1"),
            (&self.v2, "gated attention V2"),
        ] {
            if mat.dim() != (hidden, dim) {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: hidden * dim,
                    got: mat.len(),
                });
            }
        }
        if self.w.len() != hidden {
            return Err(Error::DimensionMismatch {
                context: "gated attention w",
                expected: hidden,
                got: self.w.len(),
            });
        }
        Ok(())
    }
}

/// Single-head scaled dot-product self-attention, C x C projections.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationParams {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Add the input back onto the attention output.
    pub residual: bool,
}

/// Full encoder: correlation layer, M mosaic branches, aggregator head,
/// optional square projections on the image and text sides, and the
/// learnable similarity temperature (stored as a logit).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub correlation: CorrelationParams,
    pub branches: Vec<GatedAttentionParams>,
    pub aggregator: GatedAttentionParams,
    /// Applied to the aggregated vector before normalization; `None` = identity.
    pub projection: Option<Array2<f64>>,
    /// Applied to raw text embeddings before normalization; `None` = identity.
    pub text_projection: Option<Array2<f64>>,
    pub temperature_logit: f64,
}

/// Initial temperature 1/0.07, stored as a logit so positivity is free.
pub const INIT_TEMPERATURE_LOGIT: f64 = 2.6592600369327783; // ln(1/0.07)

impl EncoderModel {
    /// Seeded uniform init in [-1/sqrt(C), 1/sqrt(C)] for every weight
    /// matrix, projections included. Deterministic for a given seed.
    pub fn seeded(m: usize, dim: usize, hidden: usize, seed: u64) -> Self {
        assert!(m >= 1 && dim >= 1 && hidden >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let mut mat = |r: usize, c: usize| {
            Array2::from_shape_fn((r, c), |_| rng.sample(dist))
        };
        let correlation = CorrelationParams {
            q: mat(dim, dim),
            k: mat(dim, dim),
            v: mat(dim, dim),
            residual: true,
        };
        let head = |rng: &mut ChaCha8Rng| GatedAttentionParams {
            v1: Array2::from_shape_fn((hidden, dim), |_| rng.sample(dist)),
            v2: Array2::from_shape_fn((hidden, dim), |_| rng.sample(dist)),
            w: Array1::from_shape_fn(hidden, |_| rng.sample(dist)),
        };
        let branches = (0..m).map(|_| head(&mut rng)).collect();
        let aggregator = head(&mut rng);
        let projection = Array2::from_shape_fn((dim, dim), |_| rng.sample(dist));
        let text_projection = Array2::from_shape_fn((dim, dim), |_| rng.sample(dist));
        EncoderModel {
            correlation,
            branches,
            aggregator,
            projection: Some(projection),
            text_projection: Some(text_projection),
            temperature_logit: INIT_TEMPERATURE_LOGIT,
        }
    }

    pub fn dim(&self) -> usize {
        self.correlation.q.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.aggregator.hidden_dim()
    }

    pub fn m(&self) -> usize {
        self.branches.len()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature_logit.exp()
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        let hidden = self.hidden();
        if self.branches.is_empty() {
            return Err(Error::Empty("encoder branches"));
        }
        for (mat, context) in [
            (&self.correlation.q, "correlation Q"),
            (&self.correlation.k, "correlation K"),
            (&self.correlation.v, "correlation V"),
        ] {
            if mat.dim() != (dim, dim) {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: dim * dim,
                    got: mat.len(),
                });
            }
        }
        for b in &self.branches {
            b.validate(dim, hidden)?;
        }
        self.aggregator.validate(dim, hidden)?;
        for p in [&self.projection, &self.text_projection].into_iter().flatten() {
            if p.dim() != (dim, dim) {
                return Err(Error::DimensionMismatch {
                    context: "projection",
                    expected: dim * dim,
                    got: p.len(),
                });
            }
        }
        if !self.temperature_logit.is_finite() {
            return Err(Error::NonFinite {
                context: "temperature_logit".into(),
            });
        }
        Ok(())
    }

    /// Total number of scalar parameters.
    pub fn flat_len(&self) -> usize {
        let dim = self.dim();
        let hidden = self.hidden();
        let head = 2 * hidden * dim + hidden;
        3 * dim * dim
            + (self.m() + 1) * head
            + self.projection.as_ref().map_or(0, |p| p.len())
            + self.text_projection.as_ref().map_or(0, |p| p.len())
            + 1
    }

    /// Flatten every trainable tensor in a fixed order (correlation Q/K/V,
    /// branches, aggregator, projections, temperature logit last).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for mat in [&self.correlation.q, &self.correlation.k, &self.correlation.v] {
            out.extend(mat.iter());
        }
        for head in self.branches.iter().chain(std::iter::once(&self.aggregator)) {
            out.extend(head.v1.iter());
            out.extend(head.v2.iter());
            out.extend(head.w.iter());
        }
        for p in [&self.projection, &self.text_projection].into_iter().flatten() {
            out.extend(p.iter());
        }
        out.push(self.temperature_logit);
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat).
    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.flat_len() {
            return Err(Error::DimensionMismatch {
                context: "flat parameter vector",
                expected: self.flat_len(),
                got: flat.len(),
            });
        }
        let mut pos = 0;
        let mut take = |dst: &mut [f64], src: &[f64]| {
            dst.copy_from_slice(&src[pos..pos + dst.len()]);
            pos += dst.len();
        };
        for mat in [
            &mut self.correlation.q,
            &mut self.correlation.k,
            &mut self.correlation.v,
        ] {
            take(mat.as_slice_mut().unwrap(), flat);
        }
        for head in self
            .branches
            .iter_mut()
            .chain(std::iter::once(&mut self.aggregator))
        {
            take(head.v1.as_slice_mut().unwrap(), flat);
            take(head.v2.as_slice_mut().unwrap(), flat);
            take(head.w.as_slice_mut().unwrap(), flat);
        }
        for p in [&mut self.projection, &mut self.text_projection]
            .into_iter()
            .flatten()
        {
            take(p.as_slice_mut().unwrap(), flat);
        }
        self.temperature_logit = flat[pos];
        Ok(())
    }

    /// Weight decay applies to every tensor except the temperature logit.
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut mask = vec![true; self.flat_len()];
        *mask.last_mut().unwrap() = false;
        mask
    }
}

/// Softmax along each row, max-shifted for stability.
fn softmax_rows_inplace(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
}

fn softmax_inplace(v: &mut Array1<f64>) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Intermediates of one correlation pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct AttnCache {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Row-stochastic attention matrix.
    pub attn: Array2<f64>,
}

pub(crate) fn correlate_cached(
    x: &Array2<f64>,
    p: &CorrelationParams,
) -> Result<(Array2<f64>, AttnCache)> {
    let dim = p.q.nrows();
    if x.ncols() != dim {
        return Err(Error::DimensionMismatch {
            context: "correlate input columns",
            expected: dim,
            got: x.ncols(),
        });
    }
    let q = x.dot(&p.q);
    let k = x.dot(&p.k);
    let v = x.dot(&p.v);
    let scale = 1.0 / (dim as f64).sqrt();
    let mut attn = q.dot(&k.t());
    attn.mapv_inplace(|s| s * scale);
    softmax_rows_inplace(&mut attn);
    let mut y = attn.dot(&v);
    if p.residual {
        y += x;
    }
    Ok((y, AttnCache { q, k, v, attn }))
}

/// Intermediates of one gated attention pool, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct PoolCache {
    /// tanh(rows V1^T), N x D.
    pub t: Array2<f64>,
    /// sigmoid(rows V2^T), N x D.
    pub u: Array2<f64>,
    /// Attention weights, length N.
    pub a: Array1<f64>,
}

pub(crate) fn pool_cached(
    rows: &Array2<f64>,
    p: &GatedAttentionParams,
) -> Result<(Array1<f64>, PoolCache)> {
    if rows.ncols() != p.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "pool input columns",
            expected: p.input_dim(),
            got: rows.ncols(),
        });
    }
    if rows.nrows() == 0 {
        return Err(Error::Empty("pool input rows"));
    }
    let t = rows.dot(&p.v1.t()).mapv(f64::tanh);
    let u = rows.dot(&p.v2.t()).mapv(|x| 1.0 / (1.0 + (-x).exp()));
    let z = &t * &u;
    let mut a = z.dot(&p.w);
    softmax_inplace(&mut a);
    let pooled = rows.t().dot(&a);
    Ok((pooled, PoolCache { t, u, a }))
}

/// Full forward pass for one slide, with every intermediate needed by the
/// training backward pass.
#[derive(Debug, Clone)]
pub(crate) struct SlideCache {
    pub corr: AttnCache,
    /// Correlated patch rows, N x C.
    pub y: Array2<f64>,
    pub branch: Vec<PoolCache>,
    /// Mosaic rows, M x C.
    pub mosaics: Array2<f64>,
    pub agg: PoolCache,
    /// Aggregator output, length C.
    pub g: Array1<f64>,
    /// Post-projection, pre-normalization vector.
    pub u: Array1<f64>,
    /// Unit-norm image embedding.
    pub e: Array1<f64>,
}

pub(crate) fn encode_slide_cached(x: &Array2<f64>, model: &EncoderModel) -> Result<SlideCache> {
    let (y, corr) = correlate_cached(x, &model.correlation)?;
    let m = model.m();
    let dim = model.dim();
    let mut mosaics = Array2::zeros((m, dim));
    let mut branch = Vec::with_capacity(m);
    for (i, params) in model.branches.iter().enumerate() {
        let (pooled, cache) = pool_cached(&y, params)?;
        mosaics.row_mut(i).assign(&pooled);
        branch.push(cache);
    }
    let (g, agg) = pool_cached(&mosaics, &model.aggregator)?;
    let u = match &model.projection {
        Some(p) => g.dot(p),
        None => g.clone(),
    };
    let norm = u.dot(&u).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Degenerate(format!(
            "aggregated vector norm {norm} cannot be normalized"
        )));
    }
    let e = u.mapv(|v| v / norm);
    Ok(SlideCache {
        corr,
        y,
        branch,
        mosaics,
        agg,
        g,
        u,
        e,
    })
}

/// Contextualize patch embeddings with one self-attention pass.
pub fn correlate(
    patches: &PatchEmbeddingMatrix,
    model: &EncoderModel,
) -> Result<PatchEmbeddingMatrix> {
    let (y, _) = correlate_cached(patches.rows(), &model.correlation)?;
    PatchEmbeddingMatrix::new(y)
}

/// Pool rows into one vector with a gated attention head; also returns the
/// attention weights (positive, summing to one).
pub fn gated_attention_pool(
    rows: &Array2<f64>,
    params: &GatedAttentionParams,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let (pooled, cache) = pool_cached(rows, params)?;
    Ok((pooled, cache.a))
}

/// Run the correlation layer once and pool it through all M branches.
pub fn generate_mosaics(
    patches: &PatchEmbeddingMatrix,
    model: &EncoderModel,
) -> Result<MosaicSet> {
    let (y, _) = correlate_cached(patches.rows(), &model.correlation)?;
    let mut mosaics = Array2::zeros((model.m(), model.dim()));
    for (i, params) in model.branches.iter().enumerate() {
        let (pooled, _) = pool_cached(&y, params)?;
        mosaics.row_mut(i).assign(&pooled);
    }
    MosaicSet::new(mosaics)
}

/// Collapse a mosaic set into the slide-level unit semantic vector.
pub fn aggregate(mosaics: &MosaicSet, model: &EncoderModel) -> Result<SemanticVector> {
    let (g, _) = pool_cached(mosaics.rows(), &model.aggregator)?;
    let u = match &model.projection {
        Some(p) => g.dot(p),
        None => g,
    };
    l2_normalize(u.view())
}

/// Encode one slide end to end, sharing a single correlation pass.
pub fn encode_slide(
    patches: &PatchEmbeddingMatrix,
    model: &EncoderModel,
) -> Result<(MosaicSet, SemanticVector)> {
    let cache = encode_slide_cached(patches.rows(), model)?;
    let mosaics = MosaicSet::new(cache.mosaics)?;
    let semantic = SemanticVector::new(cache.e)?;
    Ok((mosaics, semantic))
}

/// Map a raw text embedding through the model's text projection and
/// normalize it onto the shared unit sphere.
pub fn text_semantic(raw: &[f64], model: &EncoderModel) -> Result<SemanticVector> {
    if raw.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "raw text embedding",
            expected: model.dim(),
            got: raw.len(),
        });
    }
    let raw = Array1::from_vec(raw.to_vec());
    let w = match &model.text_projection {
        Some(p) => raw.dot(p),
        None => raw,
    };
    l2_normalize(w.view())
}

/// Embed report text with a deterministic embedder and normalize.
pub fn embed_text(report: &str, embedder: &dyn TextEmbedder) -> Result<SemanticVector> {
    if report.split_whitespace().next().is_none() {
        return Err(Error::Degenerate("empty report text".into()));
    }
    let raw = embedder.embed(report);
    l2_normalize(ndarray::ArrayView1::from(&raw))
}

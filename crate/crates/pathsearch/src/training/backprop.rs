//! Exact reverse-mode gradients for the encoder and the composite loss,
//! derived layer by layer and checked against central finite differences
//! (see the gradient tests).

use ndarray::{Array1, Array2, ArrayView1, Axis};

use super::{info_nce_from_similarities, Batch, LossBreakdown, LossOptions};
use crate::encoder::{
    encode_slide_cached, AttnCache, CorrelationParams, EncoderModel, GatedAttentionParams,
    PoolCache, SlideCache,
};
use crate::{Error, Result};

/// Gradient accumulator for one gated attention head.
#[derive(Debug, Clone)]
pub struct GatedAttentionGrads {
    pub v1: Array2<f64>,
    pub v2: Array2<f64>,
    pub w: Array1<f64>,
}

impl GatedAttentionGrads {
    fn zeros_like(p: &GatedAttentionParams) -> Self {
        GatedAttentionGrads {
            v1: Array2::zeros(p.v1.dim()),
            v2: Array2::zeros(p.v2.dim()),
            w: Array1::zeros(p.w.len()),
        }
    }
}

/// Gradients for every trainable tensor, in the model's layout.
#[derive(Debug, Clone)]
pub struct ModelGradients {
    pub correlation_q: Array2<f64>,
    pub correlation_k: Array2<f64>,
    pub correlation_v: Array2<f64>,
    pub branches: Vec<GatedAttentionGrads>,
    pub aggregator: GatedAttentionGrads,
    pub projection: Option<Array2<f64>>,
    pub text_projection: Option<Array2<f64>>,
    pub temperature_logit: f64,
}

impl ModelGradients {
    pub fn zeros_like(model: &EncoderModel) -> Self {
        ModelGradients {
            correlation_q: Array2::zeros(model.correlation.q.dim()),
            correlation_k: Array2::zeros(model.correlation.k.dim()),
            correlation_v: Array2::zeros(model.correlation.v.dim()),
            branches: model
                .branches
                .iter()
                .map(GatedAttentionGrads::zeros_like)
                .collect(),
            aggregator: GatedAttentionGrads::zeros_like(&model.aggregator),
            projection: model
                .projection
                .as_ref()
                .map(|p| Array2::zeros(p.dim())),
            text_projection: model
                .text_projection
                .as_ref()
                .map(|p| Array2::zeros(p.dim())),
            temperature_logit: 0.0,
        }
    }

    /// Same ordering as [`EncoderModel::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for mat in [&self.correlation_q, &self.correlation_k, &self.correlation_v] {
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

    pub fn check_finite(&self) -> Result<()> {
        let bad = |name: &str| Error::NonFinite {
            context: format!("gradient for {name}"),
        };
        let all = |m: &Array2<f64>| m.iter().all(|v| v.is_finite());
        for (name, mat) in [
            ("correlation Q", &self.correlation_q),
            ("correlation K", &self.correlation_k),
            ("correlation V", &self.correlation_v),
        ] {
            if !all(mat) {
                return Err(bad(name));
            }
        }
        for (i, head) in self.branches.iter().enumerate() {
            if !all(&head.v1) || !all(&head.v2) || !head.w.iter().all(|v| v.is_finite()) {
                return Err(bad(&format!("branch {i}")));
            }
        }
        if !all(&self.aggregator.v1)
            || !all(&self.aggregator.v2)
            || !self.aggregator.w.iter().all(|v| v.is_finite())
        {
            return Err(bad("aggregator"));
        }
        if let Some(p) = &self.projection {
            if !all(p) {
                return Err(bad("projection"));
            }
        }
        if let Some(p) = &self.text_projection {
            if !all(p) {
                return Err(bad("text projection"));
            }
        }
        if !self.temperature_logit.is_finite() {
            return Err(bad("temperature logit"));
        }
        Ok(())
    }
}

/// `acc[r][c] += a[r] * b[c]`.
fn accumulate_outer(acc: &mut Array2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) {
    for (r, &av) in a.iter().enumerate() {
        if av != 0.0 {
            acc.row_mut(r).scaled_add(av, &b);
        }
    }
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let a2 = a.insert_axis(Axis(1));
    let b2 = b.insert_axis(Axis(0));
    a2.dot(&b2)
}

/// Backward through `e = u / ||u||`: `du = (de - e * <e, de>) / ||u||`.
fn normalize_backward(u: ArrayView1<f64>, e: ArrayView1<f64>, d_e: ArrayView1<f64>) -> Array1<f64> {
    let norm = u.dot(&u).sqrt();
    let along = e.dot(&d_e);
    let mut d_u = d_e.to_owned();
    d_u.scaled_add(-along, &e);
    d_u / norm
}

/// Backward through one gated attention pool. Accumulates parameter
/// gradients into `acc` and returns the gradient w.r.t. the input rows.
fn pool_backward(
    rows: &Array2<f64>,
    p: &GatedAttentionParams,
    cache: &PoolCache,
    d_pooled: ArrayView1<f64>,
    acc: &mut GatedAttentionGrads,
) -> Array2<f64> {
    // pooled = rows^T a  =>  da = rows . d_pooled, d_rows += outer(a, d_pooled)
    let d_a = rows.dot(&d_pooled);
    let mut d_rows = outer(cache.a.view(), d_pooled);
    // softmax backward: dl = a o (da - <a, da>)
    let along = cache.a.dot(&d_a);
    let d_logits = &cache.a * &(&d_a - along);
    // logits = (t o u) w
    let z = &cache.t * &cache.u;
    acc.w += &z.t().dot(&d_logits);
    let d_z = outer(d_logits.view(), p.w.view());
    let d_t = &d_z * &cache.u;
    let d_u = &d_z * &cache.t;
    // t = tanh(rows V1^T), u = sigmoid(rows V2^T)
    let d_pre1 = &d_t * &cache.t.mapv(|t| 1.0 - t * t);
    let d_pre2 = &d_u * &(&cache.u * &cache.u.mapv(|u| 1.0 - u));
    acc.v1 += &d_pre1.t().dot(rows);
    acc.v2 += &d_pre2.t().dot(rows);
    d_rows += &d_pre1.dot(&p.v1);
    d_rows += &d_pre2.dot(&p.v2);
    d_rows
}

/// Backward through one correlation pass; accumulates Q/K/V gradients.
/// The input-side gradient is dropped: patch embeddings are data.
fn attn_backward(
    x: &Array2<f64>,
    p: &CorrelationParams,
    cache: &AttnCache,
    d_y: &Array2<f64>,
    g_q: &mut Array2<f64>,
    g_k: &mut Array2<f64>,
    g_v: &mut Array2<f64>,
) {
    // y = attn v (+ x); the residual only feeds the (dropped) input gradient.
    let d_attn = d_y.dot(&cache.v.t());
    let d_v_rows = cache.attn.t().dot(d_y);
    // row-softmax backward
    let mut d_scores = Array2::zeros(d_attn.dim());
    for ((a_row, da_row), mut ds_row) in cache
        .attn
        .outer_iter()
        .zip(d_attn.outer_iter())
        .zip(d_scores.outer_iter_mut())
    {
        let along = a_row.dot(&da_row);
        ds_row.assign(&(&a_row * &(&da_row - along)));
    }
    let scale = 1.0 / (p.q.nrows() as f64).sqrt();
    let d_q = d_scores.dot(&cache.k) * scale;
    let d_k = d_scores.t().dot(&cache.q) * scale;
    *g_q += &x.t().dot(&d_q);
    *g_k += &x.t().dot(&d_k);
    *g_v += &x.t().dot(&d_v_rows);
}

/// Value and gradient of symmetric InfoNCE on unit rows.
/// Returns `(loss, d_e_v, d_e_t, d_temperature_logit)`.
fn info_nce_grad(
    e_v: &Array2<f64>,
    e_t: &Array2<f64>,
    temperature_logit: f64,
) -> (f64, Array2<f64>, Array2<f64>, f64) {
    let b = e_v.nrows();
    let tau = temperature_logit.exp();
    let s = e_v.dot(&e_t.t()) * tau;
    let loss = info_nce_from_similarities(&s);
    // G_ij = dL/ds_ij = (0.5/B) (p_ij + q_ij - 2 delta_ij) with p = row
    // softmax, q = column softmax.
    let mut g = Array2::zeros((b, b));
    for i in 0..b {
        let row = s.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for j in 0..b {
            g[[i, j]] += exps[j] / sum;
        }
    }
    for j in 0..b {
        let col = s.column(j);
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = col.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for i in 0..b {
            g[[i, j]] += exps[i] / sum;
        }
    }
    for i in 0..b {
        g[[i, i]] -= 2.0;
    }
    g *= 0.5 / b as f64;
    // s = tau E^v E^t^T, so ds/d(logit) = s.
    let d_logit = (&g * &s).sum();
    let d_ev = g.dot(e_t) * tau;
    let d_et = g.t().dot(e_v) * tau;
    (loss, d_ev, d_et, d_logit)
}

fn row_normalized(rows: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    let mut out = rows.clone();
    let mut norms = Vec::with_capacity(rows.nrows());
    for mut row in out.outer_iter_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
        norms.push(norm);
    }
    (out, norms)
}

/// Mean off-diagonal mosaic similarity; `absolute` penalizes |c_ij|.
pub(crate) fn diversity_value(rows: &Array2<f64>, normalize: bool, absolute: bool) -> f64 {
    diversity_with_grad(rows, normalize, absolute, false).0
}

/// Value plus gradient w.r.t. the (raw) mosaic rows.
pub(crate) fn diversity_backward(
    rows: &Array2<f64>,
    normalize: bool,
    absolute: bool,
) -> (f64, Array2<f64>) {
    diversity_with_grad(rows, normalize, absolute, true)
}

fn diversity_with_grad(
    rows: &Array2<f64>,
    normalize: bool,
    absolute: bool,
    want_grad: bool,
) -> (f64, Array2<f64>) {
    let m = rows.nrows();
    if m < 2 {
        log::warn!("diversity needs at least 2 mosaics per slide; treating as 0");
        return (0.0, Array2::zeros(rows.dim()));
    }
    let (rhat, norms) = if normalize {
        row_normalized(rows)
    } else {
        (rows.clone(), vec![])
    };
    let c = rhat.dot(&rhat.t());
    let denom = (m * m - m) as f64;
    let mut value = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                value += if absolute { c[[i, j]].abs() } else { c[[i, j]] };
            }
        }
    }
    value /= denom;
    if !want_grad {
        return (value, Array2::zeros(rows.dim()));
    }
    // dL/drhat_k = (2/denom) sum_{j != k} f'(c_kj) rhat_j, with f' = 1 or
    // sign (c is symmetric, so row and column contributions coincide).
    let mut fprime = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            if i != j {
                fprime[[i, j]] = if absolute {
                    if c[[i, j]] > 0.0 {
                        1.0
                    } else if c[[i, j]] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                } else {
                    1.0
                };
            }
        }
    }
    let d_rhat = fprime.dot(&rhat) * (2.0 / denom);
    let d_rows = if normalize {
        let mut d = Array2::zeros(rows.dim());
        for i in 0..m {
            if norms[i] > 0.0 {
                let e = rhat.row(i);
                let d_row = normalize_backward(rows.row(i), e, d_rhat.row(i));
                d.row_mut(i).assign(&d_row);
            }
        }
        d
    } else {
        d_rhat
    };
    (value, d_rows)
}

/// Per-batch forward state shared by loss evaluation and backprop.
pub(crate) struct BatchForward {
    pub slides: Vec<SlideCache>,
    /// Unit image embeddings, B x C.
    pub e_v: Array2<f64>,
    /// Pre-normalization text vectors, B x C.
    pub text_w: Array2<f64>,
    /// Unit text embeddings, B x C.
    pub e_t: Array2<f64>,
}

pub(crate) fn forward_batch(
    batch: &Batch,
    model: &EncoderModel,
    opts: &LossOptions,
) -> Result<(LossBreakdown, BatchForward)> {
    let dim = model.dim();
    if batch.slides[0].dim() != dim {
        return Err(Error::DimensionMismatch {
            context: "batch vs model dim",
            expected: dim,
            got: batch.slides[0].dim(),
        });
    }
    let b = batch.len();
    let mut slides = Vec::with_capacity(b);
    let mut e_v = Array2::zeros((b, dim));
    let mut diversity_sum = 0.0;
    for (i, s) in batch.slides.iter().enumerate() {
        let cache = encode_slide_cached(s.rows(), model)?;
        e_v.row_mut(i).assign(&cache.e);
        diversity_sum += diversity_value(
            &cache.mosaics,
            opts.normalize_mosaics_for_ld,
            opts.diversity_abs,
        );
        slides.push(cache);
    }
    let mut text_w = Array2::zeros((b, dim));
    let mut e_t = Array2::zeros((b, dim));
    for (j, raw) in batch.texts.iter().enumerate() {
        let raw = ArrayView1::from(*raw);
        let w = match &model.text_projection {
            Some(p) => raw.dot(p),
            None => raw.to_owned(),
        };
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Degenerate(format!(
                "text vector {j} cannot be normalized (norm {norm})"
            )));
        }
        e_t.row_mut(j).assign(&(&w / norm));
        text_w.row_mut(j).assign(&w);
    }
    let tau = model.temperature_logit.exp();
    let s = e_v.dot(&e_t.t()) * tau;
    let contrastive = info_nce_from_similarities(&s);
    let diversity = diversity_sum / b as f64;
    let breakdown = LossBreakdown {
        total: contrastive + opts.alpha * diversity,
        contrastive,
        diversity,
    };
    Ok((
        breakdown,
        BatchForward {
            slides,
            e_v,
            text_w,
            e_t,
        },
    ))
}

/// Loss and exact gradients for one batch.
pub fn gradients(
    batch: &Batch,
    model: &EncoderModel,
    opts: &LossOptions,
) -> Result<(LossBreakdown, ModelGradients)> {
    let (breakdown, fwd) = forward_batch(batch, model, opts)?;
    let b = batch.len() as f64;
    let mut grads = ModelGradients::zeros_like(model);
    let (_, d_ev, d_et, d_logit) =
        info_nce_grad(&fwd.e_v, &fwd.e_t, model.temperature_logit);
    grads.temperature_logit = d_logit;

    // Text side: only the projection (when present) is trainable.
    if model.text_projection.is_some() {
        for j in 0..batch.len() {
            let d_w = normalize_backward(fwd.text_w.row(j), fwd.e_t.row(j), d_et.row(j));
            let raw = ArrayView1::from(batch.texts[j]);
            accumulate_outer(
                grads.text_projection.as_mut().expect("checked above"),
                raw,
                d_w.view(),
            );
        }
    }

    // Image side, slide by slide.
    for (i, cache) in fwd.slides.iter().enumerate() {
        let d_u = normalize_backward(cache.u.view(), cache.e.view(), d_ev.row(i));
        let d_g = match &model.projection {
            Some(p) => {
                accumulate_outer(
                    grads.projection.as_mut().expect("matches model"),
                    cache.g.view(),
                    d_u.view(),
                );
                p.dot(&d_u)
            }
            None => d_u,
        };
        let mut d_mosaics = pool_backward(
            &cache.mosaics,
            &model.aggregator,
            &cache.agg,
            d_g.view(),
            &mut grads.aggregator,
        );
        if opts.alpha != 0.0 {
            let (_, d_div) = diversity_backward(
                &cache.mosaics,
                opts.normalize_mosaics_for_ld,
                opts.diversity_abs,
            );
            d_mosaics.scaled_add(opts.alpha / b, &d_div);
        }
        let mut d_y = Array2::zeros(cache.y.dim());
        for (m_i, (params, pc)) in model.branches.iter().zip(&cache.branch).enumerate() {
            let d_y_m = pool_backward(
                &cache.y,
                params,
                pc,
                d_mosaics.row(m_i),
                &mut grads.branches[m_i],
            );
            d_y += &d_y_m;
        }
        attn_backward(
            batch.slides[i].rows(),
            &model.correlation,
            &cache.corr,
            &d_y,
            &mut grads.correlation_q,
            &mut grads.correlation_k,
            &mut grads.correlation_v,
        );
    }
    grads.check_finite()?;
    Ok((breakdown, grads))
}

/// Central-difference gradient of the total loss over the flat parameter
/// vector; the reference the analytic gradients are tested against.
pub fn finite_difference_gradients(
    batch: &Batch,
    model: &EncoderModel,
    opts: &LossOptions,
    h: f64,
) -> Result<Vec<f64>> {
    let mut probe = model.clone();
    let base = model.to_flat();
    let mut out = vec![0.0; base.len()];
    let mut bumped = base.clone();
    for i in 0..base.len() {
        bumped[i] = base[i] + h;
        probe.set_from_flat(&bumped)?;
        let up = forward_batch(batch, &probe, opts)?.0.total;
        bumped[i] = base[i] - h;
        probe.set_from_flat(&bumped)?;
        let down = forward_batch(batch, &probe, opts)?.0.total;
        bumped[i] = base[i];
        out[i] = (up - down) / (2.0 * h);
    }
    Ok(out)
}

/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}

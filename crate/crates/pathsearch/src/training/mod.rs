//! Joint contrastive + diversity training of the mosaic encoder.
//!
//! The objective is `L = L_c + alpha * L_d`:
//!
//! - `L_c`: symmetric InfoNCE over in-batch image/text pairs. Similarities
//!   are `s_ij = tau * <E^v_i, E^t_j>` on unit embeddings with a learnable
//!   temperature, and the loss averages row-wise and column-wise cross
//!   entropy against the diagonal.
//! - `L_d`: mean pairwise dot product between a slide's mosaic rows
//!   (off-diagonal pairs only), averaged over the batch. It pushes the M
//!   branches toward complementary summaries. Rows are L2-normalized before
//!   the products by default; raw products and an absolute-value variant sit
//!   behind flags.
//!
//! Gradients are exact reverse-mode derivations of the whole pipeline
//! (correlation attention, gated pooling, projection, normalization, both
//! losses) and are verified against central finite differences in the tests.
//! Training is single-threaded and deterministic for a given seed.

mod adamw;
mod backprop;
mod synth;

pub use adamw::AdamW;
pub use backprop::{
    finite_difference_gradients, gradients, max_relative_error, GatedAttentionGrads,
    ModelGradients,
};
pub use synth::{synth_dataset, SynthDataset, SynthParams};

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::core::{MosaicSet, PatchEmbeddingMatrix};
use crate::encoder::EncoderModel;
use crate::{Error, Result};

/// Training hyperparameters. Defaults follow the reference recipe:
/// batch 128, AdamW at lr 8e-5 with decoupled weight decay 0.05, 100 epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Weight of the diversity term.
    pub alpha: f64,
    pub seed: u64,
    /// Number of mosaic branches.
    pub m: usize,
    /// Hidden width D of the gated attention heads.
    pub hidden_dim: usize,
    /// L2-normalize mosaic rows before the diversity products.
    pub normalize_mosaics_for_ld: bool,
    /// Penalize |c_ij| instead of signed c_ij.
    pub diversity_abs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            lr: 8e-5,
            weight_decay: 0.05,
            epochs: 100,
            alpha: 1.0,
            seed: 0,
            m: 16,
            hidden_dim: 256,
            normalize_mosaics_for_ld: true,
            diversity_abs: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidValue {
                key: "batch_size".into(),
                message: "contrastive training needs at least 2 pairs per batch".into(),
            });
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::InvalidValue {
                key: "lr".into(),
                message: format!("{} is not a valid learning rate", self.lr),
            });
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidValue {
                key: "weight_decay".into(),
                message: "must be finite and non-negative".into(),
            });
        }
        if self.epochs == 0 {
            return Err(Error::InvalidValue {
                key: "epochs".into(),
                message: "must be at least 1".into(),
            });
        }
        if !self.alpha.is_finite() {
            return Err(Error::InvalidValue {
                key: "alpha".into(),
                message: "must be finite".into(),
            });
        }
        if self.m == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidValue {
                key: "m/hidden_dim".into(),
                message: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    pub(crate) fn loss_options(&self) -> LossOptions {
        LossOptions {
            alpha: self.alpha,
            normalize_mosaics_for_ld: self.normalize_mosaics_for_ld,
            diversity_abs: self.diversity_abs,
        }
    }
}

/// How the composite loss is assembled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub alpha: f64,
    pub normalize_mosaics_for_ld: bool,
    pub diversity_abs: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            alpha: 1.0,
            normalize_mosaics_for_ld: true,
            diversity_abs: false,
        }
    }
}

/// One training batch: paired slides and pre-embedded raw report vectors.
#[derive(Debug)]
pub struct Batch<'a> {
    pub slides: Vec<&'a PatchEmbeddingMatrix>,
    pub texts: Vec<&'a [f64]>,
}

impl<'a> Batch<'a> {
    pub fn new(slides: Vec<&'a PatchEmbeddingMatrix>, texts: Vec<&'a [f64]>) -> Result<Self> {
        if slides.is_empty() {
            return Err(Error::Empty("batch"));
        }
        if slides.len() != texts.len() {
            return Err(Error::DimensionMismatch {
                context: "batch pairing",
                expected: slides.len(),
                got: texts.len(),
            });
        }
        let dim = slides[0].dim();
        for s in &slides {
            if s.dim() != dim {
                return Err(Error::DimensionMismatch {
                    context: "batch slide dims",
                    expected: dim,
                    got: s.dim(),
                });
            }
        }
        for t in &texts {
            if t.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "batch text dims",
                    expected: dim,
                    got: t.len(),
                });
            }
        }
        Ok(Batch { slides, texts })
    }

    pub fn len(&self) -> usize {
        self.slides.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slides.is_empty()
    }
}

const UNIT_ROW_TOL: f64 = 1e-6;

/// Symmetric InfoNCE against the diagonal pairing.
///
/// Rows of both matrices must be unit-norm. Returns
/// `0.5 * (row-wise CE + column-wise CE)`; zero when B = 1.
pub fn info_nce_loss(
    image: &Array2<f64>,
    text: &Array2<f64>,
    temperature_logit: f64,
) -> Result<f64> {
    check_embedding_rows(image, "image embeddings")?;
    check_embedding_rows(text, "text embeddings")?;
    if image.dim() != text.dim() {
        return Err(Error::DimensionMismatch {
            context: "embedding matrices",
            expected: image.len(),
            got: text.len(),
        });
    }
    let tau = temperature_logit.exp();
    let s = image.dot(&text.t()) * tau;
    Ok(info_nce_from_similarities(&s))
}

fn check_embedding_rows(e: &Array2<f64>, what: &'static str) -> Result<()> {
    if e.nrows() == 0 {
        return Err(Error::Empty("embedding batch"));
    }
    for (i, row) in e.outer_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite {
                context: format!("{what} row {i}"),
            });
        }
        if (norm - 1.0).abs() > UNIT_ROW_TOL {
            return Err(Error::Degenerate(format!(
                "{what} row {i} has norm {norm}, expected unit"
            )));
        }
    }
    Ok(())
}

fn logsumexp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    max + vals.map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn info_nce_from_similarities(s: &Array2<f64>) -> f64 {
    let b = s.nrows();
    let mut row_ce = 0.0;
    let mut col_ce = 0.0;
    for i in 0..b {
        row_ce += logsumexp(s.row(i).iter().cloned()) - s[[i, i]];
        col_ce += logsumexp(s.column(i).iter().cloned()) - s[[i, i]];
    }
    0.5 * (row_ce + col_ce) / b as f64
}

/// Mean off-diagonal similarity between mosaic rows:
/// `(1/(M^2 - M)) * sum_{i != j} c_ij` with `c_ij = <r_i, r_j>` on
/// (optionally normalized) rows. Returns 0 with a warning when M < 2.
pub fn diversity_loss(mosaics: &MosaicSet, normalize: bool) -> f64 {
    diversity_loss_with(mosaics, normalize, false)
}

/// [`diversity_loss`] with the absolute-value variant exposed.
pub fn diversity_loss_with(mosaics: &MosaicSet, normalize: bool, absolute: bool) -> f64 {
    backprop::diversity_value(mosaics.rows(), normalize, absolute)
}

/// Everything the trace records about one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub contrastive: f64,
    pub diversity: f64,
}

/// Composite loss over a batch: encodes every slide, projects every raw
/// text vector, and combines InfoNCE with the batch-mean diversity term.
pub fn total_loss(batch: &Batch, model: &EncoderModel, opts: &LossOptions) -> Result<LossBreakdown> {
    Ok(backprop::forward_batch(batch, model, opts)?.0)
}

/// Per-epoch trace row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean contrastive component of the training batches.
    pub contrastive: f64,
    /// Mean diversity component of the training batches.
    pub diversity: f64,
}

/// Result of a training run: the checkpoint with the lowest validation loss
/// plus the full per-epoch trace.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EncoderModel,
    pub trace: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Paired slides and pre-embedded report vectors, with optional labels kept
/// for downstream evaluation.
#[derive(Debug, Clone)]
pub struct PairedDataset {
    pub slides: Vec<PatchEmbeddingMatrix>,
    pub raw_texts: Vec<Vec<f64>>,
    pub labels: Vec<u16>,
}

impl PairedDataset {
    pub fn validate(&self) -> Result<()> {
        if self.slides.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if self.slides.len() != self.raw_texts.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset pairing",
                expected: self.slides.len(),
                got: self.raw_texts.len(),
            });
        }
        if !self.labels.is_empty() && self.labels.len() != self.slides.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset labels",
                expected: self.slides.len(),
                got: self.labels.len(),
            });
        }
        let dim = self.slides[0].dim();
        for s in &self.slides {
            if s.dim() != dim {
                return Err(Error::DimensionMismatch {
                    context: "dataset slide dims",
                    expected: dim,
                    got: s.dim(),
                });
            }
        }
        for t in &self.raw_texts {
            if t.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "dataset text dims",
                    expected: dim,
                    got: t.len(),
                });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.slides[0].dim()
    }

    pub fn len(&self) -> usize {
        self.slides.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slides.is_empty()
    }
}

/// Train a fresh seeded model on the dataset. See [`train_with`].
pub fn train(config: &TrainConfig, data: &PairedDataset) -> Result<TrainOutcome> {
    train_with(config, data, |_| {})
}

/// Train with a per-epoch observer (used by the CLI to persist the trace
/// even when a later epoch diverges).
///
/// A fixed 10% of the dataset (at least one slide) is split off as a seeded
/// validation set; the checkpoint with the lowest validation total loss is
/// returned. Two runs with identical config and data produce identical
/// traces and models.
pub fn train_with(
    config: &TrainConfig,
    data: &PairedDataset,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    data.validate()?;
    let n = data.len();
    let n_val = (n as f64 * 0.1).round().max(1.0) as usize;
    if n_val >= n {
        return Err(Error::Degenerate(format!(
            "dataset of {n} slides is too small to hold out a validation split"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (val_idx, train_idx) = order.split_at(n_val);
    let val_idx = val_idx.to_vec();
    let mut train_idx = train_idx.to_vec();
    if train_idx.len() < 2 {
        return Err(Error::Degenerate(
            "training split needs at least 2 slides".into(),
        ));
    }

    let mut model = EncoderModel::seeded(config.m, data.dim(), config.hidden_dim, config.seed);
    let opts = config.loss_options();
    let mut flat = model.to_flat();
    let decay = model.decay_mask();
    let mut opt = AdamW::new(config.lr, config.weight_decay, flat.len());

    // After the first optimizer step, numeric blowups (non-finite values,
    // un-normalizable embeddings) mean the run diverged.
    let as_diverged = |e: Error, epoch: usize, stepped: bool| match e {
        Error::NonFinite { .. } | Error::Degenerate(_) if stepped => Error::Diverged { epoch },
        other => other,
    };

    let mut best: Option<(f64, usize, EncoderModel)> = None;
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        train_idx.shuffle(&mut rng);
        let mut seen = 0usize;
        let mut sum_total = 0.0;
        let mut sum_contrastive = 0.0;
        let mut sum_diversity = 0.0;
        for chunk in train_idx.chunks(config.batch_size) {
            if chunk.len() < 2 {
                log::debug!("dropping trailing batch of 1 slide");
                continue;
            }
            let batch = make_batch(data, chunk)?;
            let stepped = opt.steps_taken() > 0;
            let (breakdown, grads) = gradients(&batch, &model, &opts)
                .map_err(|e| as_diverged(e, epoch, stepped))?;
            if !breakdown.total.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let gflat = grads.to_flat();
            opt.step(&mut flat, &gflat, &decay);
            model.set_from_flat(&flat)?;
            let w = chunk.len() as f64;
            seen += chunk.len();
            sum_total += breakdown.total * w;
            sum_contrastive += breakdown.contrastive * w;
            sum_diversity += breakdown.diversity * w;
        }
        if seen == 0 {
            return Err(Error::Degenerate("no usable training batches".into()));
        }
        let val_batch = make_batch(data, &val_idx)?;
        let val =
            total_loss(&val_batch, &model, &opts).map_err(|e| as_diverged(e, epoch, true))?;
        if !val.total.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let stats = EpochStats {
            epoch,
            train_loss: sum_total / seen as f64,
            val_loss: val.total,
            contrastive: sum_contrastive / seen as f64,
            diversity: sum_diversity / seen as f64,
        };
        on_epoch(&stats);
        trace.push(stats);
        let better = best
            .as_ref()
            .map(|(v, _, _)| val.total < *v)
            .unwrap_or(true);
        if better {
            best = Some((val.total, epoch, model.clone()));
        }
    }
    let (best_val_loss, best_epoch, model) = best.expect("epochs >= 1");
    Ok(TrainOutcome {
        model,
        trace,
        best_epoch,
        best_val_loss,
    })
}

fn make_batch<'d>(data: &'d PairedDataset, idx: &[usize]) -> Result<Batch<'d>> {
    Batch::new(
        idx.iter().map(|&i| &data.slides[i]).collect(),
        idx.iter().map(|&i| data.raw_texts[i].as_slice()).collect(),
    )
}

/// Write the loss trace as CSV (`epoch,train_loss,val_loss,l_c,l_d`).
pub fn write_trace_csv(path: &Path, trace: &[EpochStats]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss,l_c,l_d\n");
    for row in trace {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.epoch, row.train_loss, row.val_loss, row.contrastive, row.diversity
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parse a `key = value` config file; every key is optional, unknown keys
/// are rejected.
pub fn parse_config_file(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text, &path.display().to_string())
}

pub fn parse_config_str(text: &str, origin: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: origin.to_string(),
            line: lineno + 1,
            message: format!("expected key = value, got {line:?}"),
        })?;
        let key = key.trim();
        let value = value.trim();
        let bad = |msg: String| Error::Parse {
            path: origin.to_string(),
            line: lineno + 1,
            message: msg,
        };
        macro_rules! parse_into {
            ($field:expr, $ty:ty) => {
                $field = value
                    .parse::<$ty>()
                    .map_err(|e| bad(format!("{key}: {e}")))?
            };
        }
        match key {
            "batch_size" => parse_into!(cfg.batch_size, usize),
            "lr" => parse_into!(cfg.lr, f64),
            "weight_decay" => parse_into!(cfg.weight_decay, f64),
            "epochs" => parse_into!(cfg.epochs, usize),
            "alpha" => parse_into!(cfg.alpha, f64),
            "seed" => parse_into!(cfg.seed, u64),
            "m" => parse_into!(cfg.m, usize),
            "hidden_dim" => parse_into!(cfg.hidden_dim, usize),
            "normalize_mosaics_for_ld" => parse_into!(cfg.normalize_mosaics_for_ld, bool),
            "diversity_abs" => parse_into!(cfg.diversity_abs, bool),
            other => {
                return Err(bad(format!("unknown key {other:?}")));
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Raw text vectors for a batch, projected and normalized by the model.
/// Exposed for the cross-modal evaluation path.
pub fn text_embedding_rows(model: &EncoderModel, texts: &[&[f64]]) -> Result<Array2<f64>> {
    let dim = model.dim();
    let mut rows = Array2::zeros((texts.len(), dim));
    for (j, raw) in texts.iter().enumerate() {
        if raw.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "raw text vector",
                expected: dim,
                got: raw.len(),
            });
        }
        let raw = Array1::from_vec(raw.to_vec());
        let w = match &model.text_projection {
            Some(p) => raw.dot(p),
            None => raw,
        };
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Degenerate(format!(
                "text vector {j} cannot be normalized (norm {norm})"
            )));
        }
        rows.row_mut(j).assign(&(&w / norm));
    }
    Ok(rows)
}

//! Seeded synthetic slide/report corpus for smoke tests and the end-to-end
//! pipeline check.
//!
//! Each class g gets a random unit center c_g and a fixed report built from
//! class-specific tokens. A slide of class g is a Gaussian patch cloud
//! around c_g, so a nearest-centroid rule on mean patch embeddings should be
//! near-perfect — the oracle the tests hold this generator to.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::PairedDataset;
use crate::core::PatchEmbeddingMatrix;
use crate::encoder::{HashTextEmbedder, TextEmbedder};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub classes: usize,
    pub slides_per_class: usize,
    /// Inclusive patch-count range per slide.
    pub patches_low: usize,
    pub patches_high: usize,
    pub dim: usize,
    /// Per-coordinate noise around the class center.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            classes: 4,
            slides_per_class: 50,
            patches_low: 16,
            patches_high: 32,
            dim: 64,
            sigma: 0.3,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidValue {
                key: "classes".into(),
                message: "need at least 2 classes".into(),
            });
        }
        if self.slides_per_class == 0 {
            return Err(Error::InvalidValue {
                key: "slides_per_class".into(),
                message: "must be at least 1".into(),
            });
        }
        if self.patches_low == 0 || self.patches_low > self.patches_high {
            return Err(Error::InvalidValue {
                key: "patches".into(),
                message: format!(
                    "range {}..={} is not a valid patch-count range",
                    self.patches_low, self.patches_high
                ),
            });
        }
        if self.dim == 0 {
            return Err(Error::InvalidValue {
                key: "dim".into(),
                message: "must be at least 1".into(),
            });
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidValue {
                key: "sigma".into(),
                message: "must be finite and non-negative".into(),
            });
        }
        if self.classes > u16::MAX as usize {
            return Err(Error::InvalidValue {
                key: "classes".into(),
                message: "labels are u16".into(),
            });
        }
        Ok(())
    }
}

/// Generated corpus plus the ground truth that produced it.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub data: PairedDataset,
    /// One report string per slide (identical within a class).
    pub reports: Vec<String>,
    pub class_names: Vec<String>,
    /// `slide_0000` style identifiers, unique.
    pub ids: Vec<String>,
    /// The true class centers, exposed for oracle checks.
    pub centers: Vec<Array1<f64>>,
}

fn class_report(class: usize) -> String {
    format!(
        "specimen shows class{class} morphology with pattern{class} architecture and marker{class} staining consistent with type{class}"
    )
}

/// Deterministic synthetic corpus: same params, same bytes.
pub fn synth_dataset(params: &SynthParams) -> Result<SynthDataset> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let dim = params.dim;
    let mut centers = Vec::with_capacity(params.classes);
    for _ in 0..params.classes {
        loop {
            let raw: Array1<f64> =
                Array1::from_iter((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let norm = raw.dot(&raw).sqrt();
            if norm > 0.0 {
                centers.push(raw / norm);
                break;
            }
        }
    }
    let embedder = HashTextEmbedder::new(dim);
    let n = params.classes * params.slides_per_class;
    let mut slides = Vec::with_capacity(n);
    let mut raw_texts = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut reports = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    let class_names: Vec<String> = (0..params.classes).map(|g| format!("class{g}")).collect();
    let class_texts: Vec<(String, Vec<f64>)> = (0..params.classes)
        .map(|g| {
            let report = class_report(g);
            let raw = embedder.embed(&report);
            (report, raw)
        })
        .collect();
    let mut idx = 0usize;
    for g in 0..params.classes {
        for _ in 0..params.slides_per_class {
            let n_patches = rng.gen_range(params.patches_low..=params.patches_high);
            let mut patches = Array2::zeros((n_patches, dim));
            for mut row in patches.outer_iter_mut() {
                for (c, v) in row.iter_mut().enumerate() {
                    let noise: f64 = rng.sample(StandardNormal);
                    *v = centers[g][c] + params.sigma * noise;
                }
            }
            slides.push(PatchEmbeddingMatrix::new(patches)?);
            raw_texts.push(class_texts[g].1.clone());
            labels.push(g as u16);
            reports.push(class_texts[g].0.clone());
            ids.push(format!("slide_{idx:04}"));
            idx += 1;
        }
    }
    let data = PairedDataset {
        slides,
        raw_texts,
        labels,
    };
    data.validate()?;
    Ok(SynthDataset {
        data,
        reports,
        class_names,
        ids,
        centers,
    })
}

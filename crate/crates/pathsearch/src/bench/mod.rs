//! Complexity benchmark: closed-form cost models plus measured scaling of
//! the mosaic retrieval path against a fractional-sampling baseline.
//!
//! The baseline stores `⌊f·P⌋` patch codes per slide and compares queries
//! by median-of-min Hamming over all sampled pairs, so its per-candidate
//! cost is `⌊f·P_q⌋·⌊f·P_i⌋` — quadratic in the patch count. The mosaic
//! path always compares m codes against m codes plus one dim-wide
//! semantic distance: `m² + dim` per candidate, independent of P.
//!
//! Measured runs instrument the real query code via its op counters, so
//! counted and analytic ops must agree exactly. Baseline selection uses
//! uniform random sampling rather than clustering: the benchmark measures
//! distance-computation cost, which does not depend on how the sampled
//! codes were chosen. Everything runs single-threaded for stable timing.


use std::time::Instant;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::core::{l2_normalize, BinaryMosaicCode, SemanticVector, SlideRecord};
use crate::index::{
    median_min_hamming_counted, mosaic_block_bytes, query_image, query_image_counted,
    FusionConfig, OpCounters, QuerySlide, RetrievalIndex,
};
use crate::{Error, Result};

/// Mosaic-level distance evaluations per candidate for a sampler keeping
/// fraction `f` of each slide's patches.
pub fn baseline_ops_per_candidate(p_q: usize, p_i: usize, f: f64) -> u64 {
    let q = (f * p_q as f64).floor() as u64;
    let i = (f * p_i as f64).floor() as u64;
    q * i
}

/// Code-pair comparisons in the mosaic stage: m².
pub fn pathsearch_mosaic_ops_per_candidate(m: usize) -> u64 {
    (m * m) as u64
}

/// Total per-candidate work: m² code comparisons plus dim semantic
/// multiply-adds. Constant in the patch count.
pub fn pathsearch_ops_per_candidate(m: usize, dim: usize) -> u64 {
    pathsearch_mosaic_ops_per_candidate(m) + dim as u64
}

/// Inputs for the capacity curve: how many candidates fit under an op
/// budget.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModelParams {
    pub p_bar: usize,
    pub f: f64,
    pub m: usize,
    pub dim: usize,
    pub budget: u64,
}

impl CostModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.f > 0.0 && self.f < 1.0) {
            return Err(Error::InvalidValue {
                key: "f".into(),
                message: format!("{} is outside (0, 1)", self.f),
            });
        }
        if self.p_bar == 0 || self.m == 0 || self.dim == 0 || self.budget == 0 {
            return Err(Error::InvalidValue {
                key: "cost model".into(),
                message: "p_bar, m, dim, budget must all be positive".into(),
            });
        }
        if (self.f * self.p_bar as f64).floor() < 1.0 {
            return Err(Error::InvalidValue {
                key: "f".into(),
                message: format!("f*p_bar = {} samples no patches", self.f * self.p_bar as f64),
            });
        }
        Ok(())
    }
}

/// Max supportable database sizes under the budget, per method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CapacityEstimate {
    pub pathsearch: u64,
    pub baseline: u64,
}

pub fn capacity_under_budget(params: &CostModelParams) -> Result<CapacityEstimate> {
    params.validate()?;
    Ok(CapacityEstimate {
        pathsearch: params.budget / pathsearch_ops_per_candidate(params.m, params.dim),
        baseline: params.budget / baseline_ops_per_candidate(params.p_bar, params.p_bar, params.f),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    PathSearch,
    Baseline,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::PathSearch => "pathsearch",
            Method::Baseline => "baseline",
        }
    }
}

/// One measured point: a method at a database size.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub method: Method,
    pub s: usize,
    pub p_bar: usize,
    /// f for the baseline, m for the mosaic path.
    pub f_or_m: f64,
    pub ops_per_query: u64,
    pub median_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingConfig {
    /// Database sizes, ascending.
    pub sizes: Vec<usize>,
    pub p_bar: usize,
    pub f: f64,
    pub m: usize,
    pub dim: usize,
    pub repetitions: usize,
    pub seed: u64,
    /// Soft cap on any one in-memory store; larger requests are reduced.
    pub max_bytes: usize,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            sizes: vec![1_000, 2_000, 5_000, 10_000, 20_000],
            p_bar: 1_000,
            f: 0.05,
            m: 16,
            dim: 768,
            repetitions: 9,
            seed: 0,
            max_bytes: 1 << 30,
        }
    }
}

impl ScalingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(Error::Empty("benchmark sizes"));
        }
        if self.sizes.windows(2).any(|w| w[0] >= w[1]) || self.sizes[0] == 0 {
            return Err(Error::InvalidValue {
                key: "sizes".into(),
                message: "must be positive and strictly ascending".into(),
            });
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidValue {
                key: "repetitions".into(),
                message: "must be at least 1".into(),
            });
        }
        CostModelParams {
            p_bar: self.p_bar,
            f: self.f,
            m: self.m,
            dim: self.dim,
            budget: 1,
        }
        .validate()
    }

    fn codes_per_slide(&self) -> usize {
        (self.f * self.p_bar as f64).floor() as usize
    }
}

/// Measured rows plus notes about any graceful size reductions.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    pub notes: Vec<String>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let l = xs.len();
    if l % 2 == 1 {
        xs[l / 2]
    } else {
        (xs[l / 2 - 1] + xs[l / 2]) / 2.0
    }
}

fn rand_code(rng: &mut ChaCha8Rng, m: usize, bits: usize) -> BinaryMosaicCode {
    let wpc = bits.div_ceil(64);
    let words: Vec<u64> = (0..m * wpc).map(|_| rng.gen()).collect();
    BinaryMosaicCode::from_words(m, bits, words).expect("word count matches by construction")
}

fn rand_unit(rng: &mut ChaCha8Rng, dim: usize) -> SemanticVector {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(u) = l2_normalize(Array1::from_vec(v).view()) {
            return u;
        }
    }
}

fn fit_size(
    requested: usize,
    bytes_per_record: usize,
    max_bytes: usize,
    method: Method,
    notes: &mut Vec<String>,
) -> usize {
    let fit = (max_bytes / bytes_per_record.max(1)).max(1);
    if requested > fit {
        let note = format!(
            "{}: S={requested} needs ~{} MB (> {} MB cap); reduced to S={fit}",
            method.as_str(),
            requested * bytes_per_record >> 20,
            max_bytes >> 20,
        );
        log::warn!("{note}");
        notes.push(note);
        fit
    } else {
        requested
    }
}

fn run_pathsearch_point(cfg: &ScalingConfig, s: usize) -> Result<(u64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (s as u64).rotate_left(17));
    let mut index = RetrievalIndex::new(cfg.m, cfg.dim)?;
    for i in 0..s {
        index.push(SlideRecord {
            id: format!("b{i:07}"),
            label: None,
            mosaic: rand_code(&mut rng, cfg.m, cfg.dim),
            semantic: rand_unit(&mut rng, cfg.dim),
            text_semantic: None,
        })?;
    }
    let fusion = FusionConfig::default();

    let probe = QuerySlide {
        id: None,
        mosaic: rand_code(&mut rng, cfg.m, cfg.dim),
        semantic: rand_unit(&mut rng, cfg.dim),
    };
    let mut ops = OpCounters::default();
    std::hint::black_box(query_image_counted(&index, &probe, &fusion, &mut ops)?);

    let mut times = Vec::with_capacity(cfg.repetitions);
    for _ in 0..cfg.repetitions {
        let probe = QuerySlide {
            id: None,
            mosaic: rand_code(&mut rng, cfg.m, cfg.dim),
            semantic: rand_unit(&mut rng, cfg.dim),
        };
        let start = Instant::now();
        let hits = query_image(&index, &probe, &fusion)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(hits);
    }
    Ok((ops.mosaic + ops.semantic, median(times)))
}

fn run_baseline_point(cfg: &ScalingConfig, s: usize) -> Result<(u64, f64)> {
    let codes = cfg.codes_per_slide();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (s as u64).rotate_left(41));
    let store: Vec<BinaryMosaicCode> = (0..s).map(|_| rand_code(&mut rng, codes, cfg.dim)).collect();

    let scan = |probe: &BinaryMosaicCode, ops: &mut u64| -> Result<f64> {
        let mut best = f64::INFINITY;
        for cand in &store {
            best = best.min(median_min_hamming_counted(probe, cand, ops)?);
        }
        Ok(best)
    };

    let mut ops = 0u64;
    std::hint::black_box(scan(&rand_code(&mut rng, codes, cfg.dim), &mut ops)?);

    let mut times = Vec::with_capacity(cfg.repetitions);
    for _ in 0..cfg.repetitions {
        let probe = rand_code(&mut rng, codes, cfg.dim);
        let mut sink = 0u64;
        let start = Instant::now();
        let d = scan(&probe, &mut sink)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(d);
    }
    Ok((ops, median(times)))
}

/// Build synthetic stores at each size and time one query per repetition,
/// reporting median wall milliseconds and exact op counts per method.
/// Sizes that would blow past `max_bytes` are reduced and noted.
pub fn measure_scaling(cfg: &ScalingConfig) -> Result<ScalingReport> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut notes = Vec::new();

    let ps_record_bytes = mosaic_block_bytes(cfg.m, cfg.dim) + cfg.dim * 8 + 64;
    for &s in &cfg.sizes {
        let s = fit_size(s, ps_record_bytes, cfg.max_bytes, Method::PathSearch, &mut notes);
        let (ops, median_ms) = run_pathsearch_point(cfg, s)?;
        rows.push(ScalingRow {
            method: Method::PathSearch,
            s,
            p_bar: cfg.p_bar,
            f_or_m: cfg.m as f64,
            ops_per_query: ops,
            median_ms,
        });
    }

    let bl_record_bytes = mosaic_block_bytes(cfg.codes_per_slide(), cfg.dim) + 64;
    for &s in &cfg.sizes {
        let s = fit_size(s, bl_record_bytes, cfg.max_bytes, Method::Baseline, &mut notes);
        let (ops, median_ms) = run_baseline_point(cfg, s)?;
        rows.push(ScalingRow {
            method: Method::Baseline,
            s,
            p_bar: cfg.p_bar,
            f_or_m: cfg.f,
            ops_per_query: ops,
            median_ms,
        });
    }

    Ok(ScalingReport { rows, notes })
}

pub const SCALING_CSV_HEADER: &str = "method,s,p_bar,f_or_m,ops_per_query,median_ms";

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut out = String::from(SCALING_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method.as_str(),
            r.s,
            r.p_bar,
            r.f_or_m,
            r.ops_per_query,
            r.median_ms
        ));
    }
    out
}

/// Inverse of [`scaling_csv`]; numeric fields round-trip losslessly.
pub fn parse_scaling_csv(text: &str) -> Result<Vec<ScalingRow>> {
    let err = |line: usize, message: String| Error::Parse {
        path: "<scaling csv>".into(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == SCALING_CSV_HEADER => {}
        Some((_, h)) => return Err(err(1, format!("expected header {SCALING_CSV_HEADER:?}, got {h:?}"))),
        None => return Err(Error::Empty("scaling csv")),
    }
    let mut rows = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = raw.split(',').collect();
        if f.len() != 6 {
            return Err(err(line, format!("expected 6 fields, got {}", f.len())));
        }
        let method = match f[0].trim() {
            "pathsearch" => Method::PathSearch,
            "baseline" => Method::Baseline,
            other => return Err(err(line, format!("unknown method {other:?}"))),
        };
        rows.push(ScalingRow {
            method,
            s: f[1].trim().parse().map_err(|_| err(line, format!("bad s {:?}", f[1])))?,
            p_bar: f[2].trim().parse().map_err(|_| err(line, format!("bad p_bar {:?}", f[2])))?,
            f_or_m: f[3].trim().parse().map_err(|_| err(line, format!("bad f_or_m {:?}", f[3])))?,
            ops_per_query: f[4].trim().parse().map_err(|_| err(line, format!("bad ops {:?}", f[4])))?,
            median_ms: f[5].trim().parse().map_err(|_| err(line, format!("bad median_ms {:?}", f[5])))?,
        });
    }
    Ok(rows)
}

/// Log-log plot data for the scaling rows (no rendering — plot-ready CSV).
pub fn plot_data_csv(rows: &[ScalingRow]) -> String {
    let mut out = String::from("method,log10_s,log10_ops_per_query,log10_median_ms\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.method.as_str(),
            (r.s as f64).log10(),
            (r.ops_per_query as f64).log10(),
            r.median_ms.log10()
        ));
    }
    out
}

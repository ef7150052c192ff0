//! Acceptance gate: ten go/no-go checks over the whole engine. Each test
//! prints one `[PASS]`/`[FAIL]` line (visible with `--nocapture`; cargo
//! shows it on failure regardless). Tolerances are pinned here on purpose;
//! loosening them is a spec change, not a cleanup.
//!
//! The tests share a mutex so wall-clock measurements never overlap.

use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pathsearch::bench::{
    baseline_ops_per_candidate, measure_scaling, pathsearch_ops_per_candidate, Method,
    ScalingConfig,
};
use pathsearch::core::{
    binarize, BinaryMosaicCode, MosaicSet, PatchEmbeddingMatrix, SemanticVector, SlideRecord,
};
use pathsearch::encoder::{encode_slide, text_semantic, EncoderModel, GatedAttentionParams};
use pathsearch::eval::{
    accuracy_suite, consistency_distribution, fleiss_kappa, mcnemar, panel_mv_accuracy,
    Kappa, LabeledRanking, RaterTable,
};
use pathsearch::index::{
    baseline_mosaic_store_bytes, load_index, median_min_hamming, median_min_hamming_counted,
    mosaic_block_bytes, query_image, query_image_counted, query_text_to_image, save_index,
    semantic_block_bytes, FusionConfig, OpCounters, QuerySlide, RetrievalIndex,
};
use pathsearch::training::{
    diversity_loss, finite_difference_gradients, gradients, info_nce_loss, max_relative_error,
    synth_dataset, train, Batch, LossOptions, SynthParams, TrainConfig,
};

static GATE: Mutex<()> = Mutex::new(());

fn gate() -> MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|p| p.into_inner())
}

type Outcome = Result<(), String>;

fn check(n: usize, what: &str, outcome: Outcome) {
    match &outcome {
        Ok(()) => println!("[PASS] criterion {n}: {what}"),
        Err(e) => println!("[FAIL] criterion {n}: {what} — {e}"),
    }
    if let Err(e) = outcome {
        panic!("criterion {n} failed: {e}");
    }
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn lib<T>(r: pathsearch::Result<T>) -> Result<T, String> {
    r.map_err(|e| format!("library call failed: {e}"))
}

// ----------------------------------------------------------- helpers

fn rand_patches(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> PatchEmbeddingMatrix {
    let rows = (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    PatchEmbeddingMatrix::from_rows(rows).expect("random patch matrix")
}

fn rand_unit(rng: &mut ChaCha8Rng, dim: usize) -> SemanticVector {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            let unit = Array1::from_iter(v.into_iter().map(|x| x / norm));
            return SemanticVector::new(unit).expect("unit vector");
        }
    }
}

fn rand_code(rng: &mut ChaCha8Rng, m: usize, bits: usize) -> BinaryMosaicCode {
    let words_per = bits.div_ceil(64);
    let words = (0..m * words_per).map(|_| rng.gen::<u64>()).collect();
    BinaryMosaicCode::from_words(m, bits, words).expect("random code")
}

/// Brute-force reference for the mosaic distance: per-word XOR popcount,
/// min over candidate codes, median over query codes via a sort.
fn mmh_oracle(q: &BinaryMosaicCode, c: &BinaryMosaicCode) -> f64 {
    let hamming = |a: &[u64], b: &[u64]| -> u32 {
        a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
    };
    let mut minima: Vec<u32> = (0..q.m())
        .map(|i| {
            (0..c.m())
                .map(|j| hamming(q.code(i).words(), c.code(j).words()))
                .min()
                .expect("candidate has codes")
        })
        .collect();
    minima.sort_unstable();
    let n = minima.len();
    if n % 2 == 1 {
        minima[n / 2] as f64
    } else {
        (minima[n / 2 - 1] as f64 + minima[n / 2] as f64) / 2.0
    }
}

fn scalar_euclidean(a: &SemanticVector, b: &SemanticVector) -> f64 {
    a.values()
        .iter()
        .zip(b.values().iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

// ------------------------------------------------- criterion 1: forward

/// From-scratch forward pass over plain nested loops: correlation
/// attention, M gated-attention branches, aggregator, projection, unit
/// normalization. Reads the model's weights but shares no code with the
/// library path.
fn scalar_forward(x: &[Vec<f64>], model: &EncoderModel) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = x.len();
    let c = model.dim();
    let project = |rows: &[Vec<f64>], w: &Array2<f64>| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                (0..c)
                    .map(|j| (0..c).map(|k| r[k] * w[[k, j]]).sum())
                    .collect()
            })
            .collect()
    };
    let q = project(x, &model.correlation.q);
    let k = project(x, &model.correlation.k);
    let v = project(x, &model.correlation.v);
    let scale = 1.0 / (c as f64).sqrt();
    let mut y = vec![vec![0.0; c]; n];
    for i in 0..n {
        let mut attn: Vec<f64> = (0..n)
            .map(|j| (0..c).map(|d| q[i][d] * k[j][d]).sum::<f64>() * scale)
            .collect();
        let max = attn.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for s in attn.iter_mut() {
            *s = (*s - max).exp();
            sum += *s;
        }
        for s in attn.iter_mut() {
            *s /= sum;
        }
        for j in 0..c {
            y[i][j] = (0..n).map(|t| attn[t] * v[t][j]).sum::<f64>() + x[i][j];
        }
    }
    let pool = |rows: &[Vec<f64>], p: &GatedAttentionParams| -> Vec<f64> {
        let mut scores: Vec<f64> = rows
            .iter()
            .map(|row| {
                (0..p.w.len())
                    .map(|h| {
                        let t = (0..c).map(|j| row[j] * p.v1[[h, j]]).sum::<f64>().tanh();
                        let g = 1.0
                            / (1.0 + (-(0..c).map(|j| row[j] * p.v2[[h, j]]).sum::<f64>()).exp());
                        t * g * p.w[h]
                    })
                    .sum()
            })
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            sum += *s;
        }
        for s in scores.iter_mut() {
            *s /= sum;
        }
        (0..c)
            .map(|j| rows.iter().zip(&scores).map(|(row, a)| a * row[j]).sum())
            .collect()
    };
    let mosaics: Vec<Vec<f64>> = model.branches.iter().map(|b| pool(&y, b)).collect();
    let g = pool(&mosaics, &model.aggregator);
    let proj = model.projection.as_ref().expect("seeded models carry a projection");
    let u: Vec<f64> = (0..c)
        .map(|j| (0..c).map(|i| g[i] * proj[[i, j]]).sum())
        .collect();
    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    (mosaics, u.iter().map(|x| x / norm).collect())
}

#[test]
fn criterion_01_encoder_forward_matches_scalar_reimplementation() {
    let _g = gate();
    let what = "encoder forward agrees with a scalar re-implementation to 1e-9";
    let run = || -> Outcome {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
        let model = EncoderModel::seeded(4, 8, 6, 31);
        let mut worst: f64 = 0.0;
        for n in [1usize, 3, 10] {
            let patches = rand_patches(&mut rng, n, 8);
            let (mosaics, semantic) = lib(encode_slide(&patches, &model))?;
            let x: Vec<Vec<f64>> = patches
                .rows()
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect();
            let (oracle_mosaics, oracle_e) = scalar_forward(&x, &model);
            for i in 0..model.m() {
                for j in 0..8 {
                    worst = worst.max((mosaics.rows()[[i, j]] - oracle_mosaics[i][j]).abs());
                }
            }
            for j in 0..8 {
                worst = worst.max((semantic.values()[j] - oracle_e[j]).abs());
            }
        }
        ensure!(worst <= 1e-9, "max |library - oracle| = {worst:.3e} > 1e-9");
        let secs = start.elapsed().as_secs_f64();
        ensure!(secs < 1.0, "forward comparison took {secs:.2}s, budget 1s");
        Ok(())
    };
    check(1, what, run());
}

// ----------------------------------------------- criterion 2: gradients

#[test]
fn criterion_02_analytic_gradients_match_central_differences() {
    let _g = gate();
    let what = "analytic gradients match central differences (h=1e-5) within 1e-4";
    let run = || -> Outcome {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(0x97AD);
        let model = EncoderModel::seeded(2, 8, 4, 7);
        let s1 = rand_patches(&mut rng, 5, 8);
        let s2 = rand_patches(&mut rng, 7, 8);
        let t1: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t2: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let batch = lib(Batch::new(vec![&s1, &s2], vec![&t1, &t2]))?;
        let opts = LossOptions {
            alpha: 1.0,
            normalize_mosaics_for_ld: true,
            diversity_abs: false,
        };
        let (_, grads) = lib(gradients(&batch, &model, &opts))?;
        let numeric = lib(finite_difference_gradients(&batch, &model, &opts, 1e-5))?;
        let analytic = grads.to_flat();
        ensure!(
            analytic.len() == numeric.len(),
            "gradient lengths differ: {} vs {}",
            analytic.len(),
            numeric.len()
        );
        let err = max_relative_error(&analytic, &numeric, 1e-4);
        ensure!(err <= 1e-4, "max relative gradient error {err:.3e} > 1e-4");
        let secs = start.elapsed().as_secs_f64();
        ensure!(secs < 10.0, "gradient check took {secs:.2}s, budget 10s");
        Ok(())
    };
    check(2, what, run());
}

// ------------------------------------------- criterion 3: loss identities

#[test]
fn criterion_03_loss_identities() {
    let _g = gate();
    let what = "contrastive loss is 0 for B=1 and ln4 for uniform B=4; diversity is 0/1";
    let run = || -> Outcome {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let one = rand_unit(&mut rng, 6);
        let single = Array2::from_shape_fn((1, 6), |(_, j)| one.values()[j]);
        let l_single = lib(info_nce_loss(&single, &single, 0.0))?;
        ensure!(l_single == 0.0, "single-pair loss {l_single} != 0");

        let u = rand_unit(&mut rng, 6);
        let w = rand_unit(&mut rng, 6);
        let image = Array2::from_shape_fn((4, 6), |(_, j)| u.values()[j]);
        let text = Array2::from_shape_fn((4, 6), |(_, j)| w.values()[j]);
        let l_uniform = lib(info_nce_loss(&image, &text, 0.7))?;
        let ln4 = 4.0f64.ln();
        ensure!(
            (l_uniform - ln4).abs() <= 1e-9,
            "uniform-similarity loss {l_uniform} differs from ln4 by {:.3e}",
            (l_uniform - ln4).abs()
        );

        let orthogonal = lib(MosaicSet::new(ndarray::array![
            [2.0, 0.0, 0.0],
            [0.0, 3.0, 0.0]
        ]))?;
        let l_orth = diversity_loss(&orthogonal, true);
        ensure!(l_orth == 0.0, "orthogonal diversity {l_orth} != 0");

        let identical = lib(MosaicSet::new(ndarray::array![
            [0.5, -1.0, 2.0],
            [0.5, -1.0, 2.0]
        ]))?;
        let l_same = diversity_loss(&identical, true);
        ensure!(
            (l_same - 1.0).abs() <= 1e-12,
            "identical-mosaic diversity {l_same} != 1"
        );
        Ok(())
    };
    check(3, what, run());
}

// -------------------------------------- criterion 4: mosaic distance

#[test]
fn criterion_04_mosaic_distance_matches_brute_force_at_production_shape() {
    let _g = gate();
    let what = "median-min-Hamming equals brute force on 1000 random (M=16, 768-bit) pairs";
    let run = || -> Outcome {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for trial in 0..1000 {
            let q = rand_code(&mut rng, 16, 768);
            let c = rand_code(&mut rng, 16, 768);
            let got = lib(median_min_hamming(&q, &c))?;
            let want = mmh_oracle(&q, &c);
            ensure!(got == want, "pair {trial}: library {got} != brute force {want}");
        }
        Ok(())
    };
    check(4, what, run());
}

// ------------------------------------------------ criterion 5: fusion

/// Hand-worked three-candidate example, frozen from an offline recount:
/// Hamming distances [2, 4, 9] and Euclidean distances [0.3, 0.1, 0.45]
/// standardize (population sigma, epsilon 1e-8) and sum to these fused
/// scores, ranking the candidates [c2, c1, c3].
const HAND_FUSED: [(&str, f64); 3] = [
    ("c2", -1.6184070460823614),
    ("c1", -0.9028016966328855),
    ("c3", 2.521208742715248),
];

#[test]
fn criterion_05_fusion_modes_and_hand_example() {
    let _g = gate();
    let what = "beta/normalize fusion modes reduce to single families; hand example to 1e-4";
    let run = || -> Outcome {
        // (a) hand-worked example.
        let mut index = lib(RetrievalIndex::new(1, 16))?;
        let pad16 = |a: f64, b: f64| {
            let mut v = vec![0.0; 16];
            v[0] = a;
            v[1] = b;
            SemanticVector::new(Array1::from_vec(v)).expect("unit candidate")
        };
        let cos = [0.955, 0.995, 0.8987499999999999];
        let words = [0b11u64, 0b1111, 0b1_1111_1111];
        for (i, name) in ["c1", "c2", "c3"].iter().enumerate() {
            lib(index.push(SlideRecord {
                id: name.to_string(),
                label: None,
                mosaic: lib(BinaryMosaicCode::from_words(1, 16, vec![words[i]]))?,
                semantic: pad16(cos[i], (1.0 - cos[i] * cos[i]).sqrt()),
                text_semantic: None,
            }))?;
        }
        let query = QuerySlide {
            id: None,
            mosaic: lib(BinaryMosaicCode::from_words(1, 16, vec![0]))?,
            semantic: pad16(1.0, 0.0),
        };
        let cfg = FusionConfig {
            top_k: 3,
            ..FusionConfig::default()
        };
        let hits = lib(query_image(&index, &query, &cfg))?;
        for (hit, (id, fused)) in hits.iter().zip(HAND_FUSED) {
            ensure!(hit.candidate_id == id, "hand example order: got {:?}", hit.candidate_id);
            ensure!(
                (hit.fused_distance - fused).abs() <= 1e-4,
                "{id}: fused {} differs from hand value {fused}",
                hit.fused_distance
            );
        }

        // (b) beta=0 without normalization is the mosaic-only ranking.
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let mut idx = lib(RetrievalIndex::new(4, 32))?;
        for i in 0..40 {
            lib(idx.push(SlideRecord {
                id: format!("r{i:02}"),
                label: None,
                mosaic: rand_code(&mut rng, 4, 32),
                semantic: rand_unit(&mut rng, 32),
                text_semantic: None,
            }))?;
        }
        let probe = QuerySlide {
            id: None,
            mosaic: rand_code(&mut rng, 4, 32),
            semantic: rand_unit(&mut rng, 32),
        };
        let mosaic_only = FusionConfig {
            beta: 0.0,
            normalize: false,
            top_k: 40,
            ..FusionConfig::default()
        };
        let hits = lib(query_image(&idx, &probe, &mosaic_only))?;
        let mut oracle: Vec<(f64, f64, &str)> = idx
            .records()
            .iter()
            .map(|r| {
                (
                    mmh_oracle(&probe.mosaic, &r.mosaic),
                    scalar_euclidean(&probe.semantic, &r.semantic),
                    r.id.as_str(),
                )
            })
            .collect();
        oracle.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        for (hit, want) in hits.iter().zip(&oracle) {
            ensure!(
                hit.candidate_id == want.2 && hit.fused_distance == want.0,
                "mosaic-only ranking diverged at rank {}: {} (fused {}) vs {} ({})",
                hit.rank,
                hit.candidate_id,
                hit.fused_distance,
                want.2,
                want.0
            );
        }

        // (c) huge beta hands the ranking to the semantic family.
        let semantic_heavy = FusionConfig {
            beta: 1e6,
            top_k: 40,
            ..FusionConfig::default()
        };
        let hits = lib(query_image(&idx, &probe, &semantic_heavy))?;
        let mut by_semantic: Vec<(f64, &str)> = idx
            .records()
            .iter()
            .map(|r| (scalar_euclidean(&probe.semantic, &r.semantic), r.id.as_str()))
            .collect();
        by_semantic.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        for (hit, want) in hits.iter().zip(&by_semantic) {
            ensure!(
                hit.candidate_id == want.1,
                "semantic-only ranking diverged at rank {}: {} vs {}",
                hit.rank,
                hit.candidate_id,
                want.1
            );
        }
        Ok(())
    };
    check(5, what, run());
}

// ----------------------------------------------- criterion 6: storage

#[test]
fn criterion_06_storage_model_byte_counts() {
    let _g = gate();
    let what = "per-record storage is 1536 B mosaic + 6144 B semantic; baseline store 48000 B";
    let run = || -> Outcome {
        let mosaic = mosaic_block_bytes(16, 768);
        ensure!(mosaic == 1536, "mosaic block {mosaic} != 1536");
        let semantic = semantic_block_bytes(768, 8);
        ensure!(semantic == 6144, "semantic block {semantic} != 6144");
        let baseline = baseline_mosaic_store_bytes(10_000, 0.05, 768);
        ensure!(baseline == 48_000, "baseline store {baseline} != 48000");
        Ok(())
    };
    check(6, what, run());
}

// -------------------------------------------- criterion 7: complexity

#[test]
fn criterion_07_counted_ops_and_wall_time_scaling() {
    let _g = gate();
    let what = "counted ops match the cost model; wall time doubles with corpus size";
    let run = || -> Outcome {
        let start = Instant::now();

        // Baseline: mean 15000 patches sampled at 5% -> 750 codes a side,
        // 562500 code comparisons per candidate, counted not modeled.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let q = rand_code(&mut rng, 750, 768);
        let c = rand_code(&mut rng, 750, 768);
        let mut ops = 0u64;
        lib(median_min_hamming_counted(&q, &c, &mut ops))?;
        ensure!(ops == 562_500, "baseline counted ops {ops} != 562500");
        ensure!(
            baseline_ops_per_candidate(15_000, 15_000, 0.05) == 562_500,
            "baseline cost model broke"
        );

        // Mosaic path: 256 code comparisons per candidate at M=16, whatever
        // the patch count was; the baseline model keeps growing with it.
        let mut counted_at = Vec::new();
        for p_bar in [100usize, 1_000, 10_000] {
            let mut idx = lib(RetrievalIndex::new(16, 768))?;
            for i in 0..5 {
                lib(idx.push(SlideRecord {
                    id: format!("p{p_bar}-{i}"),
                    label: None,
                    mosaic: rand_code(&mut rng, 16, 768),
                    semantic: rand_unit(&mut rng, 768),
                    text_semantic: None,
                }))?;
            }
            let probe = QuerySlide {
                id: None,
                mosaic: rand_code(&mut rng, 16, 768),
                semantic: rand_unit(&mut rng, 768),
            };
            let mut counters = OpCounters::default();
            lib(query_image_counted(&idx, &probe, &FusionConfig::default(), &mut counters))?;
            ensure!(
                counters.mosaic == 5 * 256,
                "p_bar {p_bar}: mosaic ops {} != 5*256",
                counters.mosaic
            );
            counted_at.push(counters.mosaic);
        }
        ensure!(
            counted_at.iter().all(|&o| o == counted_at[0]),
            "mosaic ops varied with patch count: {counted_at:?}"
        );
        ensure!(
            pathsearch_ops_per_candidate(16, 768) == 1024,
            "fused per-candidate cost model broke"
        );

        // Wall time: doubling the corpus at S >= 10^4 roughly doubles the
        // fused query time (linear scan, constant per-candidate work).
        let cfg = ScalingConfig {
            sizes: vec![10_000, 20_000],
            p_bar: 1_000,
            f: 0.05,
            m: 16,
            dim: 768,
            repetitions: 9,
            seed: 1,
            max_bytes: 1 << 30,
        };
        let report = lib(measure_scaling(&cfg))?;
        let ps: Vec<_> = report
            .rows
            .iter()
            .filter(|r| r.method == Method::PathSearch)
            .collect();
        ensure!(ps.len() == 2, "expected 2 fused rows, got {}", ps.len());
        for row in &ps {
            ensure!(
                row.ops_per_query == 1024 * row.s as u64,
                "counted ops {} at S={} disagree with 1024*S",
                row.ops_per_query,
                row.s
            );
        }
        let ratio = ps[1].median_ms / ps[0].median_ms;
        ensure!(
            (1.6..=2.6).contains(&ratio),
            "S -> 2S wall-time ratio {ratio:.2} outside [1.6, 2.6] \
             ({:.3} ms -> {:.3} ms)",
            ps[0].median_ms,
            ps[1].median_ms
        );
        let secs = start.elapsed().as_secs_f64();
        ensure!(secs < 300.0, "benchmark took {secs:.0}s, budget 5 minutes");
        Ok(())
    };
    check(7, what, run());
}

// --------------------------------------- criterion 8: training pipeline

#[test]
fn criterion_08_training_pipeline_reaches_accuracy_floors() {
    let _g = gate();
    let what = "100-epoch training on the 4-class corpus reaches 0.90 retrieval accuracy";
    let run = || -> Outcome {
        let start = Instant::now();
        let params = SynthParams {
            classes: 4,
            slides_per_class: 50,
            patches_low: 12,
            patches_high: 24,
            dim: 32,
            sigma: 0.3,
            seed: 42,
        };
        let ds = lib(synth_dataset(&params))?;
        let config = TrainConfig {
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 0.01,
            epochs: 100,
            alpha: 1.0,
            seed: 0,
            m: 16,
            hidden_dim: 32,
            normalize_mosaics_for_ld: true,
            diversity_abs: false,
        };
        let outcome = lib(train(&config, &ds.data))?;
        let model = outcome.model;

        let mut index = lib(RetrievalIndex::new(config.m, params.dim))?;
        for name in &ds.class_names {
            lib(index.add_label(name))?;
        }
        for i in 0..ds.data.len() {
            let (mosaics, semantic) = lib(encode_slide(&ds.data.slides[i], &model))?;
            lib(index.push(SlideRecord {
                id: ds.ids[i].clone(),
                label: Some(ds.data.labels[i]),
                mosaic: binarize(&mosaics),
                semantic,
                text_semantic: Some(lib(text_semantic(&ds.data.raw_texts[i], &model))?),
            }))?;
        }

        let label_of = |id: &str| {
            index
                .get(id)
                .and_then(|r| r.label)
                .expect("every synthetic record is labeled")
        };
        let cfg = FusionConfig::default();
        let mut image_rankings = Vec::new();
        let mut t2i_rankings = Vec::new();
        for rec in index.records() {
            let probe = QuerySlide {
                id: Some(rec.id.clone()),
                mosaic: rec.mosaic.clone(),
                semantic: rec.semantic.clone(),
            };
            let hits = lib(query_image(&index, &probe, &cfg))?;
            image_rankings.push(LabeledRanking {
                query_label: rec.label.expect("labeled"),
                retrieved_labels: hits.iter().map(|h| label_of(&h.candidate_id)).collect(),
            });
            let text = rec.text_semantic.as_ref().expect("indexed with reports");
            let hits = lib(query_text_to_image(&index, text, 5, Some(&rec.id)))?;
            t2i_rankings.push(LabeledRanking {
                query_label: rec.label.expect("labeled"),
                retrieved_labels: hits.iter().map(|h| label_of(&h.candidate_id)).collect(),
            });
        }
        let image = lib(accuracy_suite(&image_rankings))?;
        let t2i = lib(accuracy_suite(&t2i_rankings))?;
        ensure!(
            image.acc1 >= 0.90,
            "leave-one-out image acc@1 {:.4} < 0.90",
            image.acc1
        );
        ensure!(image.mv5 >= 0.90, "image mv@5 {:.4} < 0.90", image.mv5);
        ensure!(t2i.acc1 >= 0.90, "text-to-image acc@1 {:.4} < 0.90", t2i.acc1);
        let secs = start.elapsed().as_secs_f64();
        ensure!(secs < 600.0, "pipeline took {secs:.0}s, budget 10 minutes");
        Ok(())
    };
    check(8, what, run());
}

// ------------------------------------------- criterion 9: eval statistics

#[test]
fn criterion_09_evaluation_statistics_match_recount_oracles() {
    let _g = gate();
    let what = "kappa 5/9 and exact McNemar 0.21875; suites equal recounts on 1000 tables";
    let run = || -> Outcome {
        let table = lib(RaterTable::new(vec![vec![4, 0], vec![2, 2], vec![0, 4]]))?;
        match lib(fleiss_kappa(&table))? {
            Kappa::Value(k) => ensure!(
                (k - 5.0 / 9.0).abs() <= 1e-9,
                "kappa {k} differs from 5/9 by {:.3e}",
                (k - 5.0 / 9.0).abs()
            ),
            Kappa::Degenerate => return Err("worked kappa table came back degenerate".into()),
        }
        let p = mcnemar(5, 1);
        ensure!(
            (p - 0.21875).abs() <= 1e-9,
            "exact McNemar p {p} differs from 0.21875"
        );

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        // Majority-vote suites vs a literal recount.
        let mv_winner = |prefix: &[u16]| -> Option<u16> {
            let mut best: Option<u16> = None;
            let mut best_count = 0usize;
            for (i, &lab) in prefix.iter().enumerate() {
                if prefix[..i].contains(&lab) {
                    continue;
                }
                let count = prefix.iter().filter(|&&x| x == lab).count();
                if count > best_count {
                    best_count = count;
                    best = Some(lab);
                }
            }
            best
        };
        let mut rankings = Vec::new();
        for _ in 0..1000 {
            let len = rng.gen_range(5..10);
            rankings.push(LabeledRanking {
                query_label: rng.gen_range(0..5),
                retrieved_labels: (0..len).map(|_| rng.gen_range(0..5)).collect(),
            });
        }
        let suite = lib(accuracy_suite(&rankings))?;
        for (k, got) in [(1usize, suite.acc1), (3, suite.mv3), (5, suite.mv5)] {
            let hits = rankings
                .iter()
                .filter(|r| {
                    mv_winner(&r.retrieved_labels[..k.min(r.retrieved_labels.len())])
                        == Some(r.query_label)
                })
                .count();
            let want = hits as f64 / rankings.len() as f64;
            ensure!(got == want, "mv@{k} {got} != recount {want}");
        }

        // Panel accuracy and consistency vs recounts on random studies.
        for trial in 0..1000 {
            let n_subjects = rng.gen_range(3..=12);
            let n_raters = rng.gen_range(2..=6);
            let labels: Vec<Vec<u16>> = (0..n_subjects)
                .map(|_| (0..n_raters).map(|_| rng.gen_range(0..4)).collect())
                .collect();
            let truth: Vec<u16> = (0..n_subjects).map(|_| rng.gen_range(0..4)).collect();
            let threshold = rng.gen_range(1..=n_raters);
            let decisions: Vec<Vec<bool>> = labels
                .iter()
                .zip(&truth)
                .map(|(row, t)| row.iter().map(|l| l == t).collect())
                .collect();
            let got = lib(panel_mv_accuracy(&decisions, threshold))?;
            let hits = decisions
                .iter()
                .filter(|row| row.iter().filter(|&&d| d).count() >= threshold)
                .count();
            let want = hits as f64 / n_subjects as f64;
            ensure!(got == want, "trial {trial}: panel {got} != recount {want}");

            let dist = lib(consistency_distribution(&labels))?;
            for agreement in 0..=n_raters {
                let count = labels
                    .iter()
                    .filter(|row| {
                        let mut largest = 0;
                        for (i, lab) in row.iter().enumerate() {
                            if !row[..i].contains(lab) {
                                largest =
                                    largest.max(row.iter().filter(|x| *x == lab).count());
                            }
                        }
                        largest == agreement
                    })
                    .count();
                let want = count as f64 / n_subjects as f64;
                ensure!(
                    dist.at(agreement) == want,
                    "trial {trial}: consistency@{agreement} {} != recount {want}",
                    dist.at(agreement)
                );
            }
        }
        Ok(())
    };
    check(9, what, run());
}

// -------------------------------------------- criterion 10: round trip

#[test]
fn criterion_10_index_round_trip_and_corruption_rejection() {
    let _g = gate();
    let what = "500-record index round-trips byte-identically; corruption exits with code 2";
    let run = || -> Outcome {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(1010);
        let mut index = lib(RetrievalIndex::new(16, 768))?;
        for name in ["alpha", "beta", "gamma"] {
            lib(index.add_label(name))?;
        }
        for i in 0..500 {
            lib(index.push(SlideRecord {
                id: format!("r{i:03}"),
                label: if i % 7 == 0 { None } else { Some(i as u16 % 3) },
                mosaic: rand_code(&mut rng, 16, 768),
                semantic: rand_unit(&mut rng, 768),
                text_semantic: (i % 3 == 0).then(|| rand_unit(&mut rng, 768)),
            }))?;
        }
        let first = dir.path().join("first.psix");
        let second = dir.path().join("second.psix");
        lib(save_index(&index, &first))?;
        let loaded = lib(load_index(&first))?;
        lib(save_index(&loaded, &second))?;
        let bytes_first = std::fs::read(&first).map_err(|e| e.to_string())?;
        let bytes_second = std::fs::read(&second).map_err(|e| e.to_string())?;
        ensure!(
            bytes_first == bytes_second,
            "save -> load -> save changed {} of {} bytes",
            bytes_first
                .iter()
                .zip(&bytes_second)
                .filter(|(a, b)| a != b)
                .count(),
            bytes_first.len()
        );
        ensure!(loaded.records() == index.records(), "records changed across the round trip");

        // Corruption must be refused by the library (data error) and by the
        // binary (documented exit code 2).
        let exe = env!("CARGO_BIN_EXE_pathsearch");
        let expect_rejection = |bytes: &[u8], case: &str| -> Outcome {
            let bad = dir.path().join("bad.psix");
            std::fs::write(&bad, bytes).map_err(|e| e.to_string())?;
            match load_index(&bad) {
                Err(e) if e.is_data_error() => {}
                Err(e) => return Err(format!("{case}: wrong error class: {e}")),
                Ok(_) => return Err(format!("{case}: corrupted index loaded cleanly")),
            }
            let out = std::process::Command::new(exe)
                .args(["query", "--index"])
                .arg(&bad)
                .args(["--id", "r001"])
                .output()
                .map_err(|e| e.to_string())?;
            ensure!(
                out.status.code() == Some(2),
                "{case}: exit code {:?}, expected 2",
                out.status.code()
            );
            Ok(())
        };
        let mut flipped = bytes_first.clone();
        flipped[0] ^= 0xFF;
        expect_rejection(&flipped, "flipped magic")?;
        for cut in [3usize, 12, 24, bytes_first.len() / 2, bytes_first.len() - 1] {
            expect_rejection(&bytes_first[..cut], &format!("truncation at {cut}"))?;
        }
        Ok(())
    };
    check(10, what, run());
}

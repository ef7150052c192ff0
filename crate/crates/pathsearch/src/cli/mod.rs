//! Command-line surface: corpus synthesis, embedding ingest, training,
//! index construction, retrieval, evaluation, and the complexity benchmark.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
//! failure. Every subcommand is idempotent on read-only inputs.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{
    baseline_ops_per_candidate, capacity_under_budget, measure_scaling,
    pathsearch_ops_per_candidate, plot_data_csv, scaling_csv, CostModelParams, ScalingConfig,
};
use crate::core::{binarize, RetrievalResult, SemanticVector, SlideRecord};
use crate::encoder::{
    encode_slide, load_model, read_patch_file, read_pemb, save_model, text_semantic, write_pemb,
    HashTextEmbedder, TextEmbedder,
};
use crate::eval::{
    accuracy_suite, consistency_distribution, fleiss_kappa, mcnemar, panel_mv_accuracy,
    read_rankings_csv, read_rater_study_csv, write_rankings_csv, AccuracySuite, Kappa,
    LabeledRanking, RankingRecord, RaterTable,
};
use crate::index::{
    load_index, query_image, query_image_to_text, query_text_to_image, query_text_to_text,
    save_index, FusionConfig, QuerySlide, RetrievalIndex, SemanticHit, LABEL_NONE,
};
use crate::training::{
    parse_config_file, synth_dataset, train_with, write_trace_csv, EpochStats, PairedDataset,
    SynthParams, TrainConfig,
};
use crate::{Error, Result};
use manifest::{label_table, read_manifest, write_manifest, ManifestRow, MANIFEST_NAME};

/// Parse argv (program name included) and run one subcommand.
pub fn run(args: Vec<String>) -> i32 {
    let _ = env_logger::Builder::from_env(
        env_logger::Env::default().default_filter_or("warn"),
    )
    .format_timestamp(None)
    .try_init();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind::{DisplayHelp, DisplayVersion};
            let code = if matches!(e.kind(), DisplayHelp | DisplayVersion) { 0 } else { 1 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(message)) => {
            eprintln!("usage error: {message}");
            1
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            if e.is_data_error() {
                2
            } else {
                3
            }
        }
    }
}

/// Post-parse failures: flag combinations clap cannot express statically
/// (usage), or an error bubbled up from the library (data vs numeric).
enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

type CmdResult = std::result::Result<(), Failure>;

#[derive(Parser)]
#[command(
    name = "pathsearch",
    version,
    about = "Whole-slide retrieval: binarized mosaic codes fused with semantic embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled corpus (patch embeddings + manifest).
    Synth(SynthArgs),
    /// Convert a patch file (CSV or binary) into the binary patch format.
    Ingest(IngestArgs),
    /// Train an encoder on a corpus directory.
    Train(TrainArgs),
    /// Encode a corpus directory into a retrieval index.
    BuildIndex(BuildIndexArgs),
    /// Rank index records against an image or text probe.
    Query(QueryArgs),
    /// Accuracy suites, rater statistics, and paired-test p-values.
    Eval(EvalArgs),
    /// Complexity benchmark: counted distance ops and wall time vs corpus size.
    Bench(BenchArgs),
}

fn dispatch(command: Command) -> CmdResult {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Ingest(a) => cmd_ingest(a),
        Command::Train(a) => cmd_train(a),
        Command::BuildIndex(a) => cmd_build_index(a),
        Command::Query(a) => cmd_query(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

/// Re-raise file-shaped errors with the offending path in the message.
fn in_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        other => other,
    })
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Table,
    Csv,
    JsonLines,
}

// ---------------------------------------------------------------- synth

#[derive(Args)]
struct SynthArgs {
    /// Output directory for <id>.pemb files and the manifest.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 50)]
    per_class: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 16)]
    patches_low: usize,
    #[arg(long, default_value_t = 32)]
    patches_high: usize,
    /// Within-class patch noise around the class center.
    #[arg(long, default_value_t = 0.3)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    let params = SynthParams {
        classes: a.classes,
        slides_per_class: a.per_class,
        patches_low: a.patches_low,
        patches_high: a.patches_high,
        dim: a.dim,
        sigma: a.sigma,
        seed: a.seed,
    };
    let ds = synth_dataset(&params)?;
    fs::create_dir_all(&a.out)?;
    let mut rows = Vec::with_capacity(ds.ids.len());
    for (i, id) in ds.ids.iter().enumerate() {
        write_pemb(&a.out.join(format!("{id}.pemb")), &ds.data.slides[i])?;
        let label = ds.data.labels[i];
        rows.push(ManifestRow {
            id: id.clone(),
            label,
            class_name: ds.class_names[label as usize].clone(),
            report: ds.reports[i].clone(),
        });
    }
    write_manifest(&a.out.join(MANIFEST_NAME), &rows)?;
    println!(
        "wrote {} slides across {} classes to {}",
        rows.len(),
        a.classes,
        a.out.display()
    );
    Ok(())
}

// --------------------------------------------------------------- ingest

#[derive(Args)]
struct IngestArgs {
    /// Patch embeddings: binary patch file or CSV (one patch per line).
    #[arg(long)]
    input: PathBuf,
    /// Destination binary patch file.
    #[arg(long)]
    output: PathBuf,
}

fn cmd_ingest(a: IngestArgs) -> CmdResult {
    let patches = in_path(&a.input, read_patch_file(&a.input))?;
    write_pemb(&a.output, &patches)?;
    println!(
        "{}: {} patches x {} dims -> {}",
        a.input.display(),
        patches.n_patches(),
        patches.dim(),
        a.output.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Args)]
struct TrainArgs {
    /// Corpus directory (manifest.csv + <id>.pemb files).
    #[arg(long)]
    data: PathBuf,
    /// Where to write the trained model.
    #[arg(long)]
    out: PathBuf,
    /// key=value training config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the configured epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the per-epoch loss trace as CSV (written even on divergence).
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let mut config = match &a.config {
        Some(p) => in_path(p, parse_config_file(p))?,
        None => TrainConfig::default(),
    };
    if let Some(epochs) = a.epochs {
        config.epochs = epochs;
    }
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let corpus = load_corpus(&a.data)?;
    let mut trace: Vec<EpochStats> = Vec::with_capacity(config.epochs);
    let outcome = train_with(&config, &corpus.paired, |s| trace.push(*s));
    if let Some(p) = &a.trace {
        write_trace_csv(p, &trace)?;
    }
    let outcome = outcome?;
    save_model(&a.out, &outcome.model)?;
    println!(
        "trained {} epochs on {} slides; best epoch {} (val loss {:.6}); model -> {}",
        trace.len(),
        corpus.paired.len(),
        outcome.best_epoch,
        outcome.best_val_loss,
        a.out.display()
    );
    Ok(())
}

struct Corpus {
    paired: PairedDataset,
    rows: Vec<ManifestRow>,
}

/// Load a corpus directory: manifest rows, their patch files, and raw
/// report embeddings (hash embedder at the patch dimension).
fn load_corpus(dir: &Path) -> Result<Corpus> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let rows = in_path(&manifest_path, read_manifest(&manifest_path))?;
    let mut slides = Vec::with_capacity(rows.len());
    for row in &rows {
        let p = dir.join(format!("{}.pemb", row.id));
        slides.push(in_path(&p, read_pemb(&p))?);
    }
    let embedder = HashTextEmbedder::new(slides[0].dim());
    let raw_texts = rows.iter().map(|r| embedder.embed(&r.report)).collect();
    let labels = rows.iter().map(|r| r.label).collect();
    Ok(Corpus {
        paired: PairedDataset {
            slides,
            raw_texts,
            labels,
        },
        rows,
    })
}

// ---------------------------------------------------------- build-index

#[derive(Args)]
struct BuildIndexArgs {
    /// Corpus directory (manifest.csv + <id>.pemb files).
    #[arg(long)]
    data: PathBuf,
    /// Trained encoder model.
    #[arg(long)]
    model: PathBuf,
    /// Destination index file.
    #[arg(long)]
    out: PathBuf,
    /// Bytes per stored semantic component (4 or 8).
    #[arg(long, default_value_t = 8)]
    float_width: u8,
    /// Skip report embeddings (image-only index).
    #[arg(long)]
    no_text: bool,
}

fn cmd_build_index(a: BuildIndexArgs) -> CmdResult {
    let model = in_path(&a.model, load_model(&a.model))?;
    model.validate()?;
    let corpus = load_corpus(&a.data)?;
    let table = label_table(&corpus.rows)?;
    let mut index = RetrievalIndex::with_float_width(model.m(), model.dim(), a.float_width)?;
    for name in &table {
        index.add_label(name)?;
    }
    for (i, row) in corpus.rows.iter().enumerate() {
        let (mosaics, semantic) = encode_slide(&corpus.paired.slides[i], &model)?;
        let text = if a.no_text {
            None
        } else {
            Some(text_semantic(&corpus.paired.raw_texts[i], &model)?)
        };
        index.push(SlideRecord {
            id: row.id.clone(),
            label: Some(row.label),
            mosaic: binarize(&mosaics),
            semantic,
            text_semantic: text,
        })?;
    }
    save_index(&index, &a.out)?;
    println!(
        "indexed {} slides (m={}, dim={}, float width {}) -> {}",
        index.len(),
        index.m(),
        index.dim(),
        index.float_width(),
        a.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- query

#[derive(Args)]
#[command(group(
    clap::ArgGroup::new("probe").required(true).args(["id", "slide", "text"])
))]
struct QueryArgs {
    /// Index file to query.
    #[arg(long)]
    index: PathBuf,
    /// Use an indexed record as the probe (leave-one-out style).
    #[arg(long)]
    id: Option<String>,
    /// Encode a patch file as the probe; needs --model.
    #[arg(long, requires = "model")]
    slide: Option<PathBuf>,
    /// Embed report text as the probe; needs --model.
    #[arg(long, requires = "model")]
    text: Option<String>,
    /// Encoder model for --slide / --text probes.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Task::Image)]
    task: Task,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    /// Semantic weight in the fused distance.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Fuse raw distances instead of per-family standardized ones.
    #[arg(long)]
    no_normalize: bool,
    /// Keep only the best N mosaic candidates before the semantic stage.
    #[arg(long)]
    shortlist: Option<usize>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
    format: OutputFormat,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Task {
    /// Fused mosaic + semantic image retrieval.
    Image,
    /// Text probe against image semantics.
    T2i,
    /// Image probe against report semantics.
    I2t,
    /// Text probe against report semantics.
    T2t,
}

/// What the probe flags resolved to. `Record` keeps the source id so
/// retrieval can exclude the probe itself.
enum Probe {
    Record(SlideRecord),
    Slide {
        mosaic: crate::core::BinaryMosaicCode,
        semantic: SemanticVector,
    },
    Text(SemanticVector),
}

fn resolve_probe(a: &QueryArgs, index: &RetrievalIndex) -> CmdResult2<Probe> {
    if let Some(id) = &a.id {
        let rec = index.get(id).ok_or_else(|| Error::InvalidValue {
            key: "--id".into(),
            message: format!("{id:?} is not in the index"),
        })?;
        return Ok(Probe::Record(rec.clone()));
    }
    let model_path = a.model.as_ref().expect("clap enforces --model for --slide/--text");
    let model = in_path(model_path, load_model(model_path))?;
    model.validate()?;
    if let Some(slide) = &a.slide {
        let patches = in_path(slide, read_patch_file(slide))?;
        let (mosaics, semantic) = encode_slide(&patches, &model)?;
        return Ok(Probe::Slide {
            mosaic: binarize(&mosaics),
            semantic,
        });
    }
    let text = a.text.as_ref().expect("clap probe group");
    let embedder = HashTextEmbedder::new(model.dim());
    Ok(Probe::Text(text_semantic(&embedder.embed(text), &model)?))
}

type CmdResult2<T> = std::result::Result<T, Failure>;

fn cmd_query(a: QueryArgs) -> CmdResult {
    let index = in_path(&a.index, load_index(&a.index))?;
    let probe = resolve_probe(&a, &index)?;
    match a.task {
        Task::Image => {
            let query = match &probe {
                Probe::Record(rec) => QuerySlide {
                    id: Some(rec.id.clone()),
                    mosaic: rec.mosaic.clone(),
                    semantic: rec.semantic.clone(),
                },
                Probe::Slide { mosaic, semantic } => QuerySlide {
                    id: None,
                    mosaic: mosaic.clone(),
                    semantic: semantic.clone(),
                },
                Probe::Text(_) => {
                    return Err(Failure::Usage(
                        "--task image needs an image probe (--id or --slide)".into(),
                    ));
                }
            };
            let cfg = FusionConfig {
                beta: a.beta,
                normalize: !a.no_normalize,
                top_k: a.top_k,
                mosaic_shortlist: a.shortlist,
                ..FusionConfig::default()
            };
            let hits = query_image(&index, &query, &cfg)?;
            print_image_hits(&index, &hits, a.format);
        }
        Task::T2i | Task::T2t | Task::I2t => {
            let (vector, exclude) = semantic_probe(&probe, a.task)?;
            let exclude = exclude.as_deref();
            let hits = match a.task {
                Task::T2i => query_text_to_image(&index, &vector, a.top_k, exclude)?,
                Task::I2t => query_image_to_text(&index, &vector, a.top_k, exclude)?,
                Task::T2t => query_text_to_text(&index, &vector, a.top_k, exclude)?,
                Task::Image => unreachable!(),
            };
            print_semantic_hits(&index, &hits, a.format);
        }
    }
    Ok(())
}

/// Pick the probe-side semantic vector for a pure-semantic task.
fn semantic_probe(probe: &Probe, task: Task) -> CmdResult2<(SemanticVector, Option<String>)> {
    let want_text_side = matches!(task, Task::T2i | Task::T2t);
    match probe {
        Probe::Text(v) => Ok((v.clone(), None)),
        Probe::Record(rec) if want_text_side => match &rec.text_semantic {
            Some(v) => Ok((v.clone(), Some(rec.id.clone()))),
            None => Err(Failure::Lib(Error::InvalidValue {
                key: "--id".into(),
                message: format!("record {:?} has no report embedding", rec.id),
            })),
        },
        Probe::Record(rec) => Ok((rec.semantic.clone(), Some(rec.id.clone()))),
        Probe::Slide { semantic, .. } if !want_text_side => Ok((semantic.clone(), None)),
        Probe::Slide { .. } => Err(Failure::Usage(
            "this task needs a text probe (--text, or --id of a record with a report)".into(),
        )),
    }
}

fn class_of<'a>(index: &'a RetrievalIndex, id: &str) -> Option<&'a str> {
    index
        .get(id)
        .and_then(|r| r.label)
        .and_then(|l| index.label_name(l))
}

fn print_image_hits(index: &RetrievalIndex, hits: &[RetrievalResult], format: OutputFormat) {
    match format {
        OutputFormat::Table => {
            let idw = col_width("candidate", hits.iter().map(|h| h.candidate_id.len()));
            let lw = col_width(
                "label",
                hits.iter().map(|h| class_of(index, &h.candidate_id).unwrap_or("-").len()),
            );
            println!(
                "{:>4}  {:<idw$}  {:<lw$}  {:>14}  {:>14}  {:>14}",
                "rank", "candidate", "label", "fused", "mosaic", "semantic"
            );
            for h in hits {
                println!(
                    "{:>4}  {:<idw$}  {:<lw$}  {:>14.6}  {:>14.6}  {:>14.6}",
                    h.rank,
                    h.candidate_id,
                    class_of(index, &h.candidate_id).unwrap_or("-"),
                    h.fused_distance,
                    h.mosaic_distance,
                    h.semantic_distance
                );
            }
        }
        OutputFormat::Csv => {
            println!("rank,candidate_id,label,fused_distance,mosaic_distance,semantic_distance");
            for h in hits {
                println!(
                    "{},{},{},{},{},{}",
                    h.rank,
                    h.candidate_id,
                    class_of(index, &h.candidate_id).unwrap_or(""),
                    h.fused_distance,
                    h.mosaic_distance,
                    h.semantic_distance
                );
            }
        }
        OutputFormat::JsonLines => {
            for h in hits {
                println!(
                    "{{\"rank\":{},\"candidate_id\":{},\"label\":{},\"fused_distance\":{},\"mosaic_distance\":{},\"semantic_distance\":{}}}",
                    h.rank,
                    json_string(&h.candidate_id),
                    json_opt_string(class_of(index, &h.candidate_id)),
                    h.fused_distance,
                    h.mosaic_distance,
                    h.semantic_distance
                );
            }
        }
    }
}

fn print_semantic_hits(index: &RetrievalIndex, hits: &[SemanticHit], format: OutputFormat) {
    match format {
        OutputFormat::Table => {
            let idw = col_width("candidate", hits.iter().map(|h| h.candidate_id.len()));
            let lw = col_width(
                "label",
                hits.iter().map(|h| class_of(index, &h.candidate_id).unwrap_or("-").len()),
            );
            println!("{:>4}  {:<idw$}  {:<lw$}  {:>14}", "rank", "candidate", "label", "distance");
            for h in hits {
                println!(
                    "{:>4}  {:<idw$}  {:<lw$}  {:>14.6}",
                    h.rank,
                    h.candidate_id,
                    class_of(index, &h.candidate_id).unwrap_or("-"),
                    h.distance
                );
            }
        }
        OutputFormat::Csv => {
            println!("rank,candidate_id,label,distance");
            for h in hits {
                println!(
                    "{},{},{},{}",
                    h.rank,
                    h.candidate_id,
                    class_of(index, &h.candidate_id).unwrap_or(""),
                    h.distance
                );
            }
        }
        OutputFormat::JsonLines => {
            for h in hits {
                println!(
                    "{{\"rank\":{},\"candidate_id\":{},\"label\":{},\"distance\":{}}}",
                    h.rank,
                    json_string(&h.candidate_id),
                    json_opt_string(class_of(index, &h.candidate_id)),
                    h.distance
                );
            }
        }
    }
}

fn col_width(header: &str, widths: impl Iterator<Item = usize>) -> usize {
    widths.chain([header.len()]).max().unwrap_or(header.len())
}

fn json_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                out.push_str(&format!("\\u{:04x}", c as u32));
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn json_opt_string(s: Option<&str>) -> String {
    s.map_or_else(|| "null".to_string(), json_string)
}

// ----------------------------------------------------------------- eval

#[derive(Args)]
#[command(group(
    clap::ArgGroup::new("source").required(true).args(["index", "rankings", "rater_csv", "mcnemar"])
))]
struct EvalArgs {
    /// Leave-one-out retrieval accuracy over an index.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Score a previously written rankings CSV.
    #[arg(long)]
    rankings: Option<PathBuf>,
    /// Rater-study CSV: agreement, panel accuracy, consistency.
    #[arg(long)]
    rater_csv: Option<PathBuf>,
    /// Discordant-pair counts (first-method-only errors, second-method-only errors).
    #[arg(long, num_args = 2, value_names = ["B", "C"])]
    mcnemar: Option<Vec<u64>>,
    /// image: fused leave-one-out; t2i: each record's report against image semantics.
    #[arg(long, value_enum, default_value_t = EvalTask::Image)]
    task: EvalTask,
    /// Ranking depth per query.
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    /// Semantic weight in the fused distance.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Fuse raw distances instead of per-family standardized ones.
    #[arg(long)]
    no_normalize: bool,
    /// Keep only the best N mosaic candidates before the semantic stage.
    #[arg(long)]
    shortlist: Option<usize>,
    /// Panel vote threshold (default: strict majority of the raters).
    #[arg(long)]
    panel_threshold: Option<usize>,
    /// Also write the per-query rankings CSV here.
    #[arg(long)]
    rankings_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
    format: OutputFormat,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalTask {
    Image,
    T2i,
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    if let Some(bc) = &a.mcnemar {
        let (b, c) = (bc[0], bc[1]);
        let p = mcnemar(b, c);
        match a.format {
            OutputFormat::Table => println!("mcnemar  b={b} c={c}  p={p:.6}"),
            OutputFormat::Csv => print!("metric,value\nmcnemar_p,{p}\n"),
            OutputFormat::JsonLines => println!("{{\"b\":{b},\"c\":{c},\"p\":{p}}}"),
        }
        return Ok(());
    }
    if let Some(path) = &a.rater_csv {
        return eval_rater_study(path, &a);
    }
    let records: Vec<RankingRecord> = if let Some(path) = &a.rankings {
        in_path(path, read_rankings_csv(path))?
    } else {
        let path = a.index.as_ref().expect("clap source group");
        let index = in_path(path, load_index(path))?;
        rank_all(&index, &a)?
    };
    if let Some(out) = &a.rankings_out {
        write_rankings_csv(out, &records)?;
    }
    let rankings: Vec<LabeledRanking> = records.into_iter().map(|r| r.ranking).collect();
    let suite = accuracy_suite(&rankings)?;
    print_suite(&suite, a.format);
    Ok(())
}

/// Leave-one-out rankings for every labeled record. Candidates without a
/// label rank as a sentinel that never matches a query label.
fn rank_all(index: &RetrievalIndex, a: &EvalArgs) -> Result<Vec<RankingRecord>> {
    let cfg = FusionConfig {
        beta: a.beta,
        normalize: !a.no_normalize,
        top_k: a.top_k,
        mosaic_shortlist: a.shortlist,
        ..FusionConfig::default()
    };
    let label_of = |id: &str| -> u16 {
        index.get(id).and_then(|r| r.label).unwrap_or(LABEL_NONE)
    };
    let mut out = Vec::with_capacity(index.len());
    let mut skipped = 0usize;
    for rec in index.records() {
        let Some(query_label) = rec.label else {
            skipped += 1;
            continue;
        };
        let retrieved_labels: Vec<u16> = match a.task {
            EvalTask::Image => {
                let query = QuerySlide {
                    id: Some(rec.id.clone()),
                    mosaic: rec.mosaic.clone(),
                    semantic: rec.semantic.clone(),
                };
                query_image(index, &query, &cfg)?
                    .iter()
                    .map(|h| label_of(&h.candidate_id))
                    .collect()
            }
            EvalTask::T2i => {
                let Some(text) = &rec.text_semantic else {
                    skipped += 1;
                    continue;
                };
                query_text_to_image(index, text, a.top_k, Some(&rec.id))?
                    .iter()
                    .map(|h| label_of(&h.candidate_id))
                    .collect()
            }
        };
        out.push(RankingRecord {
            query_id: rec.id.clone(),
            ranking: LabeledRanking {
                query_label,
                retrieved_labels,
            },
        });
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} records lacking a label or report embedding");
    }
    if out.is_empty() {
        return Err(Error::Empty("evaluable records"));
    }
    Ok(out)
}

fn print_suite(suite: &AccuracySuite, format: OutputFormat) {
    match format {
        OutputFormat::Table => println!("{suite}"),
        OutputFormat::Csv => print!("{}", suite.csv_string()),
        OutputFormat::JsonLines => println!(
            "{{\"acc1\":{},\"mv3\":{},\"mv5\":{},\"n_queries\":{}}}",
            suite.acc1, suite.mv3, suite.mv5, suite.n_queries
        ),
    }
}

fn eval_rater_study(path: &Path, a: &EvalArgs) -> CmdResult {
    let study = in_path(path, read_rater_study_csv(path))?;
    let table = RaterTable::from_labels(&study.labels)?;
    let kappa = fleiss_kappa(&table)?;
    let n_raters = study.n_raters();
    let threshold = a.panel_threshold.unwrap_or(n_raters / 2 + 1);
    let panel = panel_mv_accuracy(&study.correctness(), threshold)?;
    let dist = consistency_distribution(&study.labels)?;
    match a.format {
        OutputFormat::Table => {
            match kappa {
                Kappa::Value(k) => println!("fleiss_kappa    {k:.6}"),
                Kappa::Degenerate => println!("fleiss_kappa    degenerate (no category variation)"),
            }
            println!("panel_accuracy  {panel:.6}   (threshold {threshold} of {n_raters} raters)");
            let levels: Vec<String> = (2..=n_raters)
                .rev()
                .map(|k| format!("{k}/{n_raters}: {:.4}", dist.at(k)))
                .collect();
            println!("consistency     {}  other: {:.4}", levels.join("  "), dist.other());
        }
        OutputFormat::Csv => {
            print!("metric,value\n");
            match kappa {
                Kappa::Value(k) => print!("fleiss_kappa,{k}\n"),
                Kappa::Degenerate => print!("fleiss_kappa,degenerate\n"),
            }
            print!("panel_accuracy,{panel}\n");
            for k in (2..=n_raters).rev() {
                print!("consistency@{k},{}\n", dist.at(k));
            }
            print!("consistency_other,{}\n", dist.other());
        }
        OutputFormat::JsonLines => {
            let kappa_json = match kappa {
                Kappa::Value(k) => format!("{k}"),
                Kappa::Degenerate => "null".into(),
            };
            let levels: Vec<String> = (2..=n_raters)
                .rev()
                .map(|k| format!("\"{k}\":{}", dist.at(k)))
                .collect();
            println!(
                "{{\"fleiss_kappa\":{kappa_json},\"panel_accuracy\":{panel},\"panel_threshold\":{threshold},\"consistency\":{{{},\"other\":{}}}}}",
                levels.join(","),
                dist.other()
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- bench

#[derive(Args)]
struct BenchArgs {
    /// Candidate-set sizes, ascending (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "1000,2000,5000,10000,20000")]
    sizes: Vec<usize>,
    /// Mean patches per slide for the baseline cost model.
    #[arg(long, default_value_t = 1000)]
    p_bar: usize,
    /// Baseline patch sampling fraction.
    #[arg(long, default_value_t = 0.05)]
    fraction: f64,
    /// Mosaics per slide.
    #[arg(long, default_value_t = 16)]
    m: usize,
    /// Embedding dimension.
    #[arg(long, default_value_t = 768)]
    dim: usize,
    /// Timed repetitions per point (median reported).
    #[arg(long, default_value_t = 9)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the scaling CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write log-log plot data CSV here.
    #[arg(long)]
    plot_data: Option<PathBuf>,
    /// Skip measurement; print candidate capacity under this per-query op budget.
    #[arg(long)]
    budget: Option<u64>,
    /// Memory cap for the synthetic stores.
    #[arg(long, default_value_t = 1 << 30)]
    max_bytes: usize,
}

fn cmd_bench(a: BenchArgs) -> CmdResult {
    if let Some(budget) = a.budget {
        let params = CostModelParams {
            p_bar: a.p_bar,
            f: a.fraction,
            m: a.m,
            dim: a.dim,
            budget,
        };
        let capacity = capacity_under_budget(&params)?;
        println!("per-query budget: {budget} distance ops");
        println!(
            "  pathsearch  {:>12} candidates  ({} ops each)",
            capacity.pathsearch,
            pathsearch_ops_per_candidate(a.m, a.dim)
        );
        println!(
            "  baseline    {:>12} candidates  ({} ops each)",
            capacity.baseline,
            baseline_ops_per_candidate(a.p_bar, a.p_bar, a.fraction)
        );
        return Ok(());
    }
    let cfg = ScalingConfig {
        sizes: a.sizes,
        p_bar: a.p_bar,
        f: a.fraction,
        m: a.m,
        dim: a.dim,
        repetitions: a.reps,
        seed: a.seed,
        max_bytes: a.max_bytes,
    };
    let report = measure_scaling(&cfg)?;
    for note in &report.notes {
        eprintln!("note: {note}");
    }
    let csv = scaling_csv(&report.rows);
    match &a.out {
        Some(p) => {
            fs::write(p, &csv)?;
            println!("wrote {} scaling rows -> {}", report.rows.len(), p.display());
        }
        None => print!("{csv}"),
    }
    if let Some(p) = &a.plot_data {
        fs::write(p, plot_data_csv(&report.rows))?;
    }
    Ok(())
}

// ---------------------------------------------------------------- tests

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn arg_definitions_are_internally_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn json_strings_escape_control_and_quote_characters() {
        assert_eq!(json_string("plain"), "\"plain\"");
        assert_eq!(json_string("a\"b\\c"), "\"a\\\"b\\\\c\"");
        assert_eq!(json_string("line\nbreak\ttab"), "\"line\\nbreak\\ttab\"");
        assert_eq!(json_string("\u{1}"), "\"\\u0001\"");
        assert_eq!(json_opt_string(None), "null");
        assert_eq!(json_opt_string(Some("x")), "\"x\"");
    }

    #[test]
    fn probe_group_rejects_conflicts_and_requires_a_source() {
        let parse = |args: &[&str]| {
            Cli::try_parse_from(["pathsearch"].iter().copied().chain(args.iter().copied()))
        };
        assert!(parse(&["query", "--index", "i.psix"]).is_err(), "no probe");
        assert!(
            parse(&["query", "--index", "i.psix", "--id", "a", "--text", "b"]).is_err(),
            "two probes"
        );
        assert!(
            parse(&["query", "--index", "i.psix", "--slide", "s.pemb"]).is_err(),
            "--slide without --model"
        );
        assert!(parse(&["query", "--index", "i.psix", "--id", "a"]).is_ok());
        assert!(parse(&["eval"]).is_err(), "eval needs a source");
        assert!(parse(&["eval", "--mcnemar", "5", "1"]).is_ok());
        assert!(parse(&["eval", "--mcnemar", "5"]).is_err(), "mcnemar needs two counts");
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use rgcl::data::{ingest, split, Corpus, DatasetSplit, FieldMap, RatingScale};
use rgcl::dataset::{Dataset, Part, EMBEDDINGS_FILE, INTERACTIONS_FILE, SPLIT_FILE};
use rgcl::embed::{build_embedding_table, manifest_path, EmbedMode, ExportManifest};
use rgcl::eval::{
    ablation_csv, ablation_runs_csv, evaluate_params, run_once, sparsity_report, sweep, sweep_csv, AblationRow,
    MetricsReport, RunMetrics, VariantSpec,
};
use rgcl::synthetic::{generate, SyntheticConfig};
use rgcl::train::{Checkpoint, TrainConfig};

#[derive(Parser)]
#[command(name = "rgcl", version, about = "Review-aware graph contrastive recommender")]
struct Cli {
    /// Overrides the seed of the split (prepare) or of training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for multi-run commands (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Omit wall-clock fields so that output files are reproducible byte for byte.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest JSON lines into the canonical interaction file plus a split.
    Prepare(PrepareArgs),
    /// Build the whitened review embedding table.
    Embed(EmbedArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Mean squared error of a checkpoint on one part of the split.
    Evaluate(EvalArgs),
    /// Test error per user-sparsity group.
    SparsityReport(SparsityArgs),
    /// Train a set of variants under several seeds.
    Ablate(AblateArgs),
    /// Grid over the contrastive loss weights.
    Sweep(SweepArgs),
    /// Write a planted-factor dataset directory.
    Synth(SynthArgs),
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    min_core: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.1,0.1")]
    fractions: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    rating_min: i32,
    #[arg(long, default_value_t = 5)]
    rating_max: i32,
    #[arg(long, default_value = "reviewerID")]
    user_field: String,
    #[arg(long, default_value = "asin")]
    item_field: String,
    #[arg(long, default_value = "overall")]
    rating_field: String,
    #[arg(long, default_value = "reviewText")]
    review_field: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Hashed,
    Import,
}

#[derive(Args)]
struct EmbedArgs {
    /// Prepared data directory; the table is written into it.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Hashed)]
    mode: Mode,
    #[arg(long, default_value_t = 768)]
    raw_dim: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Raw embedding file from the external encoder (import mode).
    #[arg(long)]
    import: Option<PathBuf>,
    /// Manifest sidecar; defaults to `<import>.manifest.json`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// `key = value` file; missing keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Train,
    Valid,
    Test,
}

impl From<Which> for Part {
    fn from(w: Which) -> Self {
        match w {
            Which::Train => Part::Train,
            Which::Valid => Part::Valid,
            Which::Test => Part::Test,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = Which::Test)]
    which: Which,
    /// Clamp predictions to the rating range (defaults to the checkpoint's setting).
    #[arg(long)]
    clamp: Option<bool>,
}

#[derive(Args)]
struct SparsityArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Also write the groups as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated variant names (default: the full matrix).
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8,1.0,2.0")]
    alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8,1.0")]
    betas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    users: usize,
    #[arg(long, default_value_t = 150)]
    items: usize,
    #[arg(long, default_value_t = 30)]
    ratings_per_user: usize,
    /// Whitened review dimension; must match the training `dim`.
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 96)]
    raw_dim: usize,
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::read(p).with_context(|| format!("reading config {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    Dataset::load(dir).with_context(|| format!("loading prepared data from {}", dir.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn prepare(args: PrepareArgs, seed: u64) -> Result<()> {
    let fields = FieldMap {
        user: args.user_field,
        item: args.item_field,
        rating: args.rating_field,
        review: args.review_field,
    };
    let scale = RatingScale::new(args.rating_min, args.rating_max)?;
    let (corpus, ids) = ingest(&args.input, &fields, args.min_core, scale)?;
    let fractions: [f64; 3] = args
        .fractions
        .try_into()
        .map_err(|_| anyhow::anyhow!("--fractions needs exactly three values"))?;
    let split = split(corpus.num_edges(), seed, fractions)?;
    fs::create_dir_all(&args.out)?;
    corpus.write(&args.out.join(INTERACTIONS_FILE))?;
    split.write(&args.out.join(SPLIT_FILE))?;
    ids.write(&args.out)?;
    log::info!(
        "{} users, {} items, {} interactions -> {}",
        corpus.num_users,
        corpus.num_items,
        corpus.num_edges(),
        args.out.display()
    );
    Ok(())
}

fn embed(args: EmbedArgs) -> Result<()> {
    let canonical = args.data.join(INTERACTIONS_FILE);
    let corpus = Corpus::read(&canonical)?;
    let split = DatasetSplit::read(&args.data.join(SPLIT_FILE))?;
    let mode = match args.mode {
        Mode::Hashed => EmbedMode::Hashed { raw_dim: args.raw_dim },
        Mode::Import => {
            let path = args.import.context("--import is required in import mode")?;
            let manifest = args.manifest.unwrap_or_else(|| manifest_path(&path));
            if manifest.exists() {
                let bytes = fs::read(&canonical)?;
                ExportManifest::read(&manifest)?.validate(&bytes, corpus.num_edges())?;
                log::info!("manifest {} validated", manifest.display());
            } else {
                log::warn!("no manifest at {}; skipping checksum validation", manifest.display());
            }
            EmbedMode::Import { path }
        }
    };
    let (table, transform) = build_embedding_table(&corpus, &split, &mode, args.dim)?;
    table.write(&args.data.join(EMBEDDINGS_FILE))?;
    log::info!(
        "{} x {} review table (raw dim {}, whitened on {} training rows)",
        table.len(),
        table.dim(),
        transform.raw_dim(),
        transform.fitted_on.len()
    );
    Ok(())
}

fn single_report(cfg: &TrainConfig, dataset: &Dataset, out: &Path, deterministic: bool) -> Result<MetricsReport> {
    let start = Instant::now();
    let (outcome, run, groups) = run_once(dataset, cfg)?;
    let runtime = (!deterministic).then(|| start.elapsed().as_secs_f64());
    fs::create_dir_all(out)?;
    outcome.checkpoint(cfg, dataset).write(&out.join("checkpoint.rgck"))?;
    write(&out.join("trace.csv"), outcome.trace_csv())?;
    write(&out.join("config.txt"), cfg.to_config_string())?;
    let report = MetricsReport::aggregate(cfg, vec![run], &groups, runtime);
    write(&out.join("metrics.json"), report.to_json())?;
    Ok(report)
}

fn train_cmd(args: TrainArgs, seed: Option<u64>, deterministic: bool) -> Result<()> {
    let cfg = load_config(args.config.as_deref(), seed)?;
    let dataset = load_dataset(&args.data)?;
    let report = single_report(&cfg, &dataset, &args.out, deterministic)?;
    println!("{}", report.to_json().trim_end());
    Ok(())
}

fn evaluate_cmd(args: EvalArgs) -> Result<()> {
    let ck = Checkpoint::read(&args.checkpoint)?;
    let dataset = load_dataset(&args.data)?;
    let clamp = args.clamp.unwrap_or(ck.config.clamp_eval);
    let part = Part::from(args.which);
    let r = evaluate_params(&ck.params, &dataset, part, clamp)?;
    let json = serde_json::json!({
        "which": part.as_str(),
        "mse": r.mse,
        "count": r.count,
        "cold_count": r.cold_count,
        "clamp": clamp,
    });
    println!("{}", serde_json::to_string_pretty(&json)?);
    Ok(())
}

fn sparsity_cmd(args: SparsityArgs) -> Result<()> {
    let ck = Checkpoint::read(&args.checkpoint)?;
    let dataset = load_dataset(&args.data)?;
    let report = sparsity_report(&ck.params, &dataset, ck.config.clamp_eval)?;
    if let Some(path) = &args.csv {
        write(path, report.to_csv())?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn ablate_cmd(args: AblateArgs, seed: Option<u64>, deterministic: bool) -> Result<()> {
    let base = load_config(args.config.as_deref(), seed)?;
    let dataset = load_dataset(&args.data)?;
    let variants = if args.variants.is_empty() {
        VariantSpec::default_set()
    } else {
        args.variants.iter().map(|v| VariantSpec::new(v)).collect::<rgcl::Result<_>>()?
    };
    if args.seeds.is_empty() {
        bail!("--seeds must not be empty");
    }
    let jobs: Vec<(usize, TrainConfig)> = variants
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let cfg = v.apply(&base)?;
            Ok(args.seeds.iter().map(move |&s| (k, TrainConfig { seed: s, ..cfg.clone() })).collect::<Vec<_>>())
        })
        .collect::<rgcl::Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    // every (variant, seed) run writes its own directory
    let results: Vec<(usize, RunMetrics, rgcl::eval::SparsityReport, f64)> = jobs
        .par_iter()
        .map(|(k, cfg)| {
            let start = Instant::now();
            let dir = args.out.join(&variants[*k].name).join(format!("seed{}", cfg.seed));
            let (outcome, run, groups) = run_once(&dataset, cfg)?;
            let secs = start.elapsed().as_secs_f64();
            fs::create_dir_all(&dir)?;
            outcome.checkpoint(cfg, &dataset).write(&dir.join("checkpoint.rgck"))?;
            write(&dir.join("trace.csv"), outcome.trace_csv())?;
            let single = MetricsReport::aggregate(cfg, vec![run.clone()], &groups, (!deterministic).then_some(secs));
            write(&dir.join("metrics.json"), single.to_json())?;
            Ok((*k, run, groups, secs))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (k, v) in variants.iter().enumerate() {
        let mine: Vec<_> = results.iter().filter(|r| r.0 == k).collect();
        let runtime = (!deterministic).then(|| mine.iter().map(|r| r.3).sum());
        let report = MetricsReport::aggregate(&v.apply(&base)?, mine.iter().map(|r| r.1.clone()).collect(), &mine[0].2, runtime);
        write(&args.out.join(&v.name).join("metrics.json"), report.to_json())?;
        rows.push(AblationRow {
            variant: v.name.clone(),
            report,
        });
    }
    write(&args.out.join("ablation.csv"), ablation_csv(&rows))?;
    write(&args.out.join("runs.csv"), ablation_runs_csv(&rows))?;
    print!("{}", ablation_csv(&rows));
    Ok(())
}

fn sweep_cmd(args: SweepArgs, seed: Option<u64>) -> Result<()> {
    let base = load_config(args.config.as_deref(), seed)?;
    let dataset = load_dataset(&args.data)?;
    let points = sweep(&dataset, &base, &args.alphas, &args.betas, &args.seeds)?;
    let csv = sweep_csv(&points);
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write(&args.out, &csv)?;
    print!("{csv}");
    Ok(())
}

fn synth_cmd(args: SynthArgs, seed: u64) -> Result<()> {
    let cfg = SyntheticConfig {
        num_users: args.users,
        num_items: args.items,
        ratings_per_user: args.ratings_per_user,
        raw_dim: args.raw_dim,
        seed,
        ..SyntheticConfig::default()
    };
    let data = generate(&cfg)?;
    let split = split(data.corpus.num_edges(), seed, rgcl::data::DEFAULT_FRACTIONS)?;
    fs::create_dir_all(&args.out)?;
    data.corpus.write(&args.out.join(INTERACTIONS_FILE))?;
    split.write(&args.out.join(SPLIT_FILE))?;
    // the raw reviews stand in for an encoder export; whiten them like one
    let raw = args.out.join("raw_reviews.rgeb");
    rgcl::embed::EmbeddingFile {
        rows: data.raw_reviews.mapv(|v| v as f32),
    }
    .write(&raw)?;
    let (table, _) = build_embedding_table(&data.corpus, &split, &EmbedMode::Import { path: raw }, args.dim)?;
    table.write(&args.out.join(EMBEDDINGS_FILE))?;
    log::info!("synthetic dataset with {} interactions -> {}", data.corpus.num_edges(), args.out.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::Prepare(a) => prepare(a, seed.unwrap_or(0)),
        Command::Embed(a) => embed(a),
        Command::Train(a) => train_cmd(a, seed, cli.deterministic),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::SparsityReport(a) => sparsity_cmd(a),
        Command::Ablate(a) => ablate_cmd(a, seed, cli.deterministic),
        Command::Sweep(a) => sweep_cmd(a, seed),
        Command::Synth(a) => synth_cmd(a, seed.unwrap_or(0)),
    }
}

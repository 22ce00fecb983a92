//! Command-line front end: train, evaluate, ablate, analyze, synth.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! abort, 5 checkpoint/dataset incompatibility.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use intergat::bundle::{self, BundleError, Checkpoint, RunConfig};
use intergat::community::{contrast_summary, contrast_table, partition_range, CommunityError};
use intergat::graphio::{self, DataError, Graph, MissingPolicy, SignalTensor, WindowedDataset};
use intergat::model::{Model, ModelError};
use intergat::spectra::{spectral_report, SpectraError};
use intergat::trainer::{self, MetricReport, TrainError};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;
const EXIT_COMPAT: u8 = 5;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error(transparent)]
    Community(#[from] CommunityError),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Bundle(BundleError::Config { .. })
            | CliError::Bundle(BundleError::ConfigParse(_))
            | CliError::Usage(_) => EXIT_CONFIG,
            CliError::Bundle(BundleError::Io { .. })
            | CliError::Bundle(BundleError::CheckpointParse(_))
            | CliError::Data(_) => EXIT_DATA,
            CliError::Bundle(BundleError::Version(_))
            | CliError::Bundle(BundleError::Incompatible { .. })
            | CliError::Bundle(BundleError::NoInteractions) => EXIT_COMPAT,
            CliError::Train(TrainError::EmptyTestSet) | CliError::Train(TrainError::NoTrainWindows) => EXIT_DATA,
            CliError::Train(_) | CliError::Model(_) | CliError::Spectra(_) | CliError::Community(_) => {
                EXIT_NUMERIC
            }
        }
    }
}

#[derive(Parser)]
#[command(name = "intergat", version, about = "Interaction-matrix graph forecasting toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML run configuration; flags below override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of independent seeds (seed, seed+1, ...).
    #[arg(long)]
    seeds: Option<usize>,
    /// Forecast horizon in steps.
    #[arg(long)]
    horizon: Option<usize>,
    /// Interaction variant tag.
    #[arg(long)]
    variant: Option<String>,
    /// Output directory for run artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reserved: worker thread count (runs are single-threaded).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a run directory.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on a dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Override the embedded dataset with CSV files.
        #[arg(long)]
        adjacency: Option<PathBuf>,
        #[arg(long)]
        speeds: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Where to write metrics.json (defaults next to the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every requested variant under one config/seed and tabulate.
    Ablate {
        #[command(flatten)]
        common: ConfigArgs,
        /// Comma-separated variant tags; defaults to all six.
        #[arg(long)]
        variants: Option<String>,
    },
    /// Spectral + community analysis of a trained checkpoint.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep this percentage of heatmap entries by magnitude.
        #[arg(long, default_value_t = 2.0)]
        top_percent: f64,
        /// Analyze raw symmetrized or processed row-stochastic matrices.
        #[arg(long, default_value = "processed")]
        matrix: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a planted-community dataset as CSV files.
    Synth {
        #[arg(long, default_value_t = 20)]
        nodes: usize,
        #[arg(long, default_value_t = 4)]
        communities: usize,
        #[arg(long, default_value_t = 400)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn merge_config(args: &ConfigArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    if let Some(seeds) = args.seeds {
        cfg.run.seeds = seeds;
    }
    if let Some(h) = args.horizon {
        cfg.run.horizon = h;
    }
    if let Some(v) = &args.variant {
        cfg.model.variant = v.clone();
    }
    if let Some(out) = &args.out {
        cfg.run.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_dataset(cfg: &RunConfig) -> Result<(Graph, SignalTensor), CliError> {
    match cfg.data.source.as_str() {
        "synth" => {
            let (graph, signal, _) = graphio::synth_community_traffic(
                cfg.data.nodes,
                cfg.data.communities,
                cfg.data.steps,
                cfg.run.seed,
            )?;
            Ok((graph, signal))
        }
        _ => {
            let missing = if cfg.data.zero_as_missing {
                MissingPolicy::ZeroAsMissing
            } else {
                MissingPolicy::EmptyCell
            };
            let (graph, signal) = graphio::load_csv_dataset(
                cfg.data.adjacency.as_ref().expect("validated"),
                cfg.data.speeds.as_ref().expect("validated"),
                missing,
            )?;
            Ok((graph, signal))
        }
    }
}

fn prepare_windows(cfg: &RunConfig, signal: &SignalTensor) -> Result<WindowedDataset, CliError> {
    let stats_steps = ((signal.steps as f64) * cfg.data.train_ratio).floor() as usize;
    let (normed, rec) = graphio::normalize(signal, stats_steps.max(1))?;
    Ok(graphio::window_split(
        normed,
        cfg.run.history,
        cfg.run.horizon,
        cfg.data.train_ratio,
        rec,
    )?)
}

fn build_model(
    cfg: &RunConfig,
    graph: &Graph,
    data: &WindowedDataset,
    seed: u64,
) -> Result<Model, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mc = cfg.model_config(graph.n, data.signal.features);
    let mut model = Model::new(mc, graph, &mut rng);
    let train_steps = ((data.signal.steps as f64) * cfg.data.train_ratio).floor() as usize;
    let labels = if cfg.variant() == intergat::spatial::VariantTag::SpectralBlock {
        let k = cfg.model.spectral_k.clamp(2, graph.n);
        Some(intergat::community::spectral_cluster(graph, k, seed)?.assignment)
    } else {
        None
    };
    model.build_variant(graph, Some((&data.signal, train_steps.max(1))), labels.as_deref())?;
    Ok(model)
}

struct TrainedRun {
    checkpoint: Checkpoint,
    metrics: MetricReport,
    outcome: trainer::TrainOutcome,
}

fn train_once(cfg: &RunConfig, seed: u64) -> Result<TrainedRun, CliError> {
    let (graph, signal) = load_dataset(cfg)?;
    let data = prepare_windows(cfg, &signal)?;
    let mut model = build_model(cfg, &graph, &data, seed)?;
    let outcome = trainer::train(&mut model, &data, &cfg.optim_config(), cfg.tf_policy(), seed, None)?;
    let metrics = trainer::evaluate(&model, &data, seed)?;
    let mut run_cfg = cfg.clone();
    run_cfg.run.seed = seed;
    let checkpoint = Checkpoint::new(run_cfg, model, &graph, data.norm);
    Ok(TrainedRun {
        checkpoint,
        metrics,
        outcome,
    })
}

fn cmd_train(args: &ConfigArgs) -> Result<(), CliError> {
    let cfg = merge_config(args)?;
    let out = cfg.run.out.clone();
    std::fs::create_dir_all(&out).map_err(|e| BundleError::Io {
        path: out.display().to_string(),
        source: e,
    })?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()).map_err(|e| BundleError::Io {
        path: out.join("config.toml").display().to_string(),
        source: e,
    })?;
    let mut per_seed = Vec::new();
    for i in 0..cfg.run.seeds {
        let seed = cfg.run.seed + i as u64;
        let dir = if cfg.run.seeds == 1 {
            out.clone()
        } else {
            out.join(format!("seed{seed}"))
        };
        let run = train_once(&cfg, seed)?;
        run.checkpoint.save(&dir.join("checkpoint.json"))?;
        bundle::write_loss_csv(&dir.join("loss.csv"), &run.outcome.losses)?;
        bundle::write_series_csv(&dir.join("series.csv"), &run.outcome.losses)?;
        bundle::write_runtime_json(&dir.join("runtime.json"), &run.outcome.runtime)?;
        bundle::write_metrics_json(&dir.join("metrics.json"), &run.metrics)?;
        println!(
            "seed {seed}: test MAE {:.6}, RMSE {:.6}, accuracy {:.4} ({} epochs)",
            run.metrics.mae, run.metrics.rmse, run.metrics.accuracy, run.outcome.runtime.epochs_run
        );
        per_seed.push((seed, run.metrics));
    }
    if per_seed.len() > 1 {
        bundle::write_aggregate_csv(&out.join("aggregate.csv"), &per_seed)?;
    }
    println!("run directory: {}", out.display());
    Ok(())
}

fn cmd_evaluate(
    checkpoint: &Path,
    adjacency: Option<&PathBuf>,
    speeds: Option<&PathBuf>,
    horizon: Option<usize>,
    seed: Option<u64>,
    out: Option<&PathBuf>,
) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut cfg = ckpt.config.clone();
    if let (Some(a), Some(s)) = (adjacency, speeds) {
        cfg.data.source = "csv".into();
        cfg.data.adjacency = Some(a.clone());
        cfg.data.speeds = Some(s.clone());
    } else if adjacency.is_some() != speeds.is_some() {
        return Err(CliError::Usage(
            "--adjacency and --speeds must be given together".into(),
        ));
    }
    if let Some(h) = horizon {
        cfg.run.horizon = h;
    }
    let (_, signal) = load_dataset(&cfg)?;
    ckpt.check_compatible(&signal)?;
    let data = prepare_windows(&cfg, &signal)?;
    let seed = seed.unwrap_or(cfg.run.seed);
    let per_step = trainer::evaluate_per_step(&ckpt.model, &data, seed)?;
    let overall = trainer::evaluate(&ckpt.model, &data, seed)?;
    let out_path = out
        .cloned()
        .unwrap_or_else(|| checkpoint.with_file_name("metrics.json"));
    bundle::write_metrics_json(&out_path, &overall)?;
    println!(
        "overall: MAE {:.6}, RMSE {:.6}, accuracy {:.4}, R2 {:.4}, var {:.4}",
        overall.mae, overall.rmse, overall.accuracy, overall.r_squared, overall.explained_variance
    );
    for (step, m) in per_step.iter().enumerate() {
        println!("step {}: MAE {:.6}, RMSE {:.6}", step + 1, m.mae, m.rmse);
    }
    println!("metrics written to {}", out_path.display());
    Ok(())
}

fn cmd_ablate(common: &ConfigArgs, variants: Option<&String>) -> Result<(), CliError> {
    let cfg = merge_config(common)?;
    let tags: Vec<String> = match variants {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
        None => intergat::spatial::VariantTag::all()
            .iter()
            .map(|t| t.name().to_string())
            .collect(),
    };
    for t in &tags {
        if intergat::spatial::VariantTag::parse(t).is_err() {
            return Err(CliError::Usage(format!("unknown variant '{t}'")));
        }
    }
    let out = cfg.run.out.clone();
    std::fs::create_dir_all(&out).map_err(|e| BundleError::Io {
        path: out.display().to_string(),
        source: e,
    })?;
    let mut rows = Vec::new();
    for tag in &tags {
        let mut vcfg = cfg.clone();
        vcfg.model.variant = tag.clone();
        vcfg.validate()?;
        let run = train_once(&vcfg, vcfg.run.seed)?;
        run.checkpoint.save(&out.join(format!("checkpoint_{tag}.json")))?;
        println!("{tag}: MAE {:.6}, accuracy {:.4}", run.metrics.mae, run.metrics.accuracy);
        rows.push((tag.clone(), run.metrics));
    }
    bundle::write_ablation_csv(&out.join("ablation.csv"), &rows)?;
    println!("ablation table: {}", out.join("ablation.csv").display());
    Ok(())
}

fn cmd_analyze(
    checkpoint: &Path,
    out: Option<&PathBuf>,
    top_percent: f64,
    matrix: &str,
    seed: u64,
) -> Result<(), CliError> {
    let raw = match matrix {
        "raw" => true,
        "processed" => false,
        other => return Err(CliError::Usage(format!("unknown matrix view '{other}' (raw|processed)"))),
    };
    let ckpt = Checkpoint::load(checkpoint)?;
    let mats = ckpt.interaction_matrices(raw)?;
    let out = out
        .cloned()
        .unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).join("analysis"));
    std::fs::create_dir_all(&out).map_err(|e| BundleError::Io {
        path: out.display().to_string(),
        source: e,
    })?;
    let graph = Graph::new(ckpt.adjacency.clone())?;
    let partitions = partition_range(&graph, 2, 32, seed)?;

    let n = graph.n;
    let mut aggregate = intergat::numkern::Mat::zeros(n, n);
    for m in &mats {
        aggregate = aggregate.add(m);
    }
    aggregate = aggregate.scale(1.0 / mats.len() as f64);

    let mut summary = Vec::new();
    for (h, m) in mats.iter().enumerate() {
        // spectral statistics need an exactly symmetric input
        let sym = m.symmetrize();
        let rep = spectral_report(h, &sym, 1e-4)?;
        bundle::write_spectral_csv(&out.join(format!("spectrum_head{h}.csv")), &rep)?;
        let rows = contrast_table(m, &partitions)?;
        bundle::write_contrast_csv(&out.join(format!("contrast_head{h}.csv")), &rows)?;
        bundle::write_heatmap_csv(&out.join(format!("heatmap_head{h}.csv")), m, top_percent)?;
        let (c_mean, c_std) = contrast_summary(&rows);
        summary.push((format!("head{h}"), c_mean, c_std, rep.sparsity, rep.rank));
    }
    let agg_sym = aggregate.symmetrize();
    let agg_rep = spectral_report(mats.len(), &agg_sym, 1e-4)?;
    bundle::write_spectral_csv(&out.join("spectrum_aggregate.csv"), &agg_rep)?;
    let agg_rows = contrast_table(&aggregate, &partitions)?;
    bundle::write_contrast_csv(&out.join("contrast_aggregate.csv"), &agg_rows)?;
    bundle::write_heatmap_csv(&out.join("heatmap_aggregate.csv"), &aggregate, top_percent)?;
    let (am, astd) = contrast_summary(&agg_rows);
    summary.push(("aggregate".into(), am, astd, agg_rep.sparsity, agg_rep.rank));
    bundle::write_summary_csv(&out.join("summary.csv"), &summary)?;
    for (name, mean, std, sparsity, rank) in &summary {
        println!("{name}: contrast {mean:.4} ± {std:.4}, sparsity {sparsity:.4}, rank {rank}");
    }
    println!("analysis bundle: {}", out.display());
    Ok(())
}

fn cmd_synth(nodes: usize, communities: usize, steps: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    let (graph, signal, labels) = graphio::synth_community_traffic(nodes, communities, steps, seed)?;
    std::fs::create_dir_all(out).map_err(|e| BundleError::Io {
        path: out.display().to_string(),
        source: e,
    })?;
    graphio::write_csv_dataset(&graph, &signal, &out.join("adjacency.csv"), &out.join("speeds.csv"))?;
    let mut lab = String::from("node,community\n");
    for (i, c) in labels.iter().enumerate() {
        lab.push_str(&format!("{i},{c}\n"));
    }
    std::fs::write(out.join("labels.csv"), lab).map_err(|e| BundleError::Io {
        path: out.join("labels.csv").display().to_string(),
        source: e,
    })?;
    println!(
        "wrote {} nodes / {} steps to {}",
        nodes,
        steps,
        out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Evaluate {
            checkpoint,
            adjacency,
            speeds,
            horizon,
            seed,
            out,
        } => cmd_evaluate(checkpoint, adjacency.as_ref(), speeds.as_ref(), *horizon, *seed, out.as_ref()),
        Command::Ablate { common, variants } => cmd_ablate(common, variants.as_ref()),
        Command::Analyze {
            checkpoint,
            out,
            top_percent,
            matrix,
            seed,
        } => cmd_analyze(checkpoint, out.as_ref(), *top_percent, matrix, *seed),
        Command::Synth {
            nodes,
            communities,
            steps,
            seed,
            out,
        } => cmd_synth(*nodes, *communities, *steps, *seed, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

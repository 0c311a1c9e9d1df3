//! `labelbench` command line.

use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use labelbench::data::{load_dataset_csv, make_blobs, simulate_annotators, write_data_card, write_dataset_csv, CsvSchema, DataCard, MethodColumns};
use labelbench::detectors::{Artifacts, DetectorConfig, DetectorRegistry};
use labelbench::harness::{export_aggregate, export_results, model_confusion, run_grid, ExperimentConfig};
use labelbench::metrics::detection_metrics;
use labelbench::models::ClassifierSpec;
use labelbench::noise::{inject, NoiseKind, NoiseSpec};
use labelbench::rng::{self, DEFAULT_SEED};
use labelbench::stats::{build_cliques, friedman_test, render_cd_svg, Direction, RankTable};
use labelbench_review::SessionConfig;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "labelbench", version, about = "Label-noise benchmarking toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Gaussian-blobs dataset CSV.
    Synth(SynthArgs),
    /// Corrupt the labels of a dataset CSV.
    Inject(InjectArgs),
    /// Run detectors over a dataset CSV and write a data card.
    Detect(DetectArgs),
    /// Run an experiment grid from a JSON config. Worker threads come from
    /// the config, then the LABELBENCH_WORKERS environment variable.
    Run(RunArgs),
    /// Rank methods from a results CSV and draw the critical-difference diagram.
    Compare(CompareArgs),
    /// Serve the interactive review API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    /// Add this many simulated annotators.
    #[arg(long, default_value_t = 0)]
    annotators: usize,
    #[arg(long, default_value_t = 0.2)]
    annotator_error: f64,
    #[arg(long, default_value_t = 0.0)]
    annotator_missing: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InjectArgs {
    /// Dataset CSV.
    #[arg(long)]
    input: PathBuf,
    /// Noise spec JSON; `--kind`, `--rate` and `--seed` override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    kind: Option<NoiseKind>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Noisy dataset CSV; the clean labels go to `y_true`.
    #[arg(long)]
    out: PathBuf,
    /// Corruption record JSON.
    #[arg(long)]
    record: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    input: PathBuf,
    /// Detector name; repeat for several. Defaults to all.
    #[arg(long = "detector")]
    detectors: Vec<String>,
    /// Detector hyper-parameters JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Classifier spec JSON.
    #[arg(long)]
    classifier: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Data card CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Replace the config's seed list with this one seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for results.csv, aggregate.csv and cards/.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// results.csv from `run`.
    #[arg(long)]
    results: PathBuf,
    #[arg(long, default_value = "det_error_f1")]
    metric: String,
    /// Treat lower metric values as better.
    #[arg(long)]
    lower_better: bool,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// SVG path for the diagram.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn synth(args: SynthArgs) -> Result<Value> {
    let mut ds = make_blobs(args.n, args.d, args.classes, args.separation, args.seed)?;
    if args.annotators > 0 {
        let seed = rng::derive_seed(args.seed, "cli/annotators", 0);
        ds = simulate_annotators(&ds, args.annotators, args.annotator_error, args.annotator_missing, seed)?;
    }
    write_dataset_csv(&ds, &args.out)?;
    Ok(json!({ "rows": ds.len(), "classes": ds.num_classes, "out": args.out }))
}

fn inject_cmd(args: InjectArgs) -> Result<Value> {
    let mut spec = match &args.config {
        Some(path) => read_json::<NoiseSpec>(path)?,
        None => {
            let (Some(kind), Some(rate)) = (args.kind, args.rate) else {
                bail!("give --kind and --rate, or --config");
            };
            NoiseSpec::new(kind, rate, DEFAULT_SEED)
        }
    };
    spec.kind = args.kind.unwrap_or(spec.kind);
    spec.rate = args.rate.unwrap_or(spec.rate);
    spec.seed = args.seed.unwrap_or(spec.seed);

    let ds = load_dataset_csv(&args.input, &CsvSchema::default())?;
    if spec.kind == NoiseKind::ClassDependent && spec.confusion.is_none() {
        spec.confusion = Some(model_confusion(&ds, &ClassifierSpec::default().with_seed(spec.seed))?);
    }
    let injection = inject(&ds, &spec)?;
    let mut noisy = ds.with_labels(injection.labels)?;
    noisy.true_labels.get_or_insert_with(|| ds.labels.clone());
    write_dataset_csv(&noisy, &args.out)?;
    if let Some(path) = &args.record {
        write_json(path, &injection.record)?;
    }
    Ok(json!({
        "kind": spec.kind,
        "rate": spec.rate,
        "seed": spec.seed,
        "requested": injection.record.requested,
        "corrupted": injection.record.achieved(),
        "out": args.out,
    }))
}

fn detect(args: DetectArgs) -> Result<Value> {
    let cfg: DetectorConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => DetectorConfig::default(),
    };
    cfg.validate()?;
    let spec: ClassifierSpec = match &args.classifier {
        Some(path) => read_json(path)?,
        None => ClassifierSpec::default().with_seed(args.seed),
    };
    spec.validate()?;
    let registry = DetectorRegistry::standard();
    let names: Vec<String> = if args.detectors.is_empty() {
        registry.names().map(String::from).collect()
    } else {
        args.detectors.clone()
    };

    let ds = load_dataset_csv(&args.input, &CsvSchema::default())?;
    let artifacts = Artifacts::new(&ds, spec, args.folds, args.seed);
    let original = ds.true_labels.clone().unwrap_or_else(|| ds.labels.clone());
    let mask: Vec<bool> = original.iter().zip(&ds.labels).map(|(a, b)| a != b).collect();
    let mut methods = Vec::new();
    let mut summary = serde_json::Map::new();
    for name in &names {
        let report = registry.get(name)?.detect(&artifacts, &cfg)?;
        let mut entry = json!({ "num_flagged": report.num_flagged() });
        if ds.true_labels.is_some() {
            let m = detection_metrics(&report.flags, &report.scores, &mask)?;
            entry["error_f1"] = json!(m.error_f1);
            entry["error_precision"] = json!(m.error_precision);
            entry["error_recall"] = json!(m.error_recall);
            entry["roc_auc"] = json!(m.roc_auc);
        }
        summary.insert(name.clone(), entry);
        methods.push(MethodColumns {
            method: report.method,
            flags: report.flags,
            scores: report.scores,
        });
    }
    let card = DataCard {
        dataset: args.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        noise_type: "observed".into(),
        noise_rate: mask.iter().filter(|&&m| m).count() as f64 / ds.len() as f64,
        seed: args.seed,
        ids: ds.ids.clone(),
        original_labels: original,
        corrupted_labels: ds.labels.clone(),
        methods,
    };
    write_data_card(&card, &args.out)?;
    Ok(json!({ "rows": ds.len(), "detectors": summary, "out": args.out }))
}

fn run(args: RunArgs) -> Result<Value> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    cfg.output_dir = Some(args.out.clone());
    let results = run_grid(&cfg)?;
    export_results(&results, args.out.join("results.csv"))?;
    export_aggregate(&results, args.out.join("aggregate.csv"))?;
    let errors: Vec<Value> = results
        .errors()
        .map(|r| json!({ "dataset": r.dataset, "noise": r.noise, "rate": r.rate, "detector": r.detector, "error": r.error }))
        .collect();
    Ok(json!({
        "rows": results.rows.len(),
        "cards": results.cards.len(),
        "errors": errors,
        "out": args.out,
    }))
}

fn compare(args: CompareArgs) -> Result<Value> {
    let direction = if args.lower_better { Direction::LowerBetter } else { Direction::HigherBetter };
    let file = fs::File::open(&args.results).with_context(|| format!("opening {}", args.results.display()))?;
    let table = RankTable::from_results_csv(file, &args.metric, direction)?;
    let friedman = friedman_test(&table)?;
    let diagram = build_cliques(&table, args.alpha)?;
    fs::write(&args.out, render_cd_svg(&diagram)).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(json!({
        "metric": args.metric,
        "blocks": table.datasets,
        "friedman": friedman,
        "mean_ranks": table.methods.iter().zip(&table.mean_ranks).map(|(m, r)| json!({ "method": m, "mean_rank": r })).collect::<Vec<_>>(),
        "cliques": diagram.clique_names(),
        "pairs": diagram.pairs,
        "out": args.out,
    }))
}

fn serve(args: ServeArgs) -> Result<Value> {
    let text = fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg = SessionConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let addr: SocketAddr = format!("{}:{}", args.host, args.port).parse().context("bad --host/--port")?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(labelbench_review::serve(cfg, addr)).map_err(|e| anyhow::anyhow!(e))?;
    Ok(Value::Null)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Inject(a) => inject_cmd(a),
        Command::Detect(a) => detect(a),
        Command::Run(a) => run(a),
        Command::Compare(a) => compare(a),
        Command::Serve(a) => serve(a),
    };
    match outcome {
        Ok(Value::Null) => ExitCode::SUCCESS,
        Ok(summary) => {
            // A closed stdout (e.g. piped into `head`) is not a failure.
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

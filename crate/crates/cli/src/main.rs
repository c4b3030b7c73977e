//! Command-line front end for simulation, propensity estimation, training,
//! evaluation and full experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use serde::Deserialize;

use pairdebias::data::{load_dataset, DatasetFormat};
use pairdebias::debias::PropensityTable;
use pairdebias::estimate::{estimate_table, EstimatorConfig, Extrapolation, InterventionLog};
use pairdebias::exam::{ContinueProb, ModelConfig, Variant};
use pairdebias::experiment::{run_spec, ExperimentSpec};
use pairdebias::metrics::{evaluate, DEFAULT_CUTOFFS};
use pairdebias::sim::{simulate, ClickLog, SimulationConfig};
use pairdebias::synth::{synthetic_dataset_text, SynthSpec};
use pairdebias::trainer::{train, TrainerConfig, TrainerScheme, TreeEnsemble};
use pairdebias::{Error, Result};

#[derive(Parser)]
#[command(name = "pairdebias", version, about = "Pairwise debiasing of click data for learning to rank")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic ranking dataset.
    GenData(GenDataArgs),
    /// Simulate click logs from a labelled dataset.
    Simulate(SimulateArgs),
    /// Estimate a propensity table from an intervention log.
    EstimatePropensities(EstimateArgs),
    /// Train a ranker on a click log.
    Train(TrainArgs),
    /// Evaluate a model against golden labels.
    Evaluate(EvaluateArgs),
    /// Run a full experiment described by a spec file.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    items: Option<usize>,
    #[arg(long)]
    features: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Prefix for generated query ids.
    #[arg(long)]
    prefix: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct GenDataFile {
    queries: Option<usize>,
    items: Option<usize>,
    features: Option<usize>,
    seed: Option<u64>,
    prefix: Option<String>,
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation config (truncation, repetitions, seed, [model]).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Labelled dataset in ranked svmlight format.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    truncation: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// independent, continuous or row-skipping.
    #[arg(long)]
    variant: Option<Variant>,
    /// `inverse_rank` or `table <path>`.
    #[arg(long)]
    theta: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    continue_prob: Option<f64>,
    /// Comma-separated row sizes for row skipping.
    #[arg(long, value_delimiter = ',')]
    row_sizes: Option<Vec<usize>>,
    /// Keep queries without any relevant item in the top positions.
    #[arg(long)]
    keep_empty: bool,
    /// Also write sampled relevance and examination indicators.
    #[arg(long)]
    keep_latent: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SimulateFile {
    data: Option<PathBuf>,
    format: Option<String>,
    truncation: Option<usize>,
    repetitions: Option<usize>,
    seed: Option<u64>,
    model: Option<ModelConfig>,
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Intervention log (`<bucket> <k> <c>` and `<bucket> <k1> <k2> <c1> <c2>` lines).
    #[arg(long)]
    log: PathBuf,
    /// Largest rank of the output table.
    #[arg(long)]
    max_rank: usize,
    /// Known theta(2) to use instead of the log's estimate.
    #[arg(long)]
    theta2: Option<f64>,
    /// model-fit or nearest-pair.
    #[arg(long, default_value = "model-fit")]
    strategy: String,
    #[arg(long, default_value_t = EstimatorConfig::default().min_impressions)]
    min_impressions: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Trainer config (TOML with trainer fields).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    clicks: PathBuf,
    /// Dataset the click log was simulated from.
    #[arg(long)]
    features: PathBuf,
    #[arg(long, default_value = "svmlight-ranked")]
    format: String,
    #[arg(long)]
    scheme: Option<TrainerScheme>,
    #[arg(long)]
    propensities: Option<PathBuf>,
    #[arg(long)]
    num_trees: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_leaves: Option<usize>,
    #[arg(long)]
    feature_fraction: Option<f64>,
    #[arg(long)]
    bagging_fraction: Option<f64>,
    #[arg(long)]
    min_samples_per_leaf: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    ndcg_cutoff: Option<usize>,
    /// Comma-separated per-rank t-minus values.
    #[arg(long, value_delimiter = ',')]
    t_minus: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value = "svmlight-ranked")]
    format: String,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_CUTOFFS)]
    cutoffs: Vec<usize>,
    /// Report path; `<out>.json` and `<out>.per_query.txt` are written beside it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    spec: PathBuf,
    /// Overrides the spec's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn read_toml<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Io { path: p.into(), source: e })?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn required<T>(value: Option<T>, name: &str) -> Result<T> {
    value.ok_or_else(|| Error::Config(format!("--{name} is required (flag or config file)")))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let f: GenDataFile = read_toml(a.config.as_deref())?;
    let mut spec = SynthSpec::new(
        required(a.queries.or(f.queries), "queries")?,
        required(a.items.or(f.items), "items")?,
        required(a.features.or(f.features), "features")?,
        a.seed.or(f.seed).unwrap_or(0),
    );
    if let Some(p) = a.prefix.or(f.prefix) {
        spec.id_prefix = p;
    }
    let out = required(a.out.or(f.out), "out")?;
    write(&out, &synthetic_dataset_text(&spec)?)?;
    info!("wrote {} queries to {}", spec.num_queries, out.display());
    Ok(())
}

fn simulate_cmd(a: SimulateArgs) -> Result<()> {
    let f: SimulateFile = read_toml(a.config.as_deref())?;
    let data = required(a.data.or(f.data), "data")?;
    let format: DatasetFormat = a.format.or(f.format).as_deref().unwrap_or("svmlight-ranked").parse()?;
    let truncation = required(a.truncation.or(f.truncation), "truncation")?;
    let model_cfg = match a.variant {
        Some(variant) => ModelConfig {
            variant,
            theta: a.theta.unwrap_or_else(|| "inverse_rank".into()),
            max_rank: None,
            gamma: a.gamma,
            continue_prob: a.continue_prob.map(ContinueProb::Scalar),
            row_sizes: a.row_sizes,
        },
        None => required(f.model, "variant")?,
    };
    let out = required(a.out.or(f.out), "out")?;
    let base = a.config.as_deref().and_then(Path::parent);
    let model = model_cfg.build(truncation, base)?;
    let dataset = load_dataset(&data, format)?;
    let mut cfg = SimulationConfig::new(
        model,
        truncation,
        a.repetitions.or(f.repetitions).unwrap_or(16),
        a.seed.or(f.seed).unwrap_or(0),
    );
    cfg.drop_queries_without_relevant = !a.keep_empty;
    let log = simulate(&dataset, &cfg).map_err(|e| stage("simulate", e))?;
    log.save(&out, &data.display().to_string(), a.keep_latent)?;
    info!("wrote {} click lists to {}", log.lists.len(), out.display());
    Ok(())
}

fn estimate_cmd(a: EstimateArgs) -> Result<()> {
    let log = InterventionLog::load(&a.log)?;
    let strategy: Extrapolation = a.strategy.parse()?;
    let cfg = EstimatorConfig {
        min_impressions: a.min_impressions,
    };
    let fitted = estimate_table(&log, a.max_rank, a.theta2, strategy, &cfg).map_err(|e| stage("estimate", e))?;
    if let Some(v) = fitted.chosen {
        info!(
            "extrapolated with the {v} form (SSR independent {:.3e}, continuous {:.3e})",
            fitted.ssr_independent, fitted.ssr_continuous
        );
    }
    fitted.table.save(&a.out)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg: TrainerConfig = read_toml(a.config.as_deref())?;
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = a.$field { cfg.$field = v; } )* };
    }
    set!(scheme, num_trees, learning_rate, max_leaves, feature_fraction, bagging_fraction, min_samples_per_leaf, sigma, t_minus, seed);
    if a.ndcg_cutoff.is_some() {
        cfg.ndcg_cutoff = a.ndcg_cutoff;
    }
    cfg.validate()?;
    let props = a.propensities.as_ref().map(PropensityTable::load).transpose()?;
    if cfg.scheme.needs_propensities() && props.is_none() {
        return Err(Error::Config(format!("scheme {} needs --propensities", cfg.scheme)));
    }
    let dataset = load_dataset(&a.features, a.format.parse()?)?;
    let log = ClickLog::load(&a.clicks, &dataset)?;
    let model = train(&log.collections(), &cfg, props.as_ref()).map_err(|e| stage("train", e))?;
    model.save(&a.out)?;
    info!("wrote {} trees to {}", model.trees.len(), a.out.display());
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let model = TreeEnsemble::load(&a.model)?;
    let test = load_dataset(&a.test, a.format.parse()?)?;
    let report = evaluate(&model, &test, &a.cutoffs).map_err(|e| stage("evaluate", e))?;
    write(&a.out, &report.to_text())?;
    let sibling = |ext: &str| {
        let mut s = a.out.clone().into_os_string();
        s.push(ext);
        PathBuf::from(s)
    };
    write(&sibling(".json"), &(report.to_json() + "\n"))?;
    write(&sibling(".per_query.txt"), &report.per_query_text())?;
    print!("{}", report.to_text());
    Ok(())
}

fn experiment_cmd(a: ExperimentArgs) -> Result<()> {
    let mut spec = ExperimentSpec::load(&a.spec)?;
    spec.resolve_paths(a.spec.parent().unwrap_or(Path::new(".")));
    if let Some(dir) = a.output_dir {
        spec.output_dir = dir;
    }
    let report = run_spec(&spec)?;
    print!("{}", report.comparison.to_text());
    Ok(())
}

fn stage(name: &str, e: Error) -> Error {
    match e {
        Error::Stage { .. } => e,
        other => Error::Stage {
            stage: name.into(),
            source: Box::new(other),
        },
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Stage { .. } => 3,
        e if e.is_validation() => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::EstimatePropensities(a) => estimate_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Experiment(a) => experiment_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                if !msg.contains(&s.to_string()) {
                    msg.push_str(&format!(": {s}"));
                }
                src = s.source();
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}

//! Experiment runner: configures a model and a gradient-estimation
//! method, runs the optimization loop under a time budget, and persists
//! the trace as CSV plus a JSON summary. A `compare` subcommand reports
//! variance orderings across saved traces.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use odisvi::compare::{compare, final_quartile_median_variance};
use odisvi::model::corpus::{parse_stopwords, BowCorpus};
use odisvi::model::def::{DefHyperparams, DefModel};
use odisvi::model::gnts::{gnts_generate, GntsDataset, GntsHyperparams, GntsModel};
use odisvi::model::toy::ToyModel;
use odisvi::model::Model;
use odisvi::optimizer::{run, Method, RunConfig};
use odisvi::trace::RunTrace;
use odisvi::RandomStream;

const BUNDLED_CORPUS: &str = include_str!("../../../data/toy_corpus.txt");
const BUNDLED_STOPWORDS: &str = include_str!("../../../data/stopwords.txt");

/// Desk-scale GNTS dimensions (N, T, D, K).
const GNTS_DIMS: (usize, usize, usize, usize) = (30, 10, 5, 3);
const HELDOUT_FRACTION: f64 = 0.25;

#[derive(Parser)]
#[command(
    name = "odisvi",
    about = "Black-box variational inference with overdispersed importance sampling",
    args_conflicts_with_subcommands = true
)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Compare saved traces: final-quartile variance medians and
    /// pairwise ordering verdicts.
    Compare {
        /// Two or more trace CSV files from the same model.
        traces: Vec<PathBuf>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ModelKind {
    Toy,
    Gnts,
    #[value(name = "poisson_def")]
    #[serde(rename = "poisson_def")]
    PoissonDef,
}

impl ModelKind {
    fn name(self) -> &'static str {
        match self {
            ModelKind::Toy => "toy",
            ModelKind::Gnts => "gnts",
            ModelKind::PoissonDef => "poisson_def",
        }
    }

    fn default_budget(self) -> f64 {
        match self {
            ModelKind::Toy => 60.0,
            ModelKind::Gnts | ModelKind::PoissonDef => 300.0,
        }
    }

    fn default_eta(self) -> f64 {
        match self {
            ModelKind::Toy => 0.1,
            ModelKind::Gnts => 0.5,
            ModelKind::PoissonDef => 1.0,
        }
    }
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// Model to fit: toy, gnts, or poisson_def.
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    /// Gradient estimator: bbvi, bbvi_x2, obbvi_single, or obbvi_mixture.
    #[arg(long)]
    method: Option<String>,
    /// Gradient samples per latent (a disjoint set of the same size
    /// estimates the control variates).
    #[arg(long)]
    samples: Option<usize>,
    /// AdaGrad scale constant (default depends on the model).
    #[arg(long)]
    eta: Option<f64>,
    /// Dispersion adaptation step length.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Wall-clock budget for the optimization loop.
    #[arg(long = "budget-seconds")]
    budget_seconds: Option<f64>,
    /// Record a trace row every this many iterations.
    #[arg(long = "eval-interval")]
    eval_interval: Option<u64>,
    /// Stop after this many iterations even if budget remains.
    #[arg(long = "max-iters")]
    max_iters: Option<u64>,
    /// Deterministic virtual clock: seconds charged per iteration.
    /// Makes repeated runs byte-identical.
    #[arg(long = "fake-clock")]
    fake_clock: Option<f64>,
    /// Input data: GNTS binary tensor or a one-document-per-line corpus.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Stopword list for corpus ingestion, one word per line.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Persist generated GNTS data to this path.
    #[arg(long = "save-data")]
    save_data: Option<PathBuf>,
    /// Trace CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML config file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Config-file counterpart of the flags.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<ModelKind>,
    method: Option<String>,
    samples: Option<usize>,
    eta: Option<f64>,
    alpha: Option<f64>,
    seed: Option<u64>,
    budget_seconds: Option<f64>,
    eval_interval: Option<u64>,
    max_iters: Option<u64>,
    fake_clock: Option<f64>,
    data: Option<PathBuf>,
    stopwords: Option<PathBuf>,
    save_data: Option<PathBuf>,
    out: Option<PathBuf>,
}

/// Fully resolved run description, written verbatim into the summary.
#[derive(Debug, Serialize)]
struct ResolvedConfig {
    model: ModelKind,
    method: Method,
    samples: usize,
    effective_samples: usize,
    mixture_components: usize,
    eta: f64,
    alpha: f64,
    seed: u64,
    budget_seconds: f64,
    eval_interval: u64,
    max_iters: Option<u64>,
    fake_clock: Option<f64>,
    parallel_threads: usize,
    data: Option<PathBuf>,
    stopwords: Option<PathBuf>,
    save_data: Option<PathBuf>,
    out: PathBuf,
    heldout_fraction: f64,
    gnts_dims: Option<[usize; 4]>,
    gnts_hyperparams: Option<GntsHyperparams>,
    def_hyperparams: Option<DefHyperparams>,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    config: &'a ResolvedConfig,
    metric_name: &'a str,
    final_metric: f64,
    final_elbo: f64,
    median_variance_last_quartile: f64,
    total_iterations: u64,
    num_latents: usize,
    rows: usize,
}

enum CliError {
    /// Bad flags, bad config file, unreadable data: exit 2.
    Config(String),
    /// The run itself failed: exit 3.
    Runtime(String),
}

impl CliError {
    fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Some(Command::Compare { traces, out }) => run_compare(&traces, out.as_deref()),
        None => run_experiment(cli.run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn load_file_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::config(format!("bad config {}: {e}", path.display())))
}

fn thread_cap() -> Result<usize, CliError> {
    match std::env::var("ODISVI_THREADS") {
        Ok(v) => v.parse::<usize>().ok().filter(|&n| n >= 1).ok_or_else(|| {
            CliError::config(format!("ODISVI_THREADS must be a positive integer, got '{v}'"))
        }),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn run_experiment(args: RunArgs) -> Result<(), CliError> {
    let file = match &args.config {
        Some(path) => load_file_config(path)?,
        None => FileConfig::default(),
    };

    let model_kind = args
        .model
        .or(file.model)
        .ok_or_else(|| CliError::config("--model is required (toy, gnts, or poisson_def)"))?;
    let method: Method = args
        .method
        .or(file.method)
        .unwrap_or_else(|| "bbvi".to_string())
        .parse()
        .map_err(|e| CliError::config(format!("{e}")))?;
    let out = args
        .out
        .or(file.out)
        .ok_or_else(|| CliError::config("--out is required"))?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let threads = thread_cap()?;

    let config = RunConfig {
        method,
        samples: args.samples.or(file.samples).unwrap_or(8),
        eta: args.eta.or(file.eta).unwrap_or(model_kind.default_eta()),
        alpha: args.alpha.or(file.alpha).unwrap_or(0.1),
        seed,
        budget_seconds: args
            .budget_seconds
            .or(file.budget_seconds)
            .unwrap_or(model_kind.default_budget()),
        eval_interval: args.eval_interval.or(file.eval_interval).unwrap_or(10),
        max_iters: args.max_iters.or(file.max_iters),
        fake_clock: args.fake_clock.or(file.fake_clock),
        parallel: threads > 1,
    };
    config
        .validate()
        .map_err(|e| CliError::config(format!("{e}")))?;

    if config.parallel {
        // The estimator fans out on the global pool; cap it once.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }

    let data = args.data.or(file.data);
    let stopwords = args.stopwords.or(file.stopwords);
    let save_data = args.save_data.or(file.save_data);

    let mut resolved = ResolvedConfig {
        model: model_kind,
        method,
        samples: config.samples,
        effective_samples: config.effective_samples(),
        mixture_components: method.mixture_components(),
        eta: config.eta,
        alpha: config.alpha,
        seed,
        budget_seconds: config.budget_seconds,
        eval_interval: config.eval_interval,
        max_iters: config.max_iters,
        fake_clock: config.fake_clock,
        parallel_threads: threads,
        data: data.clone(),
        stopwords: stopwords.clone(),
        save_data: save_data.clone(),
        out: out.clone(),
        heldout_fraction: HELDOUT_FRACTION,
        gnts_dims: None,
        gnts_hyperparams: None,
        def_hyperparams: None,
    };

    // A single master seed derives independent data and inference
    // streams, so methods sharing a seed see identical data.
    let master = RandomStream::from_seed(seed);
    let mut data_rng = master.child(0);
    let mut run_rng = master.child(1);

    let model: Box<dyn Model> = match model_kind {
        ModelKind::Toy => Box::new(ToyModel::default_instance()),
        ModelKind::Gnts => {
            let hp = GntsHyperparams::default();
            let dataset = match &data {
                Some(path) => {
                    let file = std::fs::File::open(path).map_err(|e| {
                        CliError::config(format!("cannot read {}: {e}", path.display()))
                    })?;
                    GntsDataset::read_binary(std::io::BufReader::new(file))
                        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
                }
                None => {
                    let (n, t, d, k) = GNTS_DIMS;
                    gnts_generate(n, t, d, k, &hp, &mut data_rng).0
                }
            };
            if let Some(path) = &save_data {
                let file = std::fs::File::create(path).map_err(|e| {
                    CliError::config(format!("cannot write {}: {e}", path.display()))
                })?;
                dataset
                    .write_binary(std::io::BufWriter::new(file))
                    .map_err(|e| CliError::Runtime(format!("{e}")))?;
            }
            resolved.gnts_dims = Some([dataset.n, dataset.t, dataset.d, GNTS_DIMS.3]);
            resolved.gnts_hyperparams = Some(hp);
            Box::new(GntsModel::new(GNTS_DIMS.3, hp, dataset))
        }
        ModelKind::PoissonDef => {
            let corpus = match &data {
                Some(path) => BowCorpus::from_files(path, stopwords.as_deref())
                    .map_err(|e| CliError::config(format!("{e}")))?,
                None => {
                    let stops: HashSet<String> = match &stopwords {
                        Some(path) => {
                            let text = std::fs::read_to_string(path).map_err(|e| {
                                CliError::config(format!(
                                    "cannot read {}: {e}",
                                    path.display()
                                ))
                            })?;
                            parse_stopwords(&text)
                        }
                        None => parse_stopwords(BUNDLED_STOPWORDS),
                    };
                    BowCorpus::parse(BUNDLED_CORPUS, &stops)
                        .map_err(|e| CliError::config(format!("{e}")))?
                }
            };
            let vocab_path = out.with_extension("vocab");
            let file = std::fs::File::create(&vocab_path).map_err(|e| {
                CliError::config(format!("cannot write {}: {e}", vocab_path.display()))
            })?;
            corpus
                .write_vocab(std::io::BufWriter::new(file))
                .map_err(|e| CliError::Runtime(format!("{e}")))?;
            let (train, heldout) = corpus.split_heldout(HELDOUT_FRACTION, &data_rng);
            let hp = DefHyperparams::default();
            resolved.def_hyperparams = Some(hp);
            Box::new(DefModel::new(hp, train, heldout))
        }
    };

    let trace = run(&config, model.as_ref(), model_kind.name(), &mut run_rng)
        .map_err(|e| CliError::Runtime(format!("run aborted: {e}")))?;

    trace
        .save(&out)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", out.display())))?;

    let last = trace.rows.last().expect("trace has at least the initial row");
    let summary = Summary {
        config: &resolved,
        metric_name: model.metric_name(),
        final_metric: last.metric,
        final_elbo: last.elbo,
        median_variance_last_quartile: final_quartile_median_variance(&trace),
        total_iterations: last.iteration,
        num_latents: model.num_latents(),
        rows: trace.rows.len(),
    };
    let summary_path = out.with_extension("summary.json");
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&summary_path, json).map_err(|e| {
        CliError::Runtime(format!("cannot write {}: {e}", summary_path.display()))
    })?;

    println!(
        "wrote {} ({} rows) and {}",
        out.display(),
        trace.rows.len(),
        summary_path.display()
    );
    Ok(())
}

fn run_compare(paths: &[PathBuf], out: Option<&Path>) -> Result<(), CliError> {
    if paths.len() < 2 {
        return Err(CliError::config("compare needs at least 2 trace files"));
    }
    let traces: Vec<RunTrace> = paths
        .iter()
        .map(|p| RunTrace::load(p).map_err(|e| CliError::config(format!("{}: {e}", p.display()))))
        .collect::<Result<_, _>>()?;
    let report = compare(&traces).map_err(|e| CliError::config(format!("{e}")))?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    match out {
        Some(path) => std::fs::write(path, &json)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?,
        None => println!("{json}"),
    }
    // Human-readable digest on stderr so stdout stays machine-readable.
    for m in &report.methods {
        eprintln!(
            "{} (seed {}): median final-quartile variance {:.6e} over {} rows",
            m.method, m.seed, m.final_quartile_median_variance, m.rows
        );
    }
    for p in &report.pairwise {
        eprintln!("verdict: {}", p.verdict);
    }
    Ok(())
}

//! Batch command-line front end.
//!
//! Every subcommand writes its outputs plus a `config.txt` holding the fully
//! resolved settings as `key=value` lines. Feeding that file back through
//! `--config` reproduces the run; flags given on the command line override
//! values from the file.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand};
use serde::Serialize;

use crate::dataset::{
    generate_synthetic, parse_csv, write_csv, write_labels, Dataset, LogLinearWeights, Response,
    SyntheticSpec, TargetCoefficients, TrendShape, ValidationMode,
};
use crate::error::{Error, Result};
use crate::features::ModelKind;
use crate::pipeline::{
    characterize, evaluate, grid_search, load_model, predict, save_model, train,
    write_predictions, EvalReport, Hyperparameters, SearchGrid,
};
use crate::trend_clustering::{self, visit_deltas, ClusterAlgorithm, ClusterConfig};

#[derive(Debug, Parser)]
#[command(
    name = "trendcast",
    version,
    about = "Predict 48-hour web engagement from first-hour measurements",
    args_override_self = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset and its true trend labels
    Synth(SynthArgs),
    /// Cluster visit delta series into trends
    Cluster(ClusterArgs),
    /// Fit a model on a dataset and save it as JSON
    Train(TrainArgs),
    /// Predict 48-hour engagement with a saved model
    Predict(PredictArgs),
    /// Fit on the full dataset and report in-sample, LOOCV and GCV log-RMSE
    Evaluate(EvaluateArgs),
    /// Grid-search hyperparameters by LOOCV log-RMSE
    Search(SearchArgs),
    /// Correlations between first-hour and 48-hour engagement
    Characterize(CharacterizeArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Cluster(_) => "cluster",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Evaluate(_) => "evaluate",
            Command::Search(_) => "search",
            Command::Characterize(_) => "characterize",
        }
    }

    fn run_args(&self) -> &RunArgs {
        match self {
            Command::Synth(a) => &a.run,
            Command::Cluster(a) => &a.run,
            Command::Train(a) => &a.run,
            Command::Predict(a) => &a.run,
            Command::Evaluate(a) => &a.run,
            Command::Search(a) => &a.run,
            Command::Characterize(a) => &a.run,
        }
    }

    fn resolved(&self) -> serde_json::Result<serde_json::Value> {
        match self {
            Command::Synth(a) => serde_json::to_value(a),
            Command::Cluster(a) => serde_json::to_value(a),
            Command::Train(a) => serde_json::to_value(a),
            Command::Predict(a) => serde_json::to_value(a),
            Command::Evaluate(a) => serde_json::to_value(a),
            Command::Search(a) => serde_json::to_value(a),
            Command::Characterize(a) => serde_json::to_value(a),
        }
    }
}

/// Output location, parallelism and config file; shared by all subcommands.
#[derive(Debug, Args, Serialize)]
struct RunArgs {
    /// Output directory (created if missing)
    #[arg(long, default_value = "out")]
    #[serde(skip)]
    out: PathBuf,
    /// Worker threads; 0 uses all available cores. Results do not depend on it
    #[arg(long, default_value_t = 0)]
    #[serde(skip)]
    threads: usize,
    /// File of key=value lines supplying flag values; command-line flags win
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct DataArgs {
    /// Input dataset CSV
    #[arg(long)]
    data: PathBuf,
    /// Reject non-monotone cumulative series (default)
    #[arg(long, overrides_with = "lenient")]
    strict: bool,
    /// Clamp non-monotone cumulative series instead of rejecting them
    #[arg(long, overrides_with = "strict")]
    lenient: bool,
}

impl DataArgs {
    fn resolve(&mut self) {
        self.strict = !self.lenient;
    }

    fn mode(&self) -> ValidationMode {
        if self.lenient {
            ValidationMode::Lenient
        } else {
            ValidationMode::Strict
        }
    }

    fn load(&self) -> Result<Dataset> {
        let file = File::open(&self.data).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", self.data.display()),
            ))
        })?;
        let ds = parse_csv(BufReader::new(file), self.mode())?;
        log::info!("loaded {} pages from {}", ds.len(), self.data.display());
        Ok(ds)
    }
}

#[derive(Debug, Args, Serialize)]
struct HpArgs {
    /// Trend count for the mixed-trend models
    #[arg(long, default_value_t = 50)]
    k: usize,
    /// RBF kernel width
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Ridge penalty; 0 is ordinary least squares
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// RBF anchor count
    #[arg(long, default_value_t = 10)]
    rbf_c: usize,
    /// Seed for clustering initialization and RBF anchor sampling
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Clustering iteration limit
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    /// Relative objective change that stops clustering
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

impl HpArgs {
    fn hyperparameters(&self) -> Hyperparameters {
        Hyperparameters {
            k: self.k,
            gamma: self.gamma,
            lambda: self.lambda,
            rbf_c: self.rbf_c,
            seed: self.seed,
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    #[command(flatten)]
    #[serde(flatten)]
    run: RunArgs,
    /// Generator seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of hosts
    #[arg(long, default_value_t = 4)]
    hosts: usize,
    /// Pages generated for each host
    #[arg(long, default_value_t = 100)]
    pages_per_host: usize,
    /// Trend shapes: decay, linear or burst:N (N is the 1-based spike window)
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "decay,burst:6,linear")]
    shapes: Vec<String>,
    /// Log-offset added to the targets of each trend, one per shape
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "0,0.5,1")]
    offsets: Vec<f64>,
    /// Log-normal jitter on each window gain
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Gaussian noise on log targets
    #[arg(long, default_value_t = 0.0)]
    target_noise: f64,
    /// Mean of the log first-hour visit total
    #[arg(long, default_value_t = 5.0)]
    scale_mu: f64,
    /// Standard deviation of the log first-hour visit total
    #[arg(long, default_value_t = 1.0)]
    scale_sigma: f64,
    /// Target weights intercept,visits,likes,mentions,active_time on log totals,
    /// applied to all three responses (built-in per-response weights if omitted)
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, value_name = "I,V,F,M,A")]
    target_weights: Option<Vec<f64>>,
}

#[derive(Debug, Args, Serialize)]
struct ClusterArgs {
    #[command(flatten)]
    #[serde(flatten)]
    run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    /// Clustering algorithm
    #[arg(long, default_value = "kmeans", value_parser = ["kmeans", "ksc"])]
    algorithm: String,
    /// Number of trends
    #[arg(long, default_value_t = 50)]
    k: usize,
    /// Seed for centroid initialization
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Iteration limit
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    /// Relative objective change that stops the iteration
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

const KINDS: [&str; 7] = [
    "sh",
    "ml",
    "rbf",
    "news",
    "mixed",
    "mixed-trend-kmeans",
    "mixed-trend-ksc",
];
const RESPONSES: [&str; 3] = ["visits", "likes", "mentions"];

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    /// Model family
    #[arg(long, default_value = "mixed-trend-kmeans", value_parser = KINDS)]
    kind: String,
    #[command(flatten)]
    #[serde(flatten)]
    hp: HpArgs,
}

#[derive(Debug, Args, Serialize)]
struct PredictArgs {
    #[command(flatten)]
    #[serde(flatten)]
    run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    /// Model JSON written by `train`
    #[arg(long)]
    model: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct EvaluateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    /// Model family
    #[arg(long, default_value = "mixed-trend-kmeans", value_parser = KINDS)]
    kind: String,
    /// Print only this response (all are written to report.json)
    #[arg(long, value_parser = RESPONSES)]
    response: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    hp: HpArgs,
}

#[derive(Debug, Args, Serialize)]
struct SearchArgs {
    #[command(flatten)]
    #[serde(flatten)]
    run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    /// Model family
    #[arg(long, default_value = "mixed-trend-kmeans", value_parser = KINDS)]
    kind: String,
    /// Response whose LOOCV RMSE selects the winner
    #[arg(long, default_value = "visits", value_parser = RESPONSES)]
    response: String,
    /// Base hyperparameters for axes not searched
    #[command(flatten)]
    #[serde(flatten)]
    hp: HpArgs,
    /// Candidate k values [default: 1..=100]
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    k_grid: Option<Vec<usize>>,
    /// Candidate gamma values [default: 0.001..1000 by decades]
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    gamma_grid: Option<Vec<f64>>,
    /// Candidate lambda values [default: 0.001..1000 by decades for rbf, 0 otherwise]
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    lambda_grid: Option<Vec<f64>>,
    /// Candidate RBF anchor counts [default: 10,50,100]
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    rbf_c_grid: Option<Vec<usize>>,
}

#[derive(Debug, Args, Serialize)]
struct CharacterizeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
}

/// The clap command tree, for help rendering and introspection.
pub fn command() -> clap::Command {
    Cli::command()
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 success, 1 usage error, 2 data error, 3 numerical
/// failure.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match splice_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let mut cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&mut cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Expands `--config FILE` into flags inserted right after the subcommand
/// name, so that later command-line flags override them.
fn splice_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    let mut iter = argv.iter().enumerate();
    while let Some((_, a)) = iter.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = iter.next().map(|(_, p)| PathBuf::from(p));
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
    let mut flags = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::invalid(format!("{}:{}: expected key=value", path.display(), n + 1))
        })?;
        let flag = format!("--{}", key.trim().replace('_', "-"));
        match value.trim() {
            "true" => flags.push(OsString::from(flag)),
            "false" => {}
            v => {
                flags.push(OsString::from(flag));
                flags.push(OsString::from(v));
            }
        }
    }
    // First non-flag argument after the program name is the subcommand.
    let at = argv
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|i| i + 2)
        .unwrap_or(argv.len());
    let mut out = argv[..at].to_vec();
    out.extend(flags);
    out.extend_from_slice(&argv[at..]);
    Ok(out)
}

fn execute(cmd: &mut Command) -> Result<()> {
    match cmd {
        Command::Synth(_) => {}
        Command::Cluster(a) => a.data.resolve(),
        Command::Train(a) => a.data.resolve(),
        Command::Predict(a) => a.data.resolve(),
        Command::Evaluate(a) => a.data.resolve(),
        Command::Search(a) => a.data.resolve(),
        Command::Characterize(a) => a.data.resolve(),
    }
    let run = cmd.run_args();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(run.threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    fs::create_dir_all(&run.out)?;
    echo_config(cmd, &run.out)?;
    let out = run.out.clone();
    pool.install(|| match &*cmd {
        Command::Synth(a) => synth(a, &out),
        Command::Cluster(a) => cluster(a, &out),
        Command::Train(a) => train_cmd(a, &out),
        Command::Predict(a) => predict_cmd(a, &out),
        Command::Evaluate(a) => evaluate_cmd(a, &out),
        Command::Search(a) => search_cmd(a, &out),
        Command::Characterize(a) => characterize_cmd(a, &out),
    })
}

fn echo_config(cmd: &Command, out: &Path) -> Result<()> {
    let value = cmd.resolved()?;
    let mut w = BufWriter::new(File::create(out.join("config.txt"))?);
    writeln!(w, "# trendcast {}", cmd.name())?;
    if let serde_json::Value::Object(map) = value {
        for (key, v) in map {
            let text = match v {
                serde_json::Value::Null | serde_json::Value::Bool(false) => continue,
                serde_json::Value::String(s) => s,
                serde_json::Value::Array(items) => items
                    .iter()
                    .map(|i| match i {
                        serde_json::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect::<Vec<_>>()
                    .join(","),
                other => other.to_string(),
            };
            writeln!(w, "{}={}", key.replace('_', "-"), text)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(out.join(name))?))
}

fn write_json<T: Serialize>(out: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(out, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn synth(a: &SynthArgs, out: &Path) -> Result<()> {
    let shapes = a
        .shapes
        .iter()
        .map(|s| s.parse::<TrendShape>())
        .collect::<Result<Vec<_>>>()?;
    let coefficients = match &a.target_weights {
        None => TargetCoefficients::default(),
        Some(w) if w.len() != 5 => {
            return Err(Error::invalid(format!(
                "target-weights takes 5 comma-separated values, got {}",
                w.len()
            )));
        }
        Some(w) => {
            let w = LogLinearWeights {
                intercept: w[0],
                visits: w[1],
                likes: w[2],
                mentions: w[3],
                active_time: w[4],
            };
            TargetCoefficients {
                visits: w,
                likes: w,
                mentions: w,
            }
        }
    };
    let spec = SyntheticSpec {
        n_hosts: a.hosts,
        pages_per_host: a.pages_per_host,
        shapes,
        trend_offsets: a.offsets.clone(),
        scale_mu: a.scale_mu,
        scale_sigma: a.scale_sigma,
        noise: a.noise,
        target_noise: a.target_noise,
        coefficients,
        seed: a.seed,
    };
    let data = generate_synthetic(&spec)?;
    let mut w = create(out, "dataset.csv")?;
    write_csv(&data.dataset, &mut w)?;
    w.flush()?;
    let mut w = create(out, "labels.csv")?;
    write_labels(&data.dataset, &data.labels, &mut w)?;
    w.flush()?;
    println!("wrote {} pages to {}", data.dataset.len(), out.display());
    Ok(())
}

fn cluster(a: &ClusterArgs, out: &Path) -> Result<()> {
    let ds = a.data.load()?;
    let algorithm = ClusterAlgorithm::parse(&a.algorithm)?;
    let config = ClusterConfig {
        max_iter: a.max_iter,
        tol: a.tol,
        ..ClusterConfig::new(algorithm, a.k, a.seed)
    };
    let fit = trend_clustering::fit(&visit_deltas(ds.pages()), &config)?;
    write_json(out, "trend_model.json", &fit.model)?;

    let mut w = create(out, "objective.csv")?;
    writeln!(w, "iteration,objective")?;
    for (i, o) in fit.model.objective_history.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, o)?;
    }
    w.flush()?;

    let mut w = create(out, "assignments.csv")?;
    writeln!(w, "page_id,cluster,distance")?;
    for ((p, l), d) in ds.pages().iter().zip(&fit.labels).zip(&fit.distances) {
        writeln!(w, "{},{},{}", p.page_id, l, d)?;
    }
    w.flush()?;
    println!(
        "{} k={} objective={} iterations={} converged={}",
        algorithm.name(),
        fit.model.k,
        fit.model.objective,
        fit.model.iterations,
        fit.model.converged
    );
    Ok(())
}

fn train_cmd(a: &TrainArgs, out: &Path) -> Result<()> {
    let ds = a.data.load()?;
    let kind = ModelKind::parse(&a.kind)?;
    let model = train(&ds, kind, &a.hp.hyperparameters())?;
    save_model(&model, &out.join("model.json"))?;
    println!("trained {} on {} pages", kind, ds.len());
    Ok(())
}

fn predict_cmd(a: &PredictArgs, out: &Path) -> Result<()> {
    let model = load_model(&a.model)?;
    let ds = a.data.load()?;
    let rows = predict(&model, &ds)?;
    let mut w = create(out, "predictions.csv")?;
    write_predictions(&rows, &mut w)?;
    w.flush()?;
    println!("predicted {} pages", rows.len());
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_else(|| "NA".into())
}

fn print_report(r: &EvalReport, only: Option<Response>) {
    println!("model {}", r.kind);
    println!("response  rmse_log  rmse_loocv  rmse_gcv  aic  bic  p  rank");
    for rr in &r.responses {
        if only.is_some_and(|o| o != rr.response) {
            continue;
        }
        println!(
            "{}  {:.6}  {:.6}  {}  {:.3}  {:.3}  {}  {}",
            rr.response.name(),
            rr.rmse_log,
            rr.rmse_loocv,
            fmt_opt(rr.rmse_gcv),
            rr.aic,
            rr.bic,
            rr.p,
            rr.rank
        );
    }
}

fn evaluate_cmd(a: &EvaluateArgs, out: &Path) -> Result<()> {
    let ds = a.data.load()?;
    let kind = ModelKind::parse(&a.kind)?;
    let only = a.response.as_deref().map(Response::parse).transpose()?;
    let report = evaluate(&ds, kind, &a.hp.hyperparameters())?;
    write_json(out, "report.json", &report)?;
    print_report(&report, only);
    Ok(())
}

fn search_cmd(a: &SearchArgs, out: &Path) -> Result<()> {
    let ds = a.data.load()?;
    let kind = ModelKind::parse(&a.kind)?;
    let mut grid = SearchGrid::defaults(kind, a.hp.hyperparameters());
    grid.selection = Response::parse(&a.response)?;
    if let Some(k) = &a.k_grid {
        grid.k = k.clone();
    }
    if let Some(g) = &a.gamma_grid {
        grid.gamma = g.clone();
    }
    if let Some(l) = &a.lambda_grid {
        grid.lambda = l.clone();
    }
    if let Some(c) = &a.rbf_c_grid {
        grid.rbf_c = c.clone();
    }
    let result = grid_search(&ds, kind, &grid)?;
    write_json(out, "search.json", &result)?;

    let mut w = create(out, "search.csv")?;
    write!(w, "k,gamma,lambda,rbf_c")?;
    for r in Response::ALL {
        write!(w, ",{0}_rmse_loocv,{0}_rmse_gcv", r.name())?;
    }
    writeln!(w)?;
    for rep in &result.table {
        let hp = &rep.hyperparameters;
        write!(w, "{},{},{},{}", hp.k, hp.gamma, hp.lambda, hp.rbf_c)?;
        for r in Response::ALL {
            let rr = rep.response(r);
            let gcv = rr.rmse_gcv.map(|g| g.to_string()).unwrap_or_default();
            write!(w, ",{},{}", rr.rmse_loocv, gcv)?;
        }
        writeln!(w)?;
    }
    w.flush()?;

    let best = &result.table[result.best_index];
    println!(
        "best k={} gamma={} lambda={} rbf_c={} ({} points searched)",
        result.best.k,
        result.best.gamma,
        result.best.lambda,
        result.best.rbf_c,
        result.table.len()
    );
    print_report(best, None);
    Ok(())
}

fn characterize_cmd(a: &CharacterizeArgs, out: &Path) -> Result<()> {
    let ds = a.data.load()?;
    let c = characterize(&ds)?;
    write_json(out, "correlations.json", &c)?;
    for s in &c.scatter {
        let mut w = create(out, &format!("scatter_{}.csv", s.name))?;
        s.write_csv(&mut w)?;
        w.flush()?;
    }
    for corr in &c.correlations {
        println!("{}  {:.4}", corr.name, corr.rho);
    }
    Ok(())
}

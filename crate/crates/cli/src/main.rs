mod manifest;
mod report;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use npr::cox::{fit_cox, relative_risk, SurvivalData};
use npr::io::{
    read_column, read_covariates, read_edges, read_events, read_table_file, write_table,
};
use npr::logistic::{evaluate_auc_splits, fit_logistic, predict_proba};
use npr::newton::NewtonOptions;
use npr::sim::{run_prediction_study, run_test_study, ScenarioConfig, TestStudyConfig};
use npr::{
    fit_ols, order_test, DirectedGraph, NprError, OrderTestOptions, PropagatedDesign,
    RowStochasticOperator,
};

use manifest::RunManifest;
use report::{AucReport, FitReport, Model, SimulateReport, SimulateTestReport, TestReport};

#[derive(Parser)]
#[command(name = "npr", version, about = "Network propagation regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a propagation model and write fit.json.
    Fit(FitArgs),
    /// Sequential Wald tests of the propagation order on a Gaussian fit.
    Test(TestArgs),
    /// Predict from a fit on new (or the training) network data.
    Predict(PredictArgs),
    /// Repeated hold-out AUC of a logistic fit specification.
    EvalAuc(EvalAucArgs),
    /// Prediction study: kappa ratios against the competitor model.
    Simulate(SimulateArgs),
    /// Order-testing study: power, size, FWER and coverage.
    SimulateTest(SimulateTestArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
enum Family {
    Gaussian,
    Logistic,
    Cox,
}

#[derive(Args)]
struct NetworkArgs {
    /// Edge list CSV with header `src,dst` (0-based node indices).
    #[arg(long)]
    edges: PathBuf,
    /// Covariate CSV, one row per node.
    #[arg(long)]
    covariates: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    network: NetworkArgs,
    /// Response CSV (Gaussian and logistic families).
    #[arg(long)]
    response: Option<PathBuf>,
    /// Observed times CSV (Cox family); may also hold an `event` column.
    #[arg(long)]
    time: Option<PathBuf>,
    /// Event indicator CSV (Cox family).
    #[arg(long)]
    event: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "gaussian")]
    family: Family,
    /// Truncation order of the propagated design.
    #[arg(long = "K", default_value_t = 8)]
    k: usize,
    /// Relative tolerance of forward selection.
    #[arg(long, default_value_t = npr::DEFAULT_SELECTION_TOL)]
    tol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    fit: PathBuf,
    #[arg(long, default_value_t = 4)]
    kmax: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    fit: PathBuf,
    #[command(flatten)]
    network: NetworkArgs,
    /// Predictions CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalAucArgs {
    #[arg(long)]
    fit: PathBuf,
    #[command(flatten)]
    network: NetworkArgs,
    #[arg(long)]
    response: PathBuf,
    #[arg(long, default_value_t = 100)]
    splits: usize,
    #[arg(long = "train-frac", default_value_t = 0.8)]
    train_frac: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    case: u8,
    #[arg(long)]
    setting: u8,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long = "K", default_value_t = 8)]
    k: usize,
    #[arg(long, default_value_t = npr::DEFAULT_SELECTION_TOL)]
    tol: f64,
    #[arg(long = "train-frac", default_value_t = 0.8)]
    train_frac: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Long-format per-replicate rows.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateTestArgs {
    #[arg(long)]
    case: u8,
    /// Number of true nulls among the tested orders.
    #[arg(long)]
    nulls: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long = "K", default_value_t = 8)]
    k: usize,
    #[arg(long, default_value_t = 4)]
    kmax: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = npr::DEFAULT_SELECTION_TOL)]
    tol: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// Failure with its exit code: 1 for numerical or model failures, 2 for usage and I/O.
struct Failure {
    code: u8,
    message: String,
}

impl From<NprError> for Failure {
    fn from(e: NprError) -> Self {
        Self {
            code: if e.is_numerical() { 1 } else { 2 },
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        usage(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        usage(e.to_string())
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Test(a) => cmd_test(a),
        Command::Predict(a) => cmd_predict(a),
        Command::EvalAuc(a) => cmd_eval_auc(a),
        Command::Simulate(a) => with_thread_cap(|| cmd_simulate(a)),
        Command::SimulateTest(a) => with_thread_cap(|| cmd_simulate_test(a)),
    }
}

/// Runs `f` on a pool capped by `NPR_THREADS` when set.
fn with_thread_cap<F: FnOnce() -> CliResult<()> + Send>(f: F) -> CliResult<()> {
    match std::env::var("NPR_THREADS") {
        Ok(v) => {
            let threads: usize = v.parse().ok().filter(|&t| t > 0).ok_or_else(|| {
                usage(format!("NPR_THREADS must be a positive integer, got `{v}`"))
            })?;
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| usage(e.to_string()))?
                .install(f)
        }
        Err(_) => f(),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w =
        BufWriter::new(File::create(path).map_err(|e| usage(format!("{}: {e}", path.display())))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn load_network(args: &NetworkArgs) -> CliResult<(RowStochasticOperator, nalgebra::DMatrix<f64>)> {
    let x = read_covariates(&args.covariates)?;
    let graph = DirectedGraph::new(x.nrows(), read_edges(&args.edges)?)?;
    Ok((npr::row_normalize(&graph), x))
}

fn check_len(what: &str, len: usize, n: usize) -> CliResult<()> {
    if len != n {
        return Err(NprError::DimensionMismatch(format!(
            "{what} has {len} rows, covariates have {n}"
        ))
        .into());
    }
    Ok(())
}

fn cmd_fit(a: FitArgs) -> CliResult<()> {
    let (w, x) = load_network(&a.network)?;
    let raw = PropagatedDesign::build(&w, &x, a.k)?;
    let mut inputs = vec![&a.network.edges, &a.network.covariates];
    let model = match a.family {
        Family::Gaussian | Family::Logistic => {
            let path = a
                .response
                .as_ref()
                .ok_or_else(|| usage("--response is required for this family"))?;
            inputs.push(path);
            let y = read_column(path, "y")?;
            check_len("response", y.len(), x.nrows())?;
            if matches!(a.family, Family::Gaussian) {
                let design = raw.center().forward_select(a.tol)?;
                Model::Gaussian(fit_ols(&design, &y)?)
            } else {
                let design = raw.forward_select_with_intercept(a.tol)?;
                Model::Logistic(fit_logistic(&design, &y, &NewtonOptions::default())?)
            }
        }
        Family::Cox => {
            let time_path = a
                .time
                .as_ref()
                .ok_or_else(|| usage("--time is required for the cox family"))?;
            inputs.push(time_path);
            let time = read_column(time_path, "time")?;
            let event = match &a.event {
                Some(p) => {
                    inputs.push(p);
                    read_events(p)?
                }
                None => read_events(time_path)?,
            };
            check_len("time", time.len(), x.nrows())?;
            let surv = SurvivalData::new(time.as_slice().to_vec(), event)?;
            let design = raw.forward_select(a.tol)?;
            Model::Cox(fit_cox(&design, &surv, &NewtonOptions::default())?)
        }
    };
    let config = serde_json::json!({ "family": a.family, "K": a.k, "tol": a.tol });
    let manifest = RunManifest::new("fit", config, &inputs, None)?;
    write_json(&a.out, &FitReport::new(manifest, a.tol, model))
}

fn read_fit(path: &Path) -> CliResult<FitReport> {
    let file = File::open(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    serde_json::from_reader(file).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn cmd_test(a: TestArgs) -> CliResult<()> {
    let fit = read_fit(&a.fit)?;
    let Model::Gaussian(g) = &fit.model else {
        return Err(usage("order tests need a fit of the gaussian family"));
    };
    let report = order_test(g, a.kmax, a.alpha, OrderTestOptions::default())?;
    let config = serde_json::json!({ "kmax": a.kmax, "alpha": a.alpha });
    let manifest = RunManifest::new("test", config, &[&a.fit], None)?;
    write_json(&a.out, &TestReport { manifest, report })
}

fn cmd_predict(a: PredictArgs) -> CliResult<()> {
    let fit = read_fit(&a.fit)?;
    let column = fit.model.prediction_name();
    let table = read_table_file(&a.network.covariates)?;
    let mut out = BufWriter::new(
        File::create(&a.out).map_err(|e| usage(format!("{}: {e}", a.out.display())))?,
    );
    if table.rows.is_empty() {
        write_table(&mut out, &["node", column], std::iter::empty())?;
        return Ok(());
    }
    let (w, x) = load_network(&a.network)?;
    let raw = PropagatedDesign::build(&w, &x, fit.max_order())?;
    let pred: DVector<f64> = match &fit.model {
        Model::Gaussian(g) => g.predict(&raw)?,
        Model::Logistic(l) => predict_proba(l, &raw)?,
        Model::Cox(c) => relative_risk(c, &raw)?,
    };
    write_table(
        &mut out,
        &["node", column],
        pred.iter().enumerate().map(|(i, &p)| vec![i as f64, p]),
    )?;
    out.flush()?;
    Ok(())
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

fn cmd_eval_auc(a: EvalAucArgs) -> CliResult<()> {
    let fit = read_fit(&a.fit)?;
    let Model::Logistic(l) = &fit.model else {
        return Err(usage("AUC evaluation needs a fit of the logistic family"));
    };
    let (w, x) = load_network(&a.network)?;
    let y = read_column(&a.response, "y")?;
    check_len("response", y.len(), x.nrows())?;
    let seed = resolve_seed(a.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = PropagatedDesign::build(&w, &x, l.max_order)?;
    let summary = evaluate_auc_splits(
        &raw,
        &y,
        fit.selection_tol,
        &NewtonOptions::default(),
        a.splits,
        a.train_frac,
        &mut rng,
    )?;
    let config =
        serde_json::json!({ "K": l.max_order, "splits": a.splits, "train_frac": a.train_frac });
    let inputs = [&a.fit, &a.network.edges, &a.network.covariates, &a.response];
    let manifest = RunManifest::new("eval-auc", config, &inputs, Some(seed))?;
    write_json(
        &a.out,
        &AucReport {
            manifest,
            auc: summary,
        },
    )
}

fn cmd_simulate(a: SimulateArgs) -> CliResult<()> {
    let seed = resolve_seed(a.seed);
    let mut cfg = ScenarioConfig::new(a.case, a.setting, a.n, a.reps, seed)?;
    cfg.k_fit = a.k;
    cfg.selection_tol = a.tol;
    cfg.train_frac = a.train_frac;
    cfg.validate()?;
    let report = run_prediction_study(&cfg, true)?;
    let manifest = RunManifest::new(
        "simulate",
        serde_json::to_value(&cfg)?,
        &[] as &[&Path],
        Some(seed),
    )?;
    if let Some(path) = &a.csv {
        report::write_prediction_csv(path, &report)?;
    }
    write_json(&a.out, &SimulateReport::new(manifest, report))
}

fn cmd_simulate_test(a: SimulateTestArgs) -> CliResult<()> {
    let seed = resolve_seed(a.seed);
    let mut cfg = TestStudyConfig::new(a.case, a.nulls, a.n, a.reps, seed)?;
    cfg.k_fit = a.k;
    cfg.k_max = a.kmax;
    cfg.alpha = a.alpha;
    cfg.selection_tol = a.tol;
    cfg.validate()?;
    let report = run_test_study(&cfg, true)?;
    let manifest = RunManifest::new(
        "simulate-test",
        serde_json::to_value(&cfg)?,
        &[] as &[&Path],
        Some(seed),
    )?;
    if let Some(path) = &a.csv {
        report::write_test_csv(path, &report)?;
    }
    write_json(&a.out, &SimulateTestReport::new(manifest, report))
}

//! Command-line front end: `simulate`, `fit`, `select-factors`, `evaluate`,
//! `predict` and `benchmark`.
//!
//! Exit codes: 0 on success, 1 for runtime and model errors, 2 for usage
//! errors (bad flags, unknown scenario, unreadable config file).

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::evaluation::{
    compare_factor_sets, prediction_error, reconstruction_error_from, split_dataset, trace_metrics,
    FactorSet, TraceMetrics,
};
use crate::identify::{align, check_identifiability, IdentifiabilityReport};
use crate::io;
use crate::selection::{select_factor_counts, SelectionResult, DEFAULT_QS_MAX, DEFAULT_Q_MAX};
use crate::simulation::{scenario_preset, simulate_replicate, ErrorLaw, SimulationSpec};
use crate::types::{FactorCounts, FitConfig, FitResult, Matrix, MultiStudyDataset};
use crate::vem::fit;

/// Relative tolerance for the identifiability report in `result.json`.
const IDENTIFIABILITY_TOL: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(name = "multirfm", version, about = "Multi-study robust factor model")]
struct Cli {
    /// TOML file of `key = value` settings named like the long flags.
    /// Flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads; all cores when unset.
    #[arg(long, global = true, env = "MULTIRFM_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset with its ground truth.
    Simulate(SimulateArgs),
    /// Fit the model with given factor counts.
    Fit(FitArgs),
    /// Choose factor counts by singular-value ratios.
    SelectFactors(SelectArgs),
    /// Score a fit against ground truth and/or its training data.
    Evaluate(EvaluateArgs),
    /// Fit on a random training split and report held-out prediction error.
    Predict(PredictArgs),
    /// Replicated scenario runs summarised as mean and sd per metric.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args, Default)]
struct FitOpts {
    /// Relative ELBO change that stops the iterations.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Candidate degrees of freedom, comma separated.
    #[arg(long, value_delimiter = ',')]
    nu_grid: Option<Vec<f64>>,
    /// Hold nu at this value instead of searching the grid.
    #[arg(long)]
    nu_fixed: Option<f64>,
}

#[derive(Debug, Args)]
struct CountOpts {
    /// Number of shared factors.
    #[arg(long)]
    q: Option<usize>,
    /// Study-specific factor counts, comma separated; one value applies to
    /// every study.
    #[arg(long, value_delimiter = ',')]
    qs: Option<Vec<usize>>,
    /// Take the counts from a `selection.json` written by `select-factors`.
    #[arg(long, conflicts_with_all = ["q", "qs"])]
    selection: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Preset name; explicit design flags override its fields.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Replicate index: fresh factors and errors, same loadings and means.
    #[arg(long)]
    rep: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Observations per study, comma separated.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    qs: Option<Vec<usize>>,
    #[arg(long)]
    rho_a: Option<f64>,
    #[arg(long)]
    rho_b: Option<f64>,
    /// One of student_t, gaussian, centered_exponential, centered_pareto.
    #[arg(long)]
    error_law: Option<String>,
    /// Degrees of freedom or Pareto shape.
    #[arg(long)]
    error_param: Option<f64>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// A directory of X_1.csv, X_2.csv, ... or one CSV per study.
    inputs: Vec<PathBuf>,
    #[command(flatten)]
    counts: CountOpts,
    #[command(flatten)]
    fit: FitOpts,
    /// Rotate to the diagonal-Gram normal form before writing.
    #[arg(long)]
    align: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SelectArgs {
    inputs: Vec<PathBuf>,
    #[arg(long)]
    q_max: Option<usize>,
    /// Upper bounds per study, comma separated; one value applies to every
    /// study.
    #[arg(long, value_delimiter = ',')]
    qs_max: Option<Vec<usize>>,
    #[command(flatten)]
    fit: FitOpts,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Output directory of `fit`.
    #[arg(long)]
    fit: PathBuf,
    /// Ground-truth directory (`truth/` under a `simulate` output).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Training data, for reconstruction error.
    #[arg(long, num_args = 1..)]
    data: Option<Vec<PathBuf>>,
    /// Where metrics.csv goes; defaults to the fit directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    inputs: Vec<PathBuf>,
    #[command(flatten)]
    counts: CountOpts,
    #[command(flatten)]
    fit: FitOpts,
    /// Share of each study held out.
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    reps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    fit: FitOpts,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A list setting in the config file: a number, an array or a comma list.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ListSetting<T> {
    One(T),
    Many(Vec<T>),
    Text(String),
}

impl<T: std::str::FromStr> ListSetting<T> {
    fn into_vec(self, key: &str) -> Result<Vec<T>, Failure> {
        match self {
            ListSetting::One(v) => Ok(vec![v]),
            ListSetting::Many(v) => Ok(v),
            ListSetting::Text(t) => t
                .split(',')
                .map(|x| x.trim().parse::<T>())
                .collect::<Result<_, _>>()
                .map_err(|_| Failure::Usage(format!("config key {key}: bad list {t:?}"))),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct FileConfig {
    out: Option<PathBuf>,
    seed: Option<u64>,
    threads: Option<usize>,
    scenario: Option<String>,
    rep: Option<u64>,
    reps: Option<u64>,
    q: Option<usize>,
    qs: Option<ListSetting<usize>>,
    q_max: Option<usize>,
    qs_max: Option<ListSetting<usize>>,
    eps: Option<f64>,
    max_iter: Option<usize>,
    nu_grid: Option<ListSetting<f64>>,
    nu_fixed: Option<f64>,
    align: Option<bool>,
    test_fraction: Option<f64>,
    n: Option<ListSetting<usize>>,
    p: Option<usize>,
    rho_a: Option<f64>,
    rho_b: Option<f64>,
    error_law: Option<String>,
    error_param: Option<f64>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownScenario(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

fn list_or<T: std::str::FromStr>(
    flag: Option<Vec<T>>,
    file: Option<ListSetting<T>>,
    key: &str,
) -> CliResult<Option<Vec<T>>> {
    match (flag, file) {
        (Some(v), _) => Ok(Some(v)),
        (None, Some(f)) => f.into_vec(key).map(Some),
        (None, None) => Ok(None),
    }
}

fn required<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| Failure::Usage(format!("missing --{flag}")))
}

/// Summary written to `result.json` by `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub q: usize,
    pub q_s: Vec<usize>,
    pub nu: f64,
    pub nu_searched: bool,
    pub iterations: usize,
    pub converged: bool,
    pub initial_elbo: f64,
    pub final_elbo: f64,
    /// Iterations whose ELBO fell below the previous one.
    pub elbo_decreases: usize,
    pub aligned: bool,
    /// All four conditions pass. Estimated (A, B_1) blocks are rarely
    /// exactly orthogonal, so this is usually false even after `--align`.
    pub conditions_all_pass: bool,
    #[serde(flatten)]
    pub identifiability: IdentifiabilityReport,
}

impl FitSummary {
    pub fn new(result: &FitResult, aligned: bool) -> Self {
        let counts = result.params.counts();
        let report = check_identifiability(&result.params, &counts, IDENTIFIABILITY_TOL);
        Self {
            q: counts.q,
            q_s: counts.q_s,
            nu: result.params.nu,
            nu_searched: result.diagnostics.nu_searched,
            iterations: result.iterations,
            converged: result.converged,
            initial_elbo: result.diagnostics.initial_elbo,
            final_elbo: result.final_elbo(),
            elbo_decreases: result.diagnostics.elbo_decreases,
            aligned,
            conditions_all_pass: report.all_pass(),
            identifiability: report,
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?;
            toml::from_str::<FileConfig>(&text)
                .map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };
    let threads = cli.threads.or(file.threads).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Simulate(a) => cmd_simulate(a, file),
        Command::Fit(a) => cmd_fit(a, file),
        Command::SelectFactors(a) => cmd_select(a, file),
        Command::Evaluate(a) => cmd_evaluate(a, file),
        Command::Predict(a) => cmd_predict(a, file),
        Command::Benchmark(a) => cmd_benchmark(a, file),
    })
}

fn fit_config(opts: FitOpts, seed: Option<u64>, file: &mut FileConfig) -> CliResult<FitConfig> {
    let defaults = FitConfig::default();
    let config = FitConfig {
        max_iter: opts.max_iter.or(file.max_iter).unwrap_or(defaults.max_iter),
        eps: opts.eps.or(file.eps).unwrap_or(defaults.eps),
        nu_grid: list_or(opts.nu_grid, file.nu_grid.take(), "nu-grid")?.unwrap_or(defaults.nu_grid),
        nu_fixed: opts.nu_fixed.or(file.nu_fixed),
        seed: seed.or(file.seed).unwrap_or(defaults.seed),
        lambda_floor: defaults.lambda_floor,
    };
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(config)
}

fn read_inputs(inputs: &[PathBuf]) -> CliResult<MultiStudyDataset> {
    if inputs.is_empty() {
        return usage("no input data given");
    }
    Ok(io::read_dataset(inputs)?)
}

/// Stretches a single value to every study.
fn per_study(values: Vec<usize>, n_studies: usize, flag: &str) -> CliResult<Vec<usize>> {
    match values.len() {
        1 => Ok(vec![values[0]; n_studies]),
        n if n == n_studies => Ok(values),
        n => usage(format!("--{flag} has {n} values for {n_studies} studies")),
    }
}

fn resolve_counts(opts: CountOpts, file: &mut FileConfig, n_studies: usize) -> CliResult<FactorCounts> {
    if let Some(path) = opts.selection {
        let sel: SelectionResult = io::read_json(&path)?;
        if sel.q_s_hat.len() != n_studies {
            return Err(Error::DimensionMismatch(format!(
                "{} has {} studies, data has {n_studies}",
                path.display(),
                sel.q_s_hat.len()
            ))
            .into());
        }
        return Ok(sel.counts());
    }
    let q = required(opts.q.or(file.q), "q")?;
    let qs = required(list_or(opts.qs, file.qs.take(), "qs")?, "qs")?;
    Ok(FactorCounts::new(q, per_study(qs, n_studies, "qs")?))
}

fn out_dir(flag: Option<PathBuf>, file: &mut FileConfig) -> CliResult<PathBuf> {
    let dir = required(flag.or(file.out.take()), "out")?;
    std::fs::create_dir_all(&dir).map_err(Error::from)?;
    Ok(dir)
}

#[derive(Serialize)]
struct Manifest<'a> {
    scenario: Option<&'a str>,
    replicate: u64,
    seed: u64,
    n: &'a [usize],
    p: usize,
    q: usize,
    q_s: &'a [usize],
    rho_a: f64,
    rho_b: f64,
    error_law: &'a str,
    error_param: Option<f64>,
    covariance_defined: bool,
}

fn cmd_simulate(args: SimulateArgs, mut file: FileConfig) -> CliResult<()> {
    let scenario = args.scenario.or(file.scenario.take());
    let base = match &scenario {
        Some(name) => Some(scenario_preset(name)?),
        None => None,
    };
    let pick = |flag: Option<f64>, file: Option<f64>, preset: Option<f64>, name: &str| {
        required(flag.or(file).or(preset), name)
    };
    let law_name = args.error_law.or(file.error_law.take());
    let law_param = args.error_param.or(file.error_param);
    let error_law = match (law_name, &base) {
        (Some(name), _) => ErrorLaw::from_parts(&name, law_param).map_err(|e| Failure::Usage(e.to_string()))?,
        (None, Some(b)) => match (b.error_law, law_param) {
            (ErrorLaw::StudentT { .. }, Some(nu)) => ErrorLaw::StudentT { nu },
            (ErrorLaw::CenteredPareto { .. }, Some(alpha)) => ErrorLaw::CenteredPareto { alpha },
            (law, _) => law,
        },
        (None, None) => return usage("missing --scenario or --error-law"),
    };
    let spec = SimulationSpec {
        n: required(
            list_or(args.n, file.n.take(), "n")?.or_else(|| base.as_ref().map(|b| b.n.clone())),
            "n",
        )?,
        p: required(args.p.or(file.p).or(base.as_ref().map(|b| b.p)), "p")?,
        q: required(args.q.or(file.q).or(base.as_ref().map(|b| b.q)), "q")?,
        q_s: required(
            list_or(args.qs, file.qs.take(), "qs")?.or_else(|| base.as_ref().map(|b| b.q_s.clone())),
            "qs",
        )?,
        rho_a: pick(args.rho_a, file.rho_a, base.as_ref().map(|b| b.rho_a), "rho-a")?,
        rho_b: pick(args.rho_b, file.rho_b, base.as_ref().map(|b| b.rho_b), "rho-b")?,
        error_law,
        seed: args.seed.or(file.seed).unwrap_or(FitConfig::default().seed),
    };
    let spec = SimulationSpec {
        q_s: per_study(spec.q_s.clone(), spec.n.len(), "qs")?,
        ..spec
    };
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let rep = args.rep.or(file.rep).unwrap_or(0);
    let out = out_dir(args.out, &mut file)?;

    let (data, truth) = simulate_replicate(&spec, rep)?;
    io::write_dataset(&out, &data)?;
    let truth_dir = out.join("truth");
    io::write_parameters(&truth_dir, &truth.params0)?;
    io::write_scores(&truth_dir, &truth.f, &truth.h)?;
    io::write_json(
        &out.join("manifest.json"),
        &Manifest {
            scenario: scenario.as_deref(),
            replicate: rep,
            seed: spec.seed,
            n: &spec.n,
            p: spec.p,
            q: spec.q,
            q_s: &spec.q_s,
            rho_a: spec.rho_a,
            rho_b: spec.rho_b,
            error_law: spec.error_law.name(),
            error_param: spec.error_law.parameter(),
            covariance_defined: truth.covariance_defined,
        },
    )?;
    println!("wrote {} studies to {}", data.n_studies(), out.display());
    Ok(())
}

fn write_fit(out: &Path, result: &FitResult, aligned: bool) -> CliResult<FitSummary> {
    io::write_parameters(out, &result.params)?;
    io::write_scores(out, &result.factor_scores_shared, &result.factor_scores_specific)?;
    let trace = Matrix::from_column_slice(result.elbo_trace.len(), 1, &result.elbo_trace);
    io::write_matrix_csv(&out.join("elbo_trace.csv"), &trace, Some(&["elbo".to_string()]))?;
    let summary = FitSummary::new(result, aligned);
    io::write_json(&out.join("result.json"), &summary)?;
    Ok(summary)
}

fn cmd_fit(args: FitArgs, mut file: FileConfig) -> CliResult<()> {
    let config = fit_config(args.fit, args.seed, &mut file)?;
    let do_align = args.align || file.align.unwrap_or(false);
    let out = out_dir(args.out, &mut file)?;
    let data = read_inputs(&args.inputs)?;
    let counts = resolve_counts(args.counts, &mut file, data.n_studies())?;
    let mut result = fit(&data, &counts, &config)?;
    if do_align {
        result = align(&result)?;
    }
    let summary = write_fit(&out, &result, do_align)?;
    if summary.elbo_decreases > 0 {
        eprintln!("warning: the lower bound decreased in {} iterations", summary.elbo_decreases);
    }
    println!(
        "nu = {}, iterations = {}, converged = {}",
        summary.nu, summary.iterations, summary.converged
    );
    Ok(())
}

fn cmd_select(args: SelectArgs, mut file: FileConfig) -> CliResult<()> {
    let config = fit_config(args.fit, args.seed, &mut file)?;
    let out = out_dir(args.out, &mut file)?;
    let data = read_inputs(&args.inputs)?;
    let q_max = args.q_max.or(file.q_max).unwrap_or(DEFAULT_Q_MAX);
    let qs_max = list_or(args.qs_max, file.qs_max.take(), "qs-max")?.unwrap_or(vec![DEFAULT_QS_MAX]);
    let qs_max = per_study(qs_max, data.n_studies(), "qs-max")?;
    let sel = select_factor_counts(&data, q_max, &qs_max, &config)?;
    io::write_json(&out.join("selection.json"), &sel)?;
    println!("q = {}, q_s = {:?}", sel.q_hat, sel.q_s_hat);
    Ok(())
}

fn write_metrics(path: &Path, rows: &[(String, f64)]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    w.write_record(["metric", "value"]).map_err(Error::from)?;
    for (name, value) in rows {
        w.write_record([name.as_str(), &io::format_value(*value)]).map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}

fn trace_rows(m: &TraceMetrics) -> Vec<(String, f64)> {
    vec![
        ("Tr_A".into(), m.tr_a),
        ("MTr_F".into(), m.mtr_f),
        ("MTr_B".into(), m.mtr_b),
        ("MTr_H".into(), m.mtr_h),
    ]
}

fn read_factor_set(dir: &Path) -> CliResult<FactorSet> {
    let n_studies = io::count_studies(dir);
    if n_studies == 0 {
        return Err(Error::Io(format!("no B_1.csv in {}", dir.display())).into());
    }
    let a = io::read_matrix_csv(&dir.join("A.csv"))?.0;
    let b = (1..=n_studies)
        .map(|k| io::read_matrix_csv(&dir.join(format!("B_{k}.csv"))).map(|r| r.0))
        .collect::<Result<Vec<_>, _>>()?;
    let (f, h) = io::read_scores(dir, n_studies)?;
    Ok(FactorSet { a, b, f, h })
}

fn cmd_evaluate(args: EvaluateArgs, mut file: FileConfig) -> CliResult<()> {
    if args.truth.is_none() && args.data.is_none() {
        return usage("nothing to evaluate: pass --truth and/or --data");
    }
    let out = match args.out.or(file.out.take()) {
        Some(dir) => {
            std::fs::create_dir_all(&dir).map_err(Error::from)?;
            dir
        }
        None => args.fit.clone(),
    };
    let mut rows = Vec::new();
    if let Some(truth_dir) = &args.truth {
        let estimate = read_factor_set(&args.fit)?;
        let truth = read_factor_set(truth_dir)?;
        rows.extend(trace_rows(&compare_factor_sets(&estimate, &truth)?));
    }
    if let Some(inputs) = &args.data {
        let data = read_inputs(inputs)?;
        let summary: FitSummary = io::read_json(&args.fit.join("result.json"))?;
        let params = io::read_parameters(&args.fit, summary.nu)?;
        let (f, h) = io::read_scores(&args.fit, params.n_studies())?;
        for (s, err) in reconstruction_error_from(&params, &f, &h, &data)?.iter().enumerate() {
            rows.push((format!("RE_{}", s + 1), err.overall));
        }
    }
    write_metrics(&out.join("metrics.csv"), &rows)?;
    for (name, value) in &rows {
        println!("{name} = {value:.6}");
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs, mut file: FileConfig) -> CliResult<()> {
    let config = fit_config(args.fit, args.seed, &mut file)?;
    let out = out_dir(args.out, &mut file)?;
    let data = read_inputs(&args.inputs)?;
    let counts = resolve_counts(args.counts, &mut file, data.n_studies())?;
    let fraction = args.test_fraction.or(file.test_fraction).unwrap_or(0.2);
    if !(fraction > 0.0 && fraction < 1.0) {
        return usage("--test-fraction must lie in (0, 1)");
    }
    let (train, test) = split_dataset(&data, fraction, config.seed)?;
    let result = fit(&train, &counts, &config)?;
    let rows: Vec<(String, f64)> = prediction_error(&result.params, &test)?
        .iter()
        .enumerate()
        .map(|(s, e)| (format!("PE_{}", s + 1), e.overall))
        .collect();
    write_metrics(&out.join("metrics.csv"), &rows)?;
    for (name, value) in &rows {
        println!("{name} = {value:.6}");
    }
    Ok(())
}

struct ReplicateOutcome {
    metrics: TraceMetrics,
    nu: f64,
    iterations: usize,
    converged: bool,
    seconds: f64,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn cmd_benchmark(args: BenchmarkArgs, mut file: FileConfig) -> CliResult<()> {
    let name = required(args.scenario.or(file.scenario.take()), "scenario")?;
    let seed = args.seed.or(file.seed);
    let config = fit_config(args.fit, seed, &mut file)?;
    let spec = scenario_preset(&name)?.with_seed(config.seed);
    let reps = args.reps.or(file.reps).unwrap_or(20);
    if reps == 0 {
        return usage("--reps must be positive");
    }
    let out = out_dir(args.out, &mut file)?;

    let outcomes = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let (data, truth) = simulate_replicate(&spec, rep)?;
            let start = Instant::now();
            let result = fit(&data, &spec.counts(), &config)?;
            let seconds = start.elapsed().as_secs_f64();
            Ok(ReplicateOutcome {
                metrics: trace_metrics(&result, &truth)?,
                nu: result.params.nu,
                iterations: result.iterations,
                converged: result.converged,
                seconds,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;

    let columns: [(&str, fn(&ReplicateOutcome) -> f64); 6] = [
        ("Tr_A", |o| o.metrics.tr_a),
        ("MTr_F", |o| o.metrics.mtr_f),
        ("MTr_B", |o| o.metrics.mtr_b),
        ("MTr_H", |o| o.metrics.mtr_h),
        ("nu", |o| o.nu),
        ("iterations", |o| o.iterations as f64),
    ];

    let mut summary = csv::Writer::from_path(out.join("benchmark.csv")).map_err(Error::from)?;
    summary.write_record(["metric", "mean", "sd"]).map_err(Error::from)?;
    for (label, get) in &columns {
        let values: Vec<f64> = outcomes.iter().map(get).collect();
        let (mean, sd) = mean_sd(&values);
        summary
            .write_record([label.to_string(), io::format_value(mean), io::format_value(sd)])
            .map_err(Error::from)?;
        println!("{label:<10} {mean:.4} ({sd:.1e})");
    }
    summary.flush().map_err(Error::from)?;

    let mut per_rep = csv::Writer::from_path(out.join("replicates.csv")).map_err(Error::from)?;
    let mut header = vec!["replicate".to_string()];
    header.extend(columns.iter().map(|(l, _)| l.to_string()));
    header.push("converged".into());
    per_rep.write_record(&header).map_err(Error::from)?;
    for (rep, o) in outcomes.iter().enumerate() {
        let mut row = vec![rep.to_string()];
        row.extend(columns.iter().map(|(_, get)| io::format_value(get(o))));
        row.push(o.converged.to_string());
        per_rep.write_record(&row).map_err(Error::from)?;
    }
    per_rep.flush().map_err(Error::from)?;

    // Wall-clock lives apart so the two tables above are reproducible.
    let mut timing = csv::Writer::from_path(out.join("timing.csv")).map_err(Error::from)?;
    timing.write_record(["replicate", "seconds"]).map_err(Error::from)?;
    for (rep, o) in outcomes.iter().enumerate() {
        timing
            .write_record([rep.to_string(), format!("{:.3}", o.seconds)])
            .map_err(Error::from)?;
    }
    timing.flush().map_err(Error::from)?;
    Ok(())
}


//! Command-line front end. [`run`] never panics on bad input; it maps every
//! failure onto an exit code: 0 success, 2 usage, 3 data, 4 numerical.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::estimator::{fit, select_rho, FitConfig, QuantileModel};
use crate::funcdata::{load_dataset_from_paths, read_curves};
use crate::quadrature::QuadratureRule;
use crate::simharness::{coverage_experiment, rate_experiment, simulate_dataset, Covariate, Noise, PsiTrue, SimConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "funqr", version, about = "Penalized spline quantile regression on functional covariates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model from curves and responses.
    Fit(FitCmd),
    /// Predict quantiles for new curves.
    Predict(PredictCmd),
    /// Write a simulated dataset and its true coefficient function.
    Simulate(SimulateCmd),
    /// Monte Carlo error-decay experiment.
    Rates(RatesCmd),
    /// Out-of-sample quantile coverage on simulated data.
    Coverage(CoverageCmd),
}

/// Estimator flags shared by `fit` and `coverage`.
#[derive(Debug, Clone, Default, Args)]
struct ModelFlags {
    /// Quantile level in (0, 1).
    #[arg(long)]
    alpha: Option<f64>,
    /// Number of knot intervals.
    #[arg(long)]
    k: Option<usize>,
    /// Spline degree.
    #[arg(long)]
    degree: Option<usize>,
    /// Penalty derivative order.
    #[arg(long)]
    m: Option<usize>,
    /// Penalty weight.
    #[arg(long)]
    rho: Option<f64>,
    /// trapezoid or simpson.
    #[arg(long)]
    quadrature: Option<QuadratureRule>,
    /// Choose k and rho from the sample size (needs --p).
    #[arg(long)]
    auto: bool,
    /// Assumed smoothness for --auto.
    #[arg(long)]
    p: Option<usize>,
    /// Keep going when the solver does not converge.
    #[arg(long)]
    allow_nonconverged: bool,
    /// JSON file with default values for any flag.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Simulation design flags.
#[derive(Debug, Clone, Default, Args)]
struct DesignFlags {
    /// brownian or kl:J.
    #[arg(long)]
    covariate: Option<Covariate>,
    /// sine, parabola or cubic.
    #[arg(long)]
    psi: Option<PsiTrue>,
    /// gaussian:SIGMA, student_t:DF or exponential:SCALE.
    #[arg(long)]
    noise: Option<Noise>,
    /// Number of grid points.
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct FitCmd {
    #[arg(long)]
    curves: Option<PathBuf>,
    #[arg(long)]
    responses: Option<PathBuf>,
    /// Model JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    /// Cross-validate rho over this list instead of using --rho.
    #[arg(long, value_delimiter = ',')]
    rho_grid: Option<Vec<f64>>,
    #[arg(long)]
    folds: Option<usize>,
    /// Seed for the fold assignment.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct PredictCmd {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    curves: Option<PathBuf>,
    /// CSV output (id, quantile_prediction).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateCmd {
    /// Sample size.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[command(flatten)]
    design: DesignFlags,
    /// Output prefix: PREFIX_curves.csv, PREFIX_responses.csv, PREFIX_truth.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RatesCmd {
    /// Assumed smoothness for the auto rule.
    #[arg(long)]
    p: Option<usize>,
    /// Increasing sample sizes.
    #[arg(long, value_delimiter = ',')]
    ns: Option<Vec<usize>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    quadrature: Option<QuadratureRule>,
    #[command(flatten)]
    design: DesignFlags,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output prefix: PREFIX.csv and PREFIX.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CoverageCmd {
    /// Training sample size.
    #[arg(long)]
    n: Option<usize>,
    /// Number of fresh test pairs.
    #[arg(long)]
    test_size: Option<usize>,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    design: DesignFlags,
    #[arg(long)]
    jobs: Option<usize>,
    /// JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Values a `--config` file may provide; keys are the flag names.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct ConfigFile {
    curves: Option<PathBuf>,
    responses: Option<PathBuf>,
    model: Option<PathBuf>,
    out: Option<PathBuf>,
    alpha: Option<f64>,
    k: Option<usize>,
    degree: Option<usize>,
    m: Option<usize>,
    rho: Option<f64>,
    quadrature: Option<QuadratureRule>,
    auto: Option<bool>,
    p: Option<usize>,
    ns: Option<Vec<usize>>,
    reps: Option<usize>,
    seed: Option<u64>,
    jobs: Option<usize>,
    folds: Option<usize>,
    rho_grid: Option<Vec<f64>>,
    allow_nonconverged: Option<bool>,
    n: Option<usize>,
    test_size: Option<usize>,
    covariate: Option<String>,
    psi: Option<String>,
    noise: Option<String>,
    grid_size: Option<usize>,
}

/// Failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parameter(_) | Error::UnsupportedLaw(_) => EXIT_USAGE,
        Error::SolverSingular | Error::NotConverged { .. } => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Fit(cmd) => run_fit(cmd),
        Command::Predict(cmd) => run_predict(cmd),
        Command::Simulate(cmd) => run_simulate(cmd),
        Command::Rates(cmd) => run_rates(cmd),
        Command::Coverage(cmd) => run_coverage(cmd),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn load_config(path: Option<&Path>) -> std::result::Result<ConfigFile, Failure> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn parse_opt<T: std::str::FromStr<Err = Error>>(s: Option<&String>) -> std::result::Result<Option<T>, Failure> {
    s.map(|v| v.parse::<T>().map_err(|e| Failure::usage(e.to_string()))).transpose()
}

fn required<T>(value: Option<T>, flag: &str) -> std::result::Result<T, Failure> {
    value.ok_or_else(|| Failure::usage(format!("missing required flag --{flag}")))
}

fn create(path: &Path) -> std::result::Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(path).map_err(Error::from)?))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn with_jobs<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> std::result::Result<R, Failure> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(Failure::usage("--jobs must be >= 1")),
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j)
                .build()
                .map_err(|e| Failure::usage(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Layers defaults, config file and flags into a [`FitConfig`].
fn fit_config(flags: &ModelFlags, file: &ConfigFile) -> std::result::Result<FitConfig<f64>, Failure> {
    let mut cfg = FitConfig::<f64>::default();
    cfg.alpha = flags.alpha.or(file.alpha).unwrap_or(cfg.alpha);
    cfg.intervals = flags.k.or(file.k).unwrap_or(cfg.intervals);
    cfg.degree = flags.degree.or(file.degree).unwrap_or(cfg.degree);
    cfg.penalty_order = flags.m.or(file.m).unwrap_or(cfg.penalty_order);
    cfg.rho = flags.rho.or(file.rho).unwrap_or(cfg.rho);
    cfg.quadrature = flags.quadrature.or(file.quadrature).unwrap_or(cfg.quadrature);
    cfg.auto_k_rho = flags.auto || file.auto.unwrap_or(false);
    let p = flags.p.or(file.p);
    if cfg.auto_k_rho {
        cfg.smoothness = required(p, "p")?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn design(flags: &DesignFlags, file: &ConfigFile, base: SimConfig) -> std::result::Result<SimConfig, Failure> {
    Ok(SimConfig {
        covariate: flags
            .covariate
            .or(parse_opt(file.covariate.as_ref())?)
            .unwrap_or(base.covariate),
        psi: flags.psi.or(parse_opt(file.psi.as_ref())?).unwrap_or(base.psi),
        noise: flags.noise.or(parse_opt(file.noise.as_ref())?).unwrap_or(base.noise),
        grid_size: flags.grid_size.or(file.grid_size).unwrap_or(base.grid_size),
        seed: flags.seed.or(file.seed).unwrap_or(base.seed),
        ..base
    })
}

fn check_converged(model: &QuantileModel<f64>, allow: bool) -> Outcome {
    let diag = model.diagnostics();
    if diag.converged || allow {
        return Ok(());
    }
    Err(Failure {
        code: EXIT_NUMERICAL,
        message: format!(
            "solver did not converge after {} iterations (pass --allow-nonconverged to keep the result)",
            diag.iterations
        ),
    })
}

fn run_fit(cmd: FitCmd) -> Outcome {
    let file = load_config(cmd.model.config.as_deref())?;
    let curves = required(cmd.curves.or(file.curves.clone()), "curves")?;
    let responses = required(cmd.responses.or(file.responses.clone()), "responses")?;
    let out = required(cmd.out.or(file.out.clone()), "out")?;
    let mut cfg = fit_config(&cmd.model, &file)?;
    let allow = cmd.model.allow_nonconverged || file.allow_nonconverged.unwrap_or(false);

    let data = load_dataset_from_paths::<f64>(&curves, &responses)?;
    if let Some(grid) = cmd.rho_grid.or(file.rho_grid.clone()) {
        if cfg.auto_k_rho {
            return Err(Failure::usage("--rho-grid cannot be combined with --auto"));
        }
        let folds = cmd.folds.or(file.folds).unwrap_or(5);
        let seed = cmd.seed.or(file.seed).unwrap_or(0);
        cfg.rho = select_rho(&data.clone().center_curves()?, &cfg, &grid, folds, seed)?;
        println!("cross-validated rho = {}", cfg.rho);
    }
    let model = fit(&data, &cfg)?;
    check_converged(&model, allow)?;
    let mut w = create(&out)?;
    model.write_json(&mut w)?;
    w.flush().map_err(Error::from)?;

    let diag = model.diagnostics();
    println!(
        "fit n={} alpha={} k={} degree={} rho={} objective={} converged={} iterations={} lambda_min={:.3e}",
        data.len(),
        model.alpha(),
        model.basis().intervals(),
        model.basis().degree(),
        model.rho(),
        diag.objective_trace.last().copied().unwrap_or(f64::NAN),
        diag.converged,
        diag.iterations,
        diag.lambda_min
    );
    println!("model written to {}", out.display());
    Ok(())
}

fn run_predict(cmd: PredictCmd) -> Outcome {
    let file = load_config(cmd.config.as_deref())?;
    let model_path = required(cmd.model.or(file.model.clone()), "model")?;
    let curves_path = required(cmd.curves.or(file.curves.clone()), "curves")?;
    let out = required(cmd.out.or(file.out.clone()), "out")?;

    let model = QuantileModel::<f64>::read_json(File::open(&model_path).map_err(Error::from)?)?;
    let (grid, ids, curves) = read_curves::<f64, _>(File::open(&curves_path).map_err(Error::from)?)?;
    if grid.len() != model.grid().len() || grid.iter().zip(model.grid()).any(|(a, b)| a != b) {
        return Err(Error::GridMismatch(format!(
            "{} has a different grid from the model ({} vs {} points)",
            curves_path.display(),
            grid.len(),
            model.grid().len()
        ))
        .into());
    }
    let pred = model.predict_values(&curves)?;

    let mut w = csv::Writer::from_writer(create(&out)?);
    w.write_record(["id", "quantile_prediction"]).map_err(Error::from)?;
    for (id, p) in ids.iter().zip(&pred) {
        w.write_record([id.as_str(), &p.to_string()]).map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    println!("predicted {} curves at alpha={}; written to {}", pred.len(), model.alpha(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct Truth<'a> {
    config: &'a SimConfig,
    grid: Vec<f64>,
    psi: &'a [f64],
    noise_shift: f64,
}

fn run_simulate(cmd: SimulateCmd) -> Outcome {
    let file = load_config(cmd.config.as_deref())?;
    let out = required(cmd.out.or(file.out.clone()), "out")?;
    let base = SimConfig::default();
    let sim = SimConfig {
        n: cmd.n.or(file.n).unwrap_or(base.n),
        alpha: cmd.alpha.or(file.alpha).unwrap_or(base.alpha),
        ..design(&cmd.design, &file, base)?
    };
    sim.validate()?;
    let (data, psi) = simulate_dataset(&sim)?;

    let curves_path = with_suffix(&out, "_curves.csv");
    let responses_path = with_suffix(&out, "_responses.csv");
    let truth_path = with_suffix(&out, "_truth.json");
    data.write_curves_csv(create(&curves_path)?)?;
    data.write_responses_csv(create(&responses_path)?)?;
    let truth = Truth {
        config: &sim,
        grid: sim.grid(),
        psi: &psi,
        noise_shift: sim.noise.shift(sim.alpha),
    };
    let mut w = create(&truth_path)?;
    serde_json::to_writer_pretty(&mut w, &truth).map_err(Error::from)?;
    w.flush().map_err(Error::from)?;
    println!(
        "simulated n={} (covariate {}, psi {}, noise {}) seed={}; wrote {}, {}, {}",
        sim.n,
        sim.covariate,
        sim.psi,
        sim.noise,
        sim.seed,
        curves_path.display(),
        responses_path.display(),
        truth_path.display()
    );
    Ok(())
}

fn run_rates(cmd: RatesCmd) -> Outcome {
    let file = load_config(cmd.config.as_deref())?;
    let out = required(cmd.out.or(file.out.clone()), "out")?;
    let defaults = FitConfig::<f64>::default();
    let cfg = FitConfig {
        degree: cmd.degree.or(file.degree).unwrap_or(defaults.degree),
        penalty_order: cmd.m.or(file.m).unwrap_or(defaults.penalty_order),
        quadrature: cmd.quadrature.or(file.quadrature).unwrap_or(defaults.quadrature),
        smoothness: cmd.p.or(file.p).unwrap_or(defaults.smoothness),
        auto_k_rho: true,
        ..defaults
    };
    let base = SimConfig {
        alpha: cmd.alpha.or(file.alpha).unwrap_or(defaults.alpha),
        ..design(&cmd.design, &file, SimConfig::default())?
    };
    let ns = cmd.ns.or(file.ns.clone()).unwrap_or_else(|| vec![100, 200, 400, 800]);
    let reps = cmd.reps.or(file.reps).unwrap_or(20);

    let report = with_jobs(cmd.jobs.or(file.jobs), || rate_experiment(&base, &cfg, &ns, reps))??;
    let csv_path = with_suffix(&out, ".csv");
    let json_path = with_suffix(&out, ".json");
    let mut w = create(&csv_path)?;
    report.write_csv(&mut w)?;
    w.flush().map_err(Error::from)?;
    std::fs::write(&json_path, report.to_json()?).map_err(Error::from)?;

    println!("{:>6} {:>5} {:>12} {:>12}", "n", "used", "mean_err_n", "mean_err_2");
    for row in &report.rows {
        println!("{:>6} {:>5} {:>12.4e} {:>12.4e}", row.n, row.reps_used, row.mean_err_n, row.mean_err_2);
    }
    println!(
        "slope {:.3} (se {:.3}); reference {:.3}; written to {} and {}",
        report.slope_n,
        report.slope_se_n,
        report.reference_slope,
        csv_path.display(),
        json_path.display()
    );
    Ok(())
}

fn run_coverage(cmd: CoverageCmd) -> Outcome {
    let file = load_config(cmd.model.config.as_deref())?;
    let out = required(cmd.out.or(file.out.clone()), "out")?;
    let cfg = fit_config(&cmd.model, &file)?;
    let allow = cmd.model.allow_nonconverged || file.allow_nonconverged.unwrap_or(false);
    let sim = SimConfig {
        n: cmd.n.or(file.n).unwrap_or(1000),
        alpha: cfg.alpha,
        ..design(&cmd.design, &file, SimConfig::default())?
    };
    let test_size = cmd.test_size.or(file.test_size).unwrap_or(1000);

    let report = with_jobs(cmd.jobs.or(file.jobs), || coverage_experiment(&sim, &cfg, test_size))??;
    if !report.converged && !allow {
        return Err(Failure {
            code: EXIT_NUMERICAL,
            message: "solver did not converge (pass --allow-nonconverged to keep the result)".into(),
        });
    }
    std::fs::write(&out, serde_json::to_string_pretty(&report).map_err(Error::from)?).map_err(Error::from)?;
    println!(
        "coverage {:.4} (strict {:.4}) at alpha={} with n={}, test size {}; written to {}",
        report.coverage,
        report.coverage_strict,
        report.alpha,
        report.n_train,
        report.m_test,
        out.display()
    );
    Ok(())
}

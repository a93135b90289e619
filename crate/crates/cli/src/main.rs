use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use twoscale::bench::{self, ExperimentConfig, Target};
use twoscale::certify::{compute_constants, constant_step_params, BoundCurve};
use twoscale::chainlab::{center_offsets, generate_instance, validate_assumptions, InstanceOptions, MarkovLsaInstance};
use twoscale::matproc::Vector;
use twoscale::tsa::System;
use twoscale::Error;

const CONFIG_KEYS: &str = "\
CONFIG FILES
  TOML documents with the sections below. Unknown keys are rejected.

  [experiment]
    target            mountain_car | inverted_pendulum | synthetic
    instance          instance file (synthetic only; relative to the config)
    episodes          training episodes per run (synthetic: blocks of steps)
    steps_per_episode step cap per episode
    eval_every        episodes between checkpoints
    test_episodes     frozen-weight episodes per NEU evaluation (default 1)
    runs              independent runs; run r uses seed base_seed + r
    base_seed         default 0
    include_initial   also report the checkpoint at episode 0 (default false)
    discount          default 0.95
    pendulum_cost     squared | linear (default squared)
    fourier_order     default 3
    initial_value     every entry of the initial weights (default 0)
    output            result CSV path; per-run rows go to <stem>.runs.csv

  [schedule]
    kind = \"constant\"    mu, lambda             rates (mu^lambda, mu)
    kind = \"polynomial\"  rho0, alpha, beta      rates (rho0/(k+1)^alpha, rho0/(k+1)^beta)
    kind = \"adaptive\"    rho, sigma, xi, window, lambda

  [sweep]               (sweep only)
    parameter         a key of the [schedule] section
    values            list of values

  [bound]               (synth-run only)
    mus, lambda (1.5), steps, runs, seed (0), tail_fraction (0.5), records (100)

ENVIRONMENT
  TWOSCALE_THREADS  caps the number of worker threads

EXIT STATUS
  0 success, 2 configuration or input errors, 3 assumption-validation failures";

#[derive(Parser)]
#[command(name = "twoscale", version, about = "Two time-scale linear stochastic approximation toolkit", after_long_help = CONFIG_KEYS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate an instance and print its error-bound constants
    Certify(CertifyArgs),
    /// Run a synthetic-instance experiment (and the bound study if configured)
    SynthRun(RunArgs),
    /// Run a TDC experiment on Mountain Car or the inverted pendulum
    RlRun(RlArgs),
    /// Pair the runs of two configs that differ only in their schedule
    Compare(CompareArgs),
    /// Repeat an experiment over the [sweep] grid
    Sweep(RunArgs),
    /// Write a random instance satisfying the standing assumptions
    GenInstance(GenArgs),
}

#[derive(Args)]
struct CertifyArgs {
    instance: PathBuf,
    /// Constant step size: fast rate mu, slow rate mu^lambda
    #[arg(long, default_value_t = 0.02)]
    mu: f64,
    #[arg(long, default_value_t = 1.5)]
    lambda: f64,
    /// Every entry of the initial point (U0, V0)
    #[arg(long, default_value_t = 0.0)]
    initial_value: f64,
    /// Last step of the bound curve
    #[arg(long, default_value_t = 100_000)]
    steps: u64,
    /// Points on the bound curve
    #[arg(long, default_value_t = 100)]
    points: u64,
    /// Write the constants report here instead of stdout
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the "k,bound" CSV here instead of stdout
    #[arg(long)]
    bound_csv: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Overrides the config's output path
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RlArgs {
    /// Config file; omit when using --preset
    #[arg(required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Named configuration, e.g. mountain-car-adaptive or pendulum-polynomial-desk
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Overrides the number of runs
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    config_a: PathBuf,
    config_b: PathBuf,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 2)]
    dim_u: usize,
    #[arg(long, default_value_t = 2)]
    dim_v: usize,
    #[arg(long, default_value_t = 4)]
    states: usize,
    /// Spectral margin of the steady-state matrices
    #[arg(long, default_value_t = 0.3)]
    margin: f64,
    /// Weight of the state-dependent part of each transition row
    #[arg(long, default_value_t = 0.5)]
    chain_memory: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::ConfigInvalid(_)
        | Error::MismatchedConfigs(_)
        | Error::Parse(_)
        | Error::Io(_)
        | Error::DimensionMismatch(_)
        | Error::InvalidArgument(_) => 2,
        Error::AssumptionViolation(_)
        | Error::NotHurwitz { .. }
        | Error::Reducible
        | Error::Periodic
        | Error::NonMixing { .. }
        | Error::SingularAvv(_)
        | Error::SingularSystem(_)
        | Error::DegenerateWeights { .. }
        | Error::NoValidKappa2 { .. }
        | Error::ConditionViolated(_) => 3,
        _ => 1,
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), Error> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_instance(path: &Path) -> Result<MarkovLsaInstance, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    MarkovLsaInstance::from_text(&text)
}

fn runs_path(table: &Path) -> PathBuf {
    let stem = table.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    table.with_file_name(format!("{stem}.runs.csv"))
}

fn certify(args: &CertifyArgs) -> Result<(), Error> {
    let instance = read_instance(&args.instance)?;
    let (eps, alpha, beta) = constant_step_params(args.mu, args.lambda);
    let validation = validate_assumptions(&instance, eps, alpha, beta);
    if !validation.all_passed() {
        eprint!("{validation}");
        let failed: Vec<_> = validation.failures().map(|c| c.id).collect();
        return Err(Error::AssumptionViolation(format!(
            "failed assumptions: {}",
            failed.join(", ")
        )));
    }
    // bounds concern the error Θ − Θ*, i.e. the centered instance
    let (centered, _) = center_offsets(&instance)?;
    let system = System::new(centered)?;
    let u0 = Vector::from_element(instance.dim_u(), args.initial_value);
    let v0 = Vector::from_element(instance.dim_v(), args.initial_value);
    let constants = compute_constants(&system, eps, alpha, beta, &system.theta(&u0, &v0).theta())?;
    let points = args.points.max(1);
    let ks = (0..=points).map(|i| constants.tau as u64 + i * args.steps.saturating_sub(constants.tau as u64) / points);
    let mut ks: Vec<u64> = ks.collect();
    ks.dedup();
    let curve = BoundCurve::new(&constants, ks)?;
    emit(args.report.as_deref(), &constants.to_string())?;
    emit(args.bound_csv.as_deref(), &curve.to_csv())
}

fn write_result(result: &bench::ExperimentResult, output: Option<&Path>) -> Result<(), Error> {
    match output.or(result.config.experiment.output.as_deref()) {
        Some(p) => {
            emit(Some(p), &result.table_csv())?;
            emit(Some(&runs_path(p)), &result.runs_csv())
        }
        None => emit(None, &result.table_csv()),
    }
}

fn synth_run(args: &RunArgs) -> Result<(), Error> {
    let config = ExperimentConfig::load(&args.config)?;
    if config.experiment.target != Target::Synthetic {
        return Err(Error::ConfigInvalid(
            "synth-run needs target = \"synthetic\"; use rl-run for environments".into(),
        ));
    }
    let result = bench::run_experiment(&config)?;
    write_result(&result, args.output.as_deref())?;
    if let Some(b) = &config.bound {
        let instance = read_instance(config.experiment.instance.as_deref().expect("validated"))?;
        let report = bench::synth_bound_experiment(&instance, b, config.experiment.initial_value)?;
        match args.output.as_deref().or(config.experiment.output.as_deref()) {
            Some(p) => {
                let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
                emit(
                    Some(&p.with_file_name(format!("{stem}.bound.csv"))),
                    &report.summary_csv(),
                )?;
                emit(
                    Some(&p.with_file_name(format!("{stem}.curves.csv"))),
                    &report.curves_csv(),
                )?;
            }
            None => emit(None, &report.summary_csv())?,
        }
    }
    Ok(())
}

fn rl_run(args: &RlArgs) -> Result<(), Error> {
    let mut config = match (&args.config, &args.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => bench::preset(name)?,
        (None, None) => return Err(Error::ConfigInvalid("give a config file or --preset".into())),
    };
    if config.experiment.target == Target::Synthetic {
        return Err(Error::ConfigInvalid(
            "rl-run needs an environment target; use synth-run for instances".into(),
        ));
    }
    if let Some(r) = args.runs {
        config.experiment.runs = r;
    }
    let result = bench::run_experiment(&config)?;
    write_result(&result, args.output.as_deref())
}

fn compare(args: &CompareArgs) -> Result<(), Error> {
    let a = ExperimentConfig::load(&args.config_a)?;
    let b = ExperimentConfig::load(&args.config_b)?;
    let report = bench::compare_schedules(&a, &b)?;
    emit(args.output.as_deref(), &report.to_csv())
}

fn sweep(args: &RunArgs) -> Result<(), Error> {
    let config = ExperimentConfig::load(&args.config)?;
    let report = bench::sweep(&config)?;
    emit(args.output.as_deref(), &report.to_csv())?;
    if let Some(best) = report.best() {
        eprintln!("best {} = {best}", report.parameter);
    }
    Ok(())
}

fn gen_instance(args: &GenArgs) -> Result<(), Error> {
    let mut opts = InstanceOptions::new(args.dim_u, args.dim_v, args.states, args.margin);
    opts.chain_memory = args.chain_memory;
    let instance = generate_instance(&opts, args.seed)?;
    emit(args.output.as_deref(), &instance.to_text())
}

fn configure_threads() -> Result<(), Error> {
    let Ok(value) = std::env::var("TWOSCALE_THREADS") else {
        return Ok(());
    };
    let n: usize =
        value.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
            Error::ConfigInvalid(format!("TWOSCALE_THREADS must be a positive integer, got '{value}'"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::ConfigInvalid(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = configure_threads().and_then(|()| match &cli.command {
        Command::Certify(a) => certify(a),
        Command::SynthRun(a) => synth_run(a),
        Command::RlRun(a) => rl_run(a),
        Command::Compare(a) => compare(a),
        Command::Sweep(a) => sweep(a),
        Command::GenInstance(a) => gen_instance(a),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

//! `scfo`: command-line front end for the feasible-side experimental
//! optimizer.

use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use scfo_core::benchmarks::{derived_optimum, summarize};
use scfo_core::bounds::{bounds_report, validate_lipschitz};
use scfo_core::fj::{certify_terminal, fj_error, FjCertificate, MAX_SPHERE_DIM};
use scfo_core::io::{
    load_problem, trajectory_csv, trajectory_json, LoadedProblem, PlantSource, ProblemFile,
    RunFile, TargetSpec,
};
use scfo_core::model::Simulated;
use scfo_core::protocol::{serve, StreamOracle};
use scfo_core::{
    run, Adaptation, AnalyticPlant, BuiltinPlant, Ceilings, Error, Measurement, Normalization,
    ProblemSpec, RunConfig, RunFailure, Summary, Trajectory,
};

#[derive(Parser)]
#[command(name = "scfo", version, about = "Feasible-side experimental optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the optimizer on a problem file with the settings of a run file.
    Run {
        problem: PathBuf,
        run: PathBuf,
        #[command(flatten)]
        overrides: RunOverrides,
    },
    /// Run a builtin benchmark end to end and write its trajectory and summary.
    Bench {
        name: BuiltinPlant,
        #[command(flatten)]
        overrides: RunOverrides,
        /// Also write plot_data.csv with the cost, distance and path series.
        #[arg(long)]
        plot_data: bool,
    },
    /// Certificates for points, trajectories and problem data.
    Certify {
        #[command(subcommand)]
        what: Certify,
    },
    /// Check the Lipschitz constants of a builtin plant against its derivatives.
    ValidateLipschitz {
        /// Builtin name or problem file with a builtin plant.
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random points sampled in addition to the box corners.
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        /// Multiply every constant by this factor before checking.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    /// Answer protocol requests on stdin/stdout with a builtin plant.
    ServePlant {
        name: BuiltinPlant,
        /// Stop after this many requests.
        #[arg(long)]
        limit: Option<usize>,
    },
}

#[derive(Subcommand)]
enum Certify {
    /// FJ error at a point (`x1,x2,...` or a JSON array file) or at the
    /// terminal point of a trajectory JSON file.
    Fj {
        /// Problem file or builtin name.
        problem: String,
        point: String,
        #[arg(long, value_enum, default_value_t = FjMode::Fixed)]
        fj_mode: FjMode,
    },
    /// Growth bounds, gain floors and iteration bounds per parameter level.
    Bounds {
        /// Problem file or builtin name.
        problem: String,
        /// Highest parameter level to report.
        #[arg(long, default_value_t = 10)]
        max_halvings: u32,
        /// Known lower bound on the cost, enabling the iteration bound.
        #[arg(long, allow_hyphen_values = true)]
        phi_lower: Option<f64>,
        /// Measurement at u0 (JSON), required when the plant is not builtin.
        #[arg(long)]
        measurement: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunOverrides {
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    max_halvings: Option<u32>,
    /// Output directory for trajectory and summary files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `box_center`, `file:<path>` or a comma-separated point.
    #[arg(long, allow_hyphen_values = true)]
    target: Option<String>,
    #[arg(long, value_enum, default_value_t = FjMode::Fixed)]
    fj_mode: FjMode,
}

#[derive(Clone, Copy, ValueEnum)]
enum FjMode {
    Sphere,
    Fixed,
}

impl From<FjMode> for Normalization {
    fn from(m: FjMode) -> Self {
        match m {
            FjMode::Sphere => Normalization::UnitSphere,
            FjMode::Fixed => Normalization::FixedCostMultiplier,
        }
    }
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
enum Failure {
    /// Bad input or a rejected check: exit 1.
    Invalid(String),
    /// Anything else: exit 2.
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(ref io) if io.kind() == io::ErrorKind::NotFound => {
                Failure::Invalid(e.to_string())
            }
            Error::Io(_) | Error::Numerical(_) | Error::IterationCap { .. } | Error::Infeasible => {
                Failure::Internal(e.to_string())
            }
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Internal(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Internal(e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SCFO_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Run { problem, run, overrides } => cmd_run(&problem, &run, overrides),
        Command::Bench { name, overrides, plot_data } => cmd_bench(name, overrides, plot_data),
        Command::Certify { what: Certify::Fj { problem, point, fj_mode } } => {
            cmd_certify_fj(&problem, &point, fj_mode.into())
        }
        Command::Certify {
            what: Certify::Bounds { problem, max_halvings, phi_lower, measurement },
        } => cmd_certify_bounds(&problem, max_halvings, phi_lower, measurement.as_deref()),
        Command::ValidateLipschitz { name, seed, samples, scale } => {
            cmd_validate(&name, seed, samples, scale)
        }
        Command::ServePlant { name, limit } => {
            let n = serve(&name, io::stdin().lock(), io::stdout().lock(), limit)?;
            log::info!("served {n} requests");
            Ok(())
        }
    }
}

/// A problem file path, `builtin:<name>` or a bare builtin name.
fn load_source(s: &str) -> CliResult<LoadedProblem> {
    let path = Path::new(s);
    if path.is_file() {
        return Ok(load_problem(path)?);
    }
    let name = s.strip_prefix("builtin:").unwrap_or(s);
    match name.parse::<BuiltinPlant>() {
        Ok(plant) => Ok(ProblemFile::from_builtin(plant).into_problem(Path::new("."))?),
        Err(_) => Err(Failure::Invalid(format!(
            "{s:?} is neither a problem file nor a builtin plant"
        ))),
    }
}

fn builtin_of(problem: &LoadedProblem) -> Option<BuiltinPlant> {
    match problem.plant {
        PlantSource::Builtin(p) => Some(p),
        PlantSource::Stdio => None,
    }
}

/// Write `contents` to `path` through a temporary file in the same
/// directory, so readers never see a partial file.
fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Failure::Internal(e.to_string()))?;
    Ok(())
}

fn write_trajectory(out: &Path, spec: &ProblemSpec, traj: &Trajectory) -> CliResult<()> {
    write_atomic(&out.join("trajectory.csv"), &trajectory_csv(spec, traj))?;
    write_atomic(&out.join("trajectory.json"), &trajectory_json(traj)?)?;
    Ok(())
}

fn apply_overrides(mut config: RunConfig, o: &RunOverrides, base: &Path) -> CliResult<RunConfig> {
    if let Some(b) = o.budget {
        config.budget = b;
    }
    if let Some(m) = o.max_halvings {
        config.adaptation = Adaptation::Adaptive { max_halvings: m };
    }
    if let Some(t) = &o.target {
        config = config.with_target(TargetSpec::parse_arg(t)?.resolve(base)?);
    }
    Ok(config)
}

fn ceilings_for(problem: &LoadedProblem, from_run: Option<Ceilings>) -> CliResult<Ceilings> {
    if let Some(c) = from_run.or_else(|| problem.ceilings.clone()) {
        return Ok(c);
    }
    match builtin_of(problem) {
        Some(plant) => Ok(Ceilings::from_grid_minima(&problem.spec, &plant, 1e-2)?),
        None => Err(Failure::Invalid(
            "ceilings are required when the plant is external".into(),
        )),
    }
}

/// Runs the engine, persisting whatever trajectory exists even on failure.
fn execute(
    spec: &ProblemSpec,
    plant: PlantSource,
    config: &RunConfig,
    out: &Path,
) -> CliResult<Trajectory> {
    let outcome = match plant {
        PlantSource::Builtin(p) => run(spec, Simulated(p), config),
        PlantSource::Stdio => {
            let oracle = StreamOracle::new(
                BufReader::new(io::stdin()),
                io::stdout(),
                spec.n_u(),
                spec.n_gp(),
            );
            run(spec, oracle, config)
        }
    };
    match outcome {
        Ok(traj) => {
            write_trajectory(out, spec, &traj)?;
            Ok(traj)
        }
        Err(RunFailure { trajectory, error }) => {
            if !trajectory.records.is_empty() {
                write_trajectory(out, spec, &trajectory)?;
                eprintln!(
                    "partial trajectory of {} records saved to {}",
                    trajectory.records.len(),
                    out.display()
                );
            }
            Err(error.into())
        }
    }
}

/// Print a line on stdout; a reader that went away is not an error.
fn emit(text: &str) -> CliResult<()> {
    match writeln!(io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// Where human-readable progress goes: stdout unless it carries the
/// plant protocol.
fn report(plant: PlantSource, text: &str) {
    match plant {
        PlantSource::Stdio => eprintln!("{text}"),
        PlantSource::Builtin(_) => {
            let _ = emit(text);
        }
    }
}

fn describe(traj: &Trajectory, cert: Option<&FjCertificate>) -> String {
    let last = traj.last().expect("runs produce at least one record");
    let mut s = format!(
        "{} records, {} steps, stop {:?}, final phi {:e} at {:?}",
        traj.records.len(),
        traj.stepped(),
        traj.stop,
        last.measurement.phi,
        last.u.as_slice()
    );
    if let Some(c) = cert {
        s.push_str(&format!(", FJ error {:e}", c.error));
    }
    s
}

fn cmd_run(problem_path: &Path, run_path: &Path, o: RunOverrides) -> CliResult<()> {
    let problem = load_problem(problem_path)?;
    let run_file = RunFile::load(run_path)?;
    let base = run_path.parent().unwrap_or(Path::new("."));
    let out = o
        .out
        .clone()
        .or_else(|| run_file.out.as_ref().map(|p| base.join(p)))
        .unwrap_or_else(|| PathBuf::from("."));
    let ceilings = ceilings_for(&problem, run_file.ceilings.clone())?;
    let config = run_file.into_config(ceilings, base)?;
    let config = apply_overrides(config, &o, base)?;
    let traj = execute(&problem.spec, problem.plant, &config, &out)?;
    let cert = certify_terminal(&traj, &problem.spec, o.fj_mode.into()).ok();
    report(problem.plant, &describe(&traj, cert.as_ref()));
    Ok(())
}

#[derive(Serialize)]
struct BenchReport<'a> {
    plant: &'a str,
    budget: usize,
    adaptation: Adaptation,
    reference_optimum: Vec<f64>,
    fj_error: Option<f64>,
    fj_mode: Normalization,
    summary: Summary,
}

fn plot_csv(summary: &Summary) -> String {
    let mut s = String::from("k,phi,distance");
    let n = summary.path.first().map_or(0, |p| p.len());
    for i in 1..=n {
        s.push_str(&format!(",u{i}"));
    }
    s.push('\n');
    for (k, (phi, u)) in summary.cost_series.iter().zip(&summary.path).enumerate() {
        let d = summary.distance_series.as_ref().map_or(f64::NAN, |d| d[k]);
        s.push_str(&format!("{k},{phi:?},{d:?}"));
        for v in u.iter() {
            s.push_str(&format!(",{v:?}"));
        }
        s.push('\n');
    }
    s
}

fn default_budget(plant: BuiltinPlant) -> usize {
    match plant {
        BuiltinPlant::ConstrainedQuadratic => 500,
        BuiltinPlant::Rosenbrock => 5000,
    }
}

fn cmd_bench(plant: BuiltinPlant, o: RunOverrides, plot_data: bool) -> CliResult<()> {
    let spec = plant.spec();
    let out = o.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let config = RunConfig::new(default_budget(plant), plant.ceilings());
    let config = apply_overrides(config, &o, Path::new("."))?;
    let traj = execute(&spec, PlantSource::Builtin(plant), &config, &out)?;
    let optimum = derived_optimum(&spec, &plant, 1e-3)?;
    let summary = summarize(&traj, Some(&optimum))?;
    let mode: Normalization = o.fj_mode.into();
    let cert = certify_terminal(&traj, &spec, mode).ok();
    if plot_data {
        write_atomic(&out.join("plot_data.csv"), &plot_csv(&summary))?;
    }
    let report_json = BenchReport {
        plant: plant.name(),
        budget: config.budget,
        adaptation: config.adaptation,
        reference_optimum: optimum.to_vec(),
        fj_error: cert.as_ref().map(|c| c.error),
        fj_mode: mode,
        summary,
    };
    write_atomic(&out.join("summary.json"), &serde_json::to_string_pretty(&report_json)?)?;
    emit(&format!("{}: {}", plant.name(), describe(&traj, cert.as_ref())))?;
    Ok(())
}

#[derive(Serialize)]
struct FjReport {
    point: Vec<f64>,
    error: f64,
    mode: Normalization,
    fixed_cost_multiplier: FjCertificate,
    /// Absent when there are too many multipliers to enumerate.
    unit_sphere: Option<FjCertificate>,
}

/// Point and measurement to certify: from a trajectory file's terminal
/// record, or from evaluating a builtin plant at an explicit point.
fn certification_target(problem: &LoadedProblem, arg: &str) -> CliResult<(Vec<f64>, Measurement)> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = std::fs::read_to_string(path)?;
        if let Ok(traj) = serde_json::from_str::<Trajectory>(&text) {
            let terminal = traj
                .terminal
                .clone()
                .or_else(|| traj.last().map(|r| r.u.clone()))
                .ok_or_else(|| Failure::Invalid("trajectory has no records".into()))?;
            let rec = traj
                .records
                .iter()
                .rev()
                .find(|r| r.u == terminal)
                .ok_or_else(|| Failure::Invalid("terminal point has no measurement".into()))?;
            return Ok((terminal.to_vec(), rec.measurement.clone()));
        }
        let point: Vec<f64> = serde_json::from_str(&text)
            .map_err(|e| Failure::Invalid(format!("{arg}: neither a trajectory nor a point: {e}")))?;
        return measured(problem, point);
    }
    let point = match TargetSpec::parse_arg(arg)? {
        TargetSpec::Point(p) => p,
        TargetSpec::Named(_) => {
            return Err(Failure::Invalid(format!("{arg:?} is not a point or file")))
        }
    };
    measured(problem, point)
}

fn measured(problem: &LoadedProblem, point: Vec<f64>) -> CliResult<(Vec<f64>, Measurement)> {
    let plant = builtin_of(problem).ok_or_else(|| {
        Failure::Invalid("certifying a bare point needs a builtin plant; pass a trajectory".into())
    })?;
    if point.len() != problem.spec.n_u() {
        return Err(Failure::Invalid(format!(
            "point has {} entries, problem has {}",
            point.len(),
            problem.spec.n_u()
        )));
    }
    let m = plant.evaluate(&point);
    Ok((point, m))
}

fn cmd_certify_fj(problem: &str, point: &str, mode: Normalization) -> CliResult<()> {
    let problem = load_source(problem)?;
    let (u, m) = certification_target(&problem, point)?;
    let spec = &problem.spec;
    let fixed = fj_error(&u, spec, &m, Normalization::FixedCostMultiplier)?;
    let n_mult = 1 + spec.n_gp() + spec.n_g() + 2 * spec.n_u();
    let sphere = if n_mult <= MAX_SPHERE_DIM {
        Some(fj_error(&u, spec, &m, Normalization::UnitSphere)?)
    } else {
        None
    };
    let error = match mode {
        Normalization::FixedCostMultiplier => fixed.error,
        Normalization::UnitSphere => sphere
            .as_ref()
            .map(|c| c.error)
            .ok_or_else(|| Failure::Invalid(format!("sphere mode supports at most {MAX_SPHERE_DIM} multipliers")))?,
    };
    let out = FjReport { point: u, error, mode, fixed_cost_multiplier: fixed, unit_sphere: sphere };
    emit(&serde_json::to_string_pretty(&out)?)?;
    Ok(())
}

fn cmd_certify_bounds(
    problem: &str,
    max_level: u32,
    phi_lower: Option<f64>,
    measurement: Option<&Path>,
) -> CliResult<()> {
    let problem = load_source(problem)?;
    let spec = &problem.spec;
    let m0 = match (measurement, builtin_of(&problem)) {
        (Some(path), _) => {
            let m: Measurement = serde_json::from_str(&std::fs::read_to_string(path)?)
                .map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
            m.validate(spec.n_u(), spec.n_gp())?;
            m
        }
        (None, Some(plant)) => plant.evaluate(spec.u0()),
        (None, None) => {
            return Err(Failure::Invalid(
                "--measurement is required when the plant is external".into(),
            ))
        }
    };
    let ceilings = ceilings_for(&problem, None)?;
    let report = bounds_report(spec, &ceilings, &m0.g_p, m0.phi, phi_lower, max_level)?;
    emit(&serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn cmd_validate(name: &str, seed: u64, samples: usize, scale: f64) -> CliResult<()> {
    let problem = load_source(name)?;
    let plant = builtin_of(&problem)
        .ok_or_else(|| Failure::Invalid("validation needs a builtin plant".into()))?;
    let spec = if scale == 1.0 {
        problem.spec
    } else {
        let lip = problem.spec.lipschitz().scaled(scale)?;
        problem.spec.with_lipschitz(lip)?
    };
    let report = validate_lipschitz(&spec, &plant, samples, seed);
    emit(&serde_json::to_string_pretty(&report)?)?;
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<String> = report.failures().map(|c| c.label.clone()).collect();
        Err(Failure::Invalid(format!("constants too small: {}", failed.join(", "))))
    }
}

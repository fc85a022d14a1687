//! `hdev`: power flow, scenario runs and run comparison from the command line.

mod compare;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hdev_core::coopt::{CoOptError, PenaltyKind};
use hdev_core::fleet::FleetError;
use hdev_core::io::{self, load_grid_case, load_scenario, write_results, IoError, ResultsBundle, RunMode, Scenario};
use hdev_core::powerflow::{solve_operating_point, PowerFlowError};
use serde::Serialize;

/// Environment variable naming the directory searched for relative input paths.
pub const FIXTURE_DIR_ENV: &str = "HDEV_FIXTURE_DIR";

/// Total vehicles of a paper-scale run, split evenly across fleets.
pub const PAPER_SCALE_VEHICLES: f64 = 30_000.0;

#[derive(Parser)]
#[command(name = "hdev", version, about = "Heavy-duty EV fleet and transmission grid co-optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the base-case power flow of a grid case.
    Powerflow {
        /// Grid case file.
        #[arg(default_value = "ieee24.json")]
        case: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Solve a scenario and write a results bundle.
    Run(RunArgs),
    /// Compare two results bundles of the same scenario.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Also write the report as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Coopt)]
    mode: Mode,
    /// Penalty kind; defaults to the scenario's.
    #[arg(long, value_enum)]
    penalty: Option<Penalty>,
    /// Overrides the sampler seed of the scenario.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Solve l1, l2 and linf concurrently into `<out>/<kind>`.
    #[arg(long, conflicts_with = "penalty")]
    all_penalties: bool,
    /// Also write plot_data.csv.
    #[arg(long)]
    emit_plot_data: bool,
    /// Vehicles per fleet.
    #[arg(long)]
    fleet_size: Option<f64>,
    /// Scale fleets to 30,000 vehicles in total.
    #[arg(long, conflicts_with = "fleet_size")]
    paper_scale: bool,
    #[arg(long)]
    enable_v2g: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Baseline,
    Coopt,
}

#[derive(Clone, Copy, ValueEnum)]
enum Penalty {
    L1,
    L2,
    Linf,
}

impl From<Penalty> for PenaltyKind {
    fn from(p: Penalty) -> Self {
        match p {
            Penalty::L1 => PenaltyKind::L1,
            Penalty::L2 => PenaltyKind::L2,
            Penalty::Linf => PenaltyKind::Linf,
        }
    }
}

/// A failure and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Exit code 2.
    Input(String),
    /// Exit code 1.
    Solve(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Solve(_) => 1,
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<CoOptError> for Failure {
    fn from(e: CoOptError) -> Self {
        match e {
            CoOptError::LocationNotABus(_)
            | CoOptError::BadTopL { .. }
            | CoOptError::BadWeight
            | CoOptError::InconsistentHorizon { .. }
            | CoOptError::BadStationLimit(_)
            | CoOptError::FlowShape
            | CoOptError::Fleet(FleetError::UnknownNode { .. } | FleetError::BadCount { .. }) => {
                Failure::Input(e.to_string())
            }
            e => Failure::Solve(e.to_string()),
        }
    }
}

/// Resolves `path` as given, then under the fixture directory.
fn resolve(path: &Path) -> PathBuf {
    if path.exists() || path.is_absolute() {
        return path.to_path_buf();
    }
    let dir = std::env::var_os(FIXTURE_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("fixtures"));
    let candidate = dir.join(path);
    if candidate.exists() {
        candidate
    } else {
        path.to_path_buf()
    }
}

#[derive(Serialize)]
struct PowerFlowReport {
    format_version: &'static str,
    case: String,
    iterations: usize,
    residual: f64,
    buses: Vec<BusState>,
}

#[derive(Serialize)]
struct BusState {
    bus: u32,
    v_pu: f64,
    theta_deg: f64,
}

fn cmd_powerflow(case: &Path, json: bool) -> Result<(), Failure> {
    let path = resolve(case);
    let grid = load_grid_case(&path)?;
    let op = solve_operating_point(&grid).map_err(|e| match e {
        PowerFlowError::Grid(g) => Failure::Input(g.to_string()),
        e => Failure::Solve(e.to_string()),
    })?;
    let report = PowerFlowReport {
        format_version: io::FORMAT_VERSION,
        case: path.display().to_string(),
        iterations: op.iterations,
        residual: op.residual,
        buses: grid
            .buses
            .iter()
            .enumerate()
            .map(|(i, b)| BusState { bus: b.id, v_pu: op.v[i], theta_deg: op.theta[i].to_degrees() })
            .collect(),
    };
    if json {
        print!("{}", io::to_json_text(&report));
        return Ok(());
    }
    println!("{:>5} {:>10} {:>11}", "bus", "v_pu", "theta_deg");
    for b in &report.buses {
        println!("{:>5} {:>10.6} {:>11.5}", b.bus, b.v_pu, b.theta_deg);
    }
    println!("iterations: {}", report.iterations);
    println!("residual: {:.3e}", report.residual);
    Ok(())
}

fn prepare(args: &RunArgs) -> Result<Scenario, Failure> {
    let mut sc = load_scenario(&resolve(&args.scenario), args.seed)?;
    if args.enable_v2g {
        sc.flags.enable_v2g = true;
    }
    let size = match (args.fleet_size, args.paper_scale) {
        (Some(s), _) => Some(s),
        (None, true) if !sc.fleets.is_empty() => Some(PAPER_SCALE_VEHICLES / sc.fleets.len() as f64),
        _ => None,
    };
    if let Some(size) = size {
        if !(size.is_finite() && size >= 0.0) {
            return Err(Failure::Input(format!("fleet size must be non-negative, got {size}")));
        }
        sc.resize_fleets(size)?;
    }
    Ok(sc)
}

fn report_run(bundle: &ResultsBundle, dir: &Path) {
    let s = &bundle.summary;
    println!(
        "{} {}: {:?} after {} iterations",
        match s.meta.mode {
            RunMode::Baseline => "baseline",
            RunMode::Coopt => "coopt",
        },
        s.meta.penalty.name(),
        s.solver.status,
        s.solver.iterations
    );
    for r in &s.routes {
        let path: Vec<String> = r.buses.iter().map(u32::to_string).collect();
        println!("  route {} ({} vehicles): {}", r.fleet, io::format_number(r.vehicles), path.join(" -> "));
    }
    println!(
        "  generation cost {} $/h, penalty {}",
        io::format_number(s.objective.generation_cost),
        io::format_number(s.objective.penalty)
    );
    println!(
        "  bus-steps outside band: {} linear, {} nonlinear; max |V - Vref| {} at bus {}",
        s.linear_band.violations,
        s.nonlinear_band.violations,
        io::format_number(s.linear_band.max_deviation),
        s.linear_band.worst_bus
    );
    println!("  wrote {}", dir.display());
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let sc = prepare(args)?;
    let mode = match args.mode {
        Mode::Baseline => RunMode::Baseline,
        Mode::Coopt => RunMode::Coopt,
    };
    let jobs: Vec<(PenaltyKind, PathBuf)> = if args.all_penalties {
        PenaltyKind::ALL.iter().map(|&k| (k, args.out.join(k.name()))).collect()
    } else {
        let kind = args.penalty.map(PenaltyKind::from).unwrap_or(sc.penalty.kind);
        vec![(kind, args.out.clone())]
    };
    let results: Vec<Result<ResultsBundle, CoOptError>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs.iter().map(|(kind, _)| s.spawn(|| sc.run(mode, *kind))).collect();
        handles.into_iter().map(|h| h.join().expect("solver thread panicked")).collect()
    });
    let mut first_err = None;
    for ((kind, dir), result) in jobs.iter().zip(results) {
        match result {
            Ok(bundle) => {
                write_results(&bundle, dir, args.emit_plot_data)?;
                report_run(&bundle, dir);
            }
            Err(e) => {
                eprintln!("{} {}: {e}", sc.name, kind.name());
                first_err.get_or_insert(Failure::from(e));
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Powerflow { case, json } => cmd_powerflow(case, *json),
        Command::Run(args) => cmd_run(args),
        Command::Compare { a, b, out } => compare::cmd_compare(a, b, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Input(m) => eprintln!("error: {m}"),
                Failure::Solve(m) => eprintln!("failed: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}

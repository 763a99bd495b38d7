use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "fppf", version, about = "Fixed-point AC power flow with NR and FDLF baselines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve a case with one or more algorithms.
    Solve(SolveArgs),
    /// Iteration counts for each case and algorithm.
    Bench(BenchArgs),
    /// Success rates from randomized initial load voltages.
    SweepInit(SweepArgs),
    /// Invariant-box and contraction certificate for the two-bus system.
    TwobusCert(TwoBusArgs),
    /// Report the standing assumptions for a case.
    Check(CheckArgs),
}

#[derive(Args, Debug, Clone)]
struct SolverFlags {
    /// Comma-separated algorithms: fppf, nr, fdlf, fdlf-bx.
    #[arg(long, value_delimiter = ',', default_value = "fppf")]
    algo: Vec<String>,
    /// Mismatch tolerance (p.u.).
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    /// Lower r so that every branch has R/X at most this value.
    #[arg(long)]
    rx_cap: Option<f64>,
    /// Uniform factor on all Pd, Qd and Pg, applied after the R/X cap.
    #[arg(long, default_value_t = 1.0)]
    load_scale: f64,
    /// FPPF update order: v_xc_psi or psi_xc_v.
    #[arg(long, default_value = "v_xc_psi")]
    update_order: String,
    /// Start FPPF even if the assumption checks fail.
    #[arg(long)]
    allow_assumption_violations: bool,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// MATPOWER .m or JSON case file.
    #[arg(long)]
    case: PathBuf,
    /// Solution JSON to start from instead of flat start.
    #[arg(long)]
    init: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Case files, comma-separated or repeated.
    #[arg(long, value_delimiter = ',', required = true)]
    case: Vec<PathBuf>,
    /// Also bisect for the largest uniform load scale each algorithm
    /// converges at, up to this value.
    #[arg(long)]
    max_scale: Option<f64>,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    case: PathBuf,
    /// Half-widths of the initialization interval, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5")]
    delta: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Args, Debug)]
struct TwoBusArgs {
    /// Series susceptance.
    #[arg(long, default_value_t = 5.0)]
    b: f64,
    /// Series conductance.
    #[arg(long, default_value_t = 0.0)]
    g: f64,
    /// Total line charging.
    #[arg(long, default_value_t = 0.0)]
    b_c: f64,
    /// Tap ratio minus one.
    #[arg(long, default_value_t = 0.0)]
    t_bar: f64,
    /// Phase shift (rad).
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    theta_s: f64,
    #[arg(long, default_value_t = 1.0)]
    v2: f64,
    /// Active injection at bus 1 (negative for a load).
    #[arg(long, default_value_t = -1.5, allow_hyphen_values = true)]
    p1: f64,
    #[arg(long, default_value_t = -0.25, allow_hyphen_values = true)]
    q1: f64,
    /// Lattice size per axis for the contraction estimate.
    #[arg(long, default_value_t = 101)]
    grid_n: usize,
    /// Iterations of the simulated trajectory.
    #[arg(long, default_value_t = 200)]
    iters: usize,
    /// Scan over these conductances (with --scan-theta-s), comma-separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    scan_g: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    scan_theta_s: Vec<f64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long)]
    rx_cap: Option<f64>,
    /// Write the report as JSON here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(a) => commands::solve(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::SweepInit(a) => commands::sweep_init(&a),
        Command::TwobusCert(a) => commands::twobus_cert(&a),
        Command::Check(a) => commands::check(&a),
    };
    match result {
        Ok(commands::Status::Success) => ExitCode::SUCCESS,
        Ok(commands::Status::NotConverged) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}

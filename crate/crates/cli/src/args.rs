use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use shale_core::metrics::{DEFAULT_PACING_BAND, DEFAULT_PACING_QUOTA};

/// Seed used by every command unless one is given.
pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Parser)]
#[command(name = "shale", version, about = "Guaranteed-delivery allocation: plan, serve, evaluate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic instance and optionally an impression log for it.
    Gen(GenArgs),
    /// Compute an allocation plan.
    Solve(SolveArgs),
    /// Replay an impression log against a plan.
    Serve(ServeArgs),
    /// Metrics of the allocation a plan induces on an instance.
    Eval(EvalArgs),
    /// Compare a converged (or truncated) solve with the reference solver.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    Hwm,
    Shale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Penalty {
    /// p = 0.005 + q
    Planning,
    /// p = 0.002 + 4q
    Serving,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ForecastKind {
    /// Each supply node spread evenly over the log's time span.
    Stationary,
    /// The log itself is the forecast.
    Log,
}

#[derive(Debug, Args)]
pub struct Tolerance {
    /// Relative tolerance of root exactness checks.
    #[arg(long, default_value_t = shale_core::Tolerances::DEFAULT.root)]
    pub root_tol: f64,
    /// Absolute slack on supply and demand constraints.
    #[arg(long, default_value_t = shale_core::Tolerances::DEFAULT.feasibility)]
    pub feasibility_tol: f64,
}

impl Tolerance {
    pub fn get(&self) -> shale_core::Tolerances {
        shale_core::Tolerances {
            root: self.root_tol,
            feasibility: self.feasibility_tol,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Instance output path.
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub contracts: usize,
    /// Supply nodes sampled per contract.
    #[arg(long, default_value_t = 10)]
    pub samples: usize,
    /// Number of supply nodes (default: max(samples, contracts * samples / 2)).
    #[arg(long)]
    pub supply_nodes: Option<usize>,
    /// Target average supply contention.
    #[arg(long, default_value_t = 1.0)]
    pub asc: f64,
    #[arg(long, value_enum, default_value_t = Penalty::Planning)]
    pub penalty: Penalty,
    /// Small mixed-contention instance sized for the reference solver;
    /// ignores the size flags.
    #[arg(long)]
    pub small: bool,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Also write an impression log covering [0, horizon].
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 24.0)]
    pub horizon: f64,
    /// Supply weight represented by one log event.
    #[arg(long, default_value_t = 1.0)]
    pub unit: f64,
    /// Fraction of generated events kept in the log.
    #[arg(long, default_value_t = 1.0)]
    pub keep: f64,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long, short)]
    pub instance: PathBuf,
    #[arg(long, value_enum, default_value_t = Algo::Shale)]
    pub algo: Algo,
    /// Stage One iterations.
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    /// Stop early once the relative alpha change per iteration falls below this.
    #[arg(long)]
    pub converge: Option<f64>,
    /// Plan to start the duals from.
    #[arg(long)]
    pub warm_start: Option<PathBuf>,
    /// Run a second Stage Two pass over contracts still short.
    #[arg(long)]
    pub two_pass: bool,
    /// Plan output path.
    #[arg(long, short = 'o')]
    pub plan_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Report the first iteration whose duals deliver within this factor.
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    /// Keep no per-arc state; L2 and objective are not reported.
    #[arg(long)]
    pub plan_only: bool,
    /// Keep the arc lists in a temporary file instead of memory.
    #[arg(long)]
    pub disk: bool,
    /// Print the heap high-water mark of the solve.
    #[arg(long)]
    pub mem_report: bool,
    /// Structured report output path.
    #[arg(long)]
    pub report_json: Option<PathBuf>,
    #[command(flatten)]
    pub tolerance: Tolerance,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, short)]
    pub instance: PathBuf,
    #[arg(long, short)]
    pub plan: PathBuf,
    #[arg(long, short)]
    pub log: PathBuf,
    /// Time between re-optimizations (`inf` serves the plan unchanged).
    #[arg(long, default_value_t = f64::INFINITY)]
    pub reopt_period: f64,
    /// Stage One iterations per re-optimization.
    #[arg(long, default_value_t = 20)]
    pub reopt_iters: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub two_pass: bool,
    #[arg(long, value_enum, default_value_t = ForecastKind::Stationary)]
    pub forecast: ForecastKind,
    /// Time between delivery snapshots.
    #[arg(long)]
    pub checkpoint_period: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_PACING_BAND)]
    pub pacing_band: f64,
    #[arg(long, default_value_t = DEFAULT_PACING_QUOTA)]
    pub pacing_quota: f64,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Delivery statistics output path.
    #[arg(long)]
    pub stats_out: Option<PathBuf>,
    #[arg(long)]
    pub report_json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, short)]
    pub instance: PathBuf,
    #[arg(long, short)]
    pub plan: PathBuf,
    #[arg(long)]
    pub report_json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Instance to check; omit to sweep random small instances.
    #[arg(long, short)]
    pub instance: Option<PathBuf>,
    /// Number of random instances when no instance is given.
    #[arg(long, default_value_t = 20)]
    pub random_seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub first_seed: u64,
    /// Truncate Stage One at this many iterations instead of converging.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Relative alpha change that counts as converged.
    #[arg(long, default_value_t = 1e-12)]
    pub converge: f64,
    /// Allowed arc-wise gap and KKT residual.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// KKT residual the reference solver must reach.
    #[arg(long, default_value_t = 1e-9)]
    pub oracle_tol: f64,
}

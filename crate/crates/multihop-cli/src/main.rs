//! `multihop`: reproducible experiments over the multihop library.
//!
//! One rule governs everything the binary writes: `(flags, seed)` fully
//! determine every emitted byte.  Reports carry no timestamps, floats are
//! serialized at 12 significant digits, JSON keys come out sorted, and all
//! randomness flows from `--seed` (default 0).
//!
//! Exit codes separate refusals from misuse:
//!
//! ```text
//! 0  success
//! 1  domain error: an operation refused (unstable queue, infeasible
//!    target, unparseable config value)
//! 2  usage error: unknown flag, missing argument, malformed syntax
//! ```
//!
//! Output goes to stdout unless `--out FILE` is given; relative `--out`
//! paths land under `$MULTIHOP_OUT_DIR` when that variable is set.  Sweep
//! grids use `start:stop:step` notation, distributions the mini-language
//! from `multihop::distspec` (`geometric:0.2`, `uniform:7`, `point:4`,
//! `power:-3.5:0.5`, `rayleigh:3`, `explicit:[0.5,0.3,0.2]`).

// guards are spelled `!(x > 0.0)` so NaN fails validation; the un-negated
// comparison would admit it
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use multihop::distspec::{parse_grid, DistSpec};
use multihop::shaper::ArrivalModel;
use multihop::sim::SimMode;

#[derive(Parser)]
#[command(
    name = "multihop",
    version,
    about = "Throughput and delay analysis of multihop wireless random-access networks",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Hop, transport, and flow statistics for one operating point
    Analyze(AnalyzeArgs),
    /// Delay-tail bound curves, optionally with a Monte Carlo overlay
    Tail(TailArgs),
    /// Traffic-locality sweep: power-law exponent vs region radius
    Scaling(ScalingArgs),
    /// Rate allocations: proportional, max-min, or bias-constrained
    Optimize(OptimizeArgs),
    /// Mean-field or torus Monte Carlo from a JSON config
    Simulate(SimulateArgs),
    /// Parallel token-bucket shaping trace
    Shape(ShapeArgs),
}

/// Destination shared by every subcommand.
#[derive(Args)]
struct Sink {
    /// Write here instead of stdout; relative paths land under
    /// $MULTIHOP_OUT_DIR when that variable is set
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

/// Operating point shared by `analyze` and `tail`: the hop model is either
/// solved from the contention geometry or pinned outright.
#[derive(Args)]
struct HopArgs {
    /// Per-node hop throughput, in hops per slot
    #[arg(long)]
    theta: f64,

    /// Retry probability of a backlogged head-of-line packet
    #[arg(long)]
    q: f64,

    /// Mean interferer count; solves the contention fixed point for the
    /// per-attempt success probability
    #[arg(long, conflicts_with = "p", required_unless_present = "p")]
    nint: Option<f64>,

    /// Pin the per-attempt success probability instead of solving for it
    #[arg(long)]
    p: Option<f64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    hop: HopArgs,

    /// Route-length law in mini-language form, e.g. geometric:0.2
    #[arg(long, value_parser = parse_dist)]
    dist: DistSpec,

    /// Node count for the population section
    #[arg(long, default_value_t = 1000)]
    n: usize,

    #[command(flatten)]
    sink: Sink,
}

#[derive(Args)]
struct TailArgs {
    #[command(flatten)]
    hop: HopArgs,

    /// Comma list of mean route lengths; one geometric-route curve per
    /// entry
    #[arg(
        long,
        value_delimiter = ',',
        conflicts_with = "dist",
        required_unless_present = "dist"
    )]
    el: Vec<f64>,

    /// A single route-length law in mini-language form
    #[arg(long, value_parser = parse_dist)]
    dist: Option<DistSpec>,

    /// Per-hop delay budget grid, start:stop:step
    #[arg(long, value_parser = parse_grid_arg)]
    x: Grid,

    /// Monte Carlo sample count for the mc columns; omitted means the
    /// columns stay empty
    #[arg(long, value_name = "SAMPLES")]
    mc: Option<u64>,

    /// Root seed for the Monte Carlo overlay; curve i uses seed + i
    #[arg(long, default_value_t = 0)]
    seed: u64,

    #[command(flatten)]
    sink: Sink,
}

#[derive(Args)]
struct ScalingArgs {
    /// Nearest-neighbor distance, the short end of the route-length scale
    #[arg(long)]
    epsilon: f64,

    /// Fraction of traffic the region must confine, in (0, 1)
    #[arg(long)]
    coverage: f64,

    /// Traffic-region radius grid, start:stop:step
    #[arg(long, value_parser = parse_grid_arg)]
    rt: Grid,

    #[command(flatten)]
    sink: Sink,
}

#[derive(Args)]
struct OptimizeArgs {
    /// Per-node hop throughput budget the allocation must meet exactly
    #[arg(long)]
    theta: f64,

    /// Number of route-length classes
    #[arg(long)]
    phi: usize,

    /// Allocation rule
    #[arg(long, value_enum)]
    criterion: Criterion,

    /// Workload-bias ceiling for --criterion qos
    #[arg(long, required_if_eq("criterion", "qos"))]
    u_target: Option<f64>,

    #[command(flatten)]
    sink: Sink,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Criterion {
    /// Proportionally fair rates lambda(l) = theta / (H_phi l)
    Proportional,
    /// One equal rate for every class
    Maxmin,
    /// Throughput-optimal subject to a workload-bias ceiling
    Qos,
}

impl Criterion {
    fn name(self) -> &'static str {
        match self {
            Criterion::Proportional => "proportional",
            Criterion::Maxmin => "maxmin",
            Criterion::Qos => "qos",
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON simulation config
    #[arg(long, value_name = "FILE")]
    config: PathBuf,

    /// Guard: must agree with the config's mode field when given
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,

    #[command(flatten)]
    sink: Sink,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    #[value(name = "meanfield")]
    MeanField,
    Torus,
}

impl ModeArg {
    fn to_sim(self) -> SimMode {
        match self {
            ModeArg::MeanField => SimMode::MeanField,
            ModeArg::Torus => SimMode::Torus,
        }
    }
}

#[derive(Args)]
struct ShapeArgs {
    /// Total token rate shared by the bucket bank, in hops per slot
    #[arg(long)]
    r: f64,

    /// Bucket capacity, in tokens; every class gets the same capacity
    #[arg(long)]
    b: f64,

    /// Number of route-length classes, one bucket per class
    #[arg(long)]
    phi: usize,

    /// How the total rate splits across classes
    #[arg(long, value_enum)]
    rule: Rule,

    /// Slots to simulate
    #[arg(long, default_value_t = 10_000)]
    slots: usize,

    /// Arrival pattern: `sat` or `bernoulli:p1,p2,...` (one coin per class)
    #[arg(long, default_value = "sat", value_parser = parse_arrival)]
    arrival: Arrival,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    #[command(flatten)]
    sink: Sink,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Rule {
    /// r / phi tokens per slot to every class
    Equal,
    /// r l / (1 + ... + phi) tokens per slot to class l
    Prop,
}

// ----------------------------------------------------------------------------
// Flag-value parsers
// ----------------------------------------------------------------------------
//
// Anything parsed here is command-line syntax, so failures surface as clap
// usage errors (exit 2).  Values that parse but violate a model constraint
// are refused later by the library (exit 1).

/// Inclusive sweep grid, newtyped so clap treats it as one value.
#[derive(Clone)]
struct Grid(Vec<f64>);

fn parse_grid_arg(s: &str) -> Result<Grid, multihop::Error> {
    parse_grid(s).map(Grid)
}

fn parse_dist(s: &str) -> Result<DistSpec, multihop::Error> {
    DistSpec::from_str(s)
}

/// Arrival pattern for `shape`, newtyped for the same reason.
#[derive(Clone)]
struct Arrival(ArrivalModel);

fn parse_arrival(s: &str) -> Result<Arrival, String> {
    if s == "sat" {
        return Ok(Arrival(ArrivalModel::Saturated));
    }
    if let Some(list) = s.strip_prefix("bernoulli:") {
        let rates = list
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| format!("arrival rate list `{list}`: {e}"))?;
        return Ok(Arrival(ArrivalModel::Bernoulli(rates)));
    }
    Err(format!(
        "arrival `{s}` must be `sat` or `bernoulli:p1,p2,...`"
    ))
}

// ----------------------------------------------------------------------------
// Entry
// ----------------------------------------------------------------------------

fn main() -> ExitCode {
    // clap reports usage errors itself and exits 2
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(args) => commands::analyze(&args),
        Command::Tail(args) => commands::tail(&args),
        Command::Scaling(args) => commands::scaling(&args),
        Command::Optimize(args) => commands::optimize(&args),
        Command::Simulate(args) => commands::simulate(&args),
        Command::Shape(args) => commands::shape(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

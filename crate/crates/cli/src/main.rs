use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod error;

use error::CliError;

/// Functional-output orthogonal additive Gaussian processes.
#[derive(Parser, Debug)]
#[command(name = "foagp", version, about)]
struct Cli {
    /// Threads for dense linear algebra (overrides FOAGP_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate simulated datasets and their ground truth.
    Simulate(SimulateArgs),
    /// Fit a model and save it.
    Fit(FitArgs),
    /// Evaluate effect predictions at a set of points.
    Decompose(DecomposeArgs),
    /// Local and global sensitivity indices of a fitted model.
    Sensitivity(SensitivityArgs),
    /// Index error and test RMSE across a ladder of sample sizes.
    Benchmark(BenchmarkArgs),
    /// Convert between the long and grid dataset formats.
    Convert(ConvertArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OptimizerArg {
    Lbfgs,
    NelderMead,
    NelderMeadLbfgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Baseline {
    Hdmr,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Example 1 or 2.
    #[arg(long, conflicts_with = "grid", required_unless_present = "grid")]
    example: Option<u8>,
    /// Synthetic grid-structured data instead of an example.
    #[arg(long)]
    grid: bool,
    /// Samples (examples) or positions per input (grid).
    #[arg(long)]
    n: Option<usize>,
    /// Grid inputs.
    #[arg(long)]
    m: Option<usize>,
    /// Input dimension of grid data.
    #[arg(long, default_value_t = 2)]
    dims: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noise standard deviation (defaults to the example's).
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitOptions {
    /// JSON fit configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    /// Periodic output kernel with this period.
    #[arg(long)]
    periodic: Option<f64>,
    /// Use the dense path even for grid data.
    #[arg(long)]
    force_dense: bool,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Long-format CSV or a grid directory.
    #[arg(long)]
    data: PathBuf,
    /// Held-out long-format CSV for the test RMSE.
    #[arg(long)]
    test: Option<PathBuf>,
    #[command(flatten)]
    options: FitOptions,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    /// Model file or the directory holding model.json.
    #[arg(long)]
    model: PathBuf,
    /// CSV with columns x1..xd,t (a trailing y column is ignored).
    #[arg(long, conflicts_with = "x_grid")]
    points: Option<PathBuf>,
    /// Product grid `lo:hi:count` shared by every input.
    #[arg(long, requires = "t_grid")]
    x_grid: Option<String>,
    /// Positions `lo:hi:count` of the product grid.
    #[arg(long)]
    t_grid: Option<String>,
    #[arg(long)]
    max_order: Option<usize>,
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    #[arg(long, default_value_t = 4)]
    hdmr_order: usize,
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    /// Ground truth written by `simulate`, for RMSE summaries.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SensitivityArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    max_order: Option<usize>,
    /// Curve positions `lo:hi:count` (default: training range, 101 points).
    #[arg(long)]
    t_grid: Option<String>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    #[arg(long)]
    example: u8,
    /// Comma-separated total sample sizes (train plus test).
    #[arg(long, value_delimiter = ',', default_values_t = [200usize, 500, 1000, 2000])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Base data seed; each (size, repeat) pair derives its own.
    #[arg(long = "data-seed", default_value_t = 0)]
    data_seed: u64,
    #[command(flatten)]
    options: FitOptions,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ConvertArgs {
    /// Grid directory or long-format CSV.
    #[arg(long)]
    input: PathBuf,
    /// Long CSV (from a grid) or grid directory (from a long CSV).
    #[arg(long)]
    output: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    foagp::set_threads(cli.threads)?;
    match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Fit(a) => commands::fit(a),
        Command::Decompose(a) => commands::decompose(a),
        Command::Sensitivity(a) => commands::sensitivity(a),
        Command::Benchmark(a) => commands::benchmark(a),
        Command::Convert(a) => commands::convert(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_env("FOAGP_LOG").init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

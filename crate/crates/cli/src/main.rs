//! `sdflow` command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod manifest;

#[derive(Parser, Debug)]
#[command(name = "sdflow", version, about = "Mean curvature flow by diffusion and redistancing on uniform grids")]
struct Cli {
    /// Cap on worker threads used inside library operations.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evolve a mask and write the trace, snapshots and a run manifest.
    Evolve(EvolveArgs),
    /// Validate a kernel and print its report as JSON.
    ValidateKernel(ValidateArgs),
    /// Redistance a field CSV.
    Redistance(RedistanceArgs),
    /// Shrink a disk with several kernels and compare against the radius law.
    BenchmarkDisk(BenchmarkArgs),
    /// Quick self-check of kernels and redistancing bounds.
    Verify(VerifyArgs),
}

#[derive(Args, Debug, Clone)]
pub struct KernelArgs {
    /// `explicit`, `implicit`, `heat`, or a path to a JSON kernel spec.
    #[arg(long, default_value = "explicit")]
    pub kernel: String,
    /// Explicit-stencil weight θ in (0, 1].
    #[arg(long)]
    pub theta: Option<f64>,
    /// Time step τ for the implicit and heat kernels.
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum RedistanceChoice {
    Plus,
    Minus,
    Avg,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeChoice {
    Linear,
    Nonlinear,
    Multiphase,
}

#[derive(Args, Debug, Clone)]
pub struct RedistanceOpts {
    #[arg(long, value_enum, default_value = "plus")]
    pub redistance: RedistanceChoice,
    /// Strip width M (length units); the full operator when absent.
    #[arg(long)]
    pub strip: Option<f64>,
    /// Truncation level d̄ (length units); defaults to 30 cells.
    #[arg(long)]
    pub dbar: Option<f64>,
    /// Truncation level for the nonlinear scheme; defaults to min(15 cells, 15).
    #[arg(long)]
    pub dbar_gamma: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvolveArgs {
    /// PGM or text mask.
    #[arg(long)]
    pub mask: PathBuf,
    /// Grid spacing ε.
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub redistance: RedistanceOpts,
    #[arg(long, value_enum, default_value = "linear")]
    pub scheme: SchemeChoice,
    /// Final time; the run takes ceil(T/h) steps unless it goes extinct first.
    #[arg(long = "T")]
    pub final_time: Option<f64>,
    /// Step budget.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Write a snapshot every k steps.
    #[arg(long)]
    pub snap_every: Option<usize>,
    /// Check the Lipschitz property of every iterate.
    #[arg(long)]
    pub check_lipschitz: bool,
    #[arg(long, default_value = "sdflow-out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Cells per axis of the grid the kernel is built on.
    #[arg(long, default_value_t = 32)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
    #[arg(long, default_value = "sdflow-out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RedistanceArgs {
    /// Field CSV (`x,y[,z],value`).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub redistance: RedistanceOpts,
    /// Directory for the manifest; defaults to the output's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    /// Cells per axis.
    #[arg(long, default_value_t = 128)]
    pub n: usize,
    /// Initial radius (length units).
    #[arg(long = "R", default_value_t = 50.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
    /// Kernels as `explicit[:θ]`, `implicit:τ` or `heat:τ`, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "explicit,implicit:5,implicit:10,implicit:20")]
    pub kernels: Vec<String>,
    #[command(flatten)]
    pub redistance: RedistanceOpts,
    #[arg(long, default_value_t = 20_000)]
    pub steps: usize,
    #[arg(long, default_value = "sdflow-out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random fields per check.
    #[arg(long, default_value_t = 10)]
    pub fields: u64,
    /// Also fit the one-step ball scaling exponents (slower).
    #[arg(long)]
    pub scaling: bool,
    #[arg(long, default_value = "sdflow-out")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Evolve(a) => commands::evolve(&a),
        Command::ValidateKernel(a) => commands::validate_kernel(&a),
        Command::Redistance(a) => commands::redistance(&a),
        Command::BenchmarkDisk(a) => commands::benchmark_disk(&a),
        Command::Verify(a) => commands::verify(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("sdflow: {e}");
            ExitCode::from(e.code())
        }
    }
}

//! `netsketch`: sketch filter tensors into binary bases, verify the
//! approximation guarantees and count the cost of associative convolution.

mod bench;
mod failure;
mod generate;
mod info;
mod input;
mod report;
mod sketch;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use netsketch::io::Distribution;
use netsketch::Method;

use crate::failure::Failure;

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 20_170_716;

const THREADS_VAR: &str = "NETSKETCH_THREADS";

#[derive(Parser)]
#[command(
    name = "netsketch",
    version,
    about = "Binary-basis sketching of convolution filters"
)]
#[command(
    after_help = "Set NETSKETCH_THREADS to cap the number of worker threads.\n\
Exit codes: 0 success, 1 verification failure, 2 usage error, 3 input/output or parse error."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sketch every layer of a weight file and write an NSKT file.
    Sketch(SketchArgs),
    /// Check the approximation bounds and convolution equivalences.
    Verify(VerifyArgs),
    /// Count FADDs/FMULs of direct and associative layer evaluation.
    Bench(BenchArgs),
    /// Describe the contents of an NSKT file.
    Info(InfoArgs),
    /// Write a synthetic NSKW weight file.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Direct,
    Refined,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Direct => Method::Direct,
            MethodArg::Refined => Method::Refined,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TreeArg {
    Mst,
    Random,
    None,
    /// All three modes.
    All,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistArg {
    Gaussian,
    Uniform,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(_) => Err(format!("'{s}' is not a positive integer")),
    }
}

#[derive(Args)]
pub struct SketchArgs {
    /// Weight file (NSKW or .npy).
    input: PathBuf,
    #[arg(short = 'm', long = "bits", value_parser = positive)]
    bits: usize,
    #[arg(long, value_enum, default_value = "refined")]
    method: MethodArg,
    /// Output path; defaults to the input path with an `.nskt` extension.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
pub struct VerifyArgs {
    /// Weight file (NSKW or .npy) or sketch file (NSKT).
    input: PathBuf,
    #[arg(short = 'm', long = "bits", value_parser = positive, default_value = "3")]
    bits: usize,
    /// Seed for the sampled input windows and the random tree.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Number of sampled windows per layer for the convolution checks.
    #[arg(long, default_value = "4", value_parser = positive)]
    windows: usize,
}

#[derive(Args)]
pub struct BenchArgs {
    /// Weight file (NSKW or .npy).
    input: PathBuf,
    #[arg(short = 'm', long = "bits", value_parser = positive, default_value = "3")]
    bits: usize,
    #[arg(long, value_enum, default_value = "refined")]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "all")]
    tree: TreeArg,
    /// Seed for the synthetic feature map and the random tree.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Spatial size of the synthetic feature map, `WxH`. Defaults to the
    /// kernel size plus 8 in each direction.
    #[arg(long, value_parser = parse_map)]
    map: Option<(usize, usize)>,
    #[arg(long, default_value = "1", value_parser = positive)]
    stride: usize,
    /// Write the report here instead of standard output.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    /// Include wall-clock times (makes the report nondeterministic).
    #[arg(long)]
    wall_time: bool,
}

#[derive(Args)]
pub struct InfoArgs {
    /// Sketch file (NSKT).
    input: PathBuf,
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Filter shape `CxWxH`.
    #[arg(long, value_parser = parse_shape)]
    shape: (usize, usize, usize),
    /// Number of filters.
    #[arg(short = 'n', long, value_parser = positive)]
    filters: usize,
    #[arg(long, value_enum, default_value = "gaussian")]
    dist: DistArg,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value = "layer")]
    name: String,
    /// Output positions per filter used in FMUL accounting.
    #[arg(long, default_value = "1", value_parser = positive)]
    spatial: usize,
    #[arg(short, long)]
    output: PathBuf,
}

impl From<DistArg> for Distribution {
    fn from(d: DistArg) -> Self {
        match d {
            DistArg::Gaussian => Distribution::Gaussian,
            DistArg::Uniform => Distribution::Uniform,
        }
    }
}

fn parse_dims<const N: usize>(s: &str) -> Result<[usize; N], String> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    if parts.len() != N {
        return Err(format!("expected {N} dimensions separated by 'x'"));
    }
    let mut dims = [0; N];
    for (d, p) in dims.iter_mut().zip(parts) {
        *d = p
            .trim()
            .parse()
            .map_err(|_| format!("'{p}' is not a positive integer"))?;
        if *d == 0 {
            return Err("dimensions must be positive".into());
        }
    }
    Ok(dims)
}

fn parse_shape(s: &str) -> Result<(usize, usize, usize), String> {
    parse_dims::<3>(s).map(|[c, w, h]| (c, w, h))
}

fn parse_map(s: &str) -> Result<(usize, usize), String> {
    parse_dims::<2>(s).map(|[w, h]| (w, h))
}

fn configure_threads() -> Result<(), Failure> {
    let Some(raw) = std::env::var_os(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = raw
        .to_str()
        .and_then(|s| s.trim().parse().ok())
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("{THREADS_VAR} must be a positive integer")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Usage(format!("cannot configure {threads} threads: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Sketch(args) => sketch::run(&args),
        Command::Verify(args) => verify::run(&args),
        Command::Bench(args) => bench::run(&args),
        Command::Info(args) => info::run(&args),
        Command::Generate(args) => generate::run(&args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("netsketch: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}

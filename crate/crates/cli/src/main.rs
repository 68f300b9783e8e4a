use std::path::PathBuf;
use std::process::ExitCode;

use bdc_cli::commands::execute;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bdc", version, about = "Block difference-of-convex experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key=value file applied over the built-in defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; BDC_OUT_DIR takes precedence
    #[arg(long)]
    out_dir: Option<String>,
}

/// Collect the flags that were given as `(config key, value)` pairs.
macro_rules! pairs {
    ($s:expr; $($f:ident),*; flags $($b:ident),*) => {{
        let mut v: Vec<(String, String)> = Vec::new();
        if let Some(x) = &$s.common.out_dir {
            v.push(("out_dir".into(), x.clone()));
        }
        $( if let Some(x) = &$s.$f { v.push((stringify!($f).into(), x.clone())); } )*
        $( if $s.$b { v.push((stringify!($b).into(), "true".into())); } )*
        v
    }};
}

#[derive(Args)]
struct MonomialArgs {
    #[command(flatten)]
    common: Common,
    /// Exponents, comma separated
    #[arg(long)]
    b: Option<String>,
    /// Variable groups, 1-based, e.g. 1,2|3,4
    #[arg(long)]
    group: Option<String>,
    #[arg(long)]
    bounds: bool,
    #[arg(long)]
    polarize: bool,
    #[arg(long)]
    verify: bool,
    /// Merge atoms with proportional linear forms
    #[arg(long)]
    merge: bool,
    /// Write the atom list as CSV
    #[arg(long)]
    csv: bool,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long)]
    seed: Option<String>,
}

#[derive(Args)]
struct SdlArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    l: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    q: Option<String>,
    /// Outer iterations (one X update and one D update each)
    #[arg(long)]
    iters: Option<String>,
    #[arg(long)]
    rho: Option<String>,
    #[arg(long)]
    inner_budget: Option<String>,
    #[arg(long)]
    inner_tol: Option<String>,
    /// both, l1 or lq
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    gd_seeds: Option<String>,
    /// Write per-seed traces (true/false)
    #[arg(long)]
    traces: Option<String>,
}

#[derive(Args)]
struct ReluArgs {
    #[command(flatten)]
    common: Common,
    /// classification or regression
    #[arg(long)]
    task: Option<String>,
    /// stochastic or proximal
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    #[arg(long)]
    classes: Option<String>,
    /// Hidden widths, comma separated
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    steps_per_epoch: Option<String>,
    /// Fixed proximal weight instead of c_rho * sqrt(K)
    #[arg(long)]
    rho: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    c_rho: Option<String>,
    #[arg(long)]
    c_batch: Option<String>,
    #[arg(long)]
    inner_budget: Option<String>,
    /// Grid spacing of the smoothness probe
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    stride: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
}

#[derive(Args)]
struct TensorArgs {
    #[command(flatten)]
    common: Common,
    /// Tensor shape, comma separated
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    rank: Option<String>,
    /// Rank of the generated tensor, defaults to --rank
    #[arg(long)]
    true_rank: Option<String>,
    #[arg(long)]
    sweeps: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    tol: Option<String>,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    common: Common,
    /// constant, affine (l0 + l1 u) or power (l0 + l1 u^power)
    #[arg(long)]
    ell: Option<String>,
    #[arg(long)]
    l0: Option<String>,
    #[arg(long)]
    l1: Option<String>,
    #[arg(long)]
    power: Option<String>,
    #[arg(long)]
    g: Option<String>,
    #[arg(long)]
    r: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Atom bounds, polarization and block splits of a monomial
    Monomial(MonomialArgs),
    /// Sparse dictionary learning, l1 against l1 - lQ
    Sdl(SdlArgs),
    /// Toy ReLU network training and smoothness scatter
    Relu(ReluArgs),
    /// CP decomposition by alternating least squares
    Tensor(TensorArgs),
    /// Gradient bound and proximal weight from a smoothness profile
    PlanRho(PlanArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, config, flags) = match &cli.command {
        Command::Monomial(a) => (
            "monomial",
            &a.common.config,
            pairs!(a; b, group, trials, tol, seed; flags bounds, polarize, verify, merge, csv),
        ),
        Command::Sdl(a) => (
            "sdl",
            &a.common.config,
            pairs!(a; m, l, n, k, alpha, q, iters, rho, inner_budget, inner_tol, variant, seed, seeds, gd_seeds, traces; flags),
        ),
        Command::Relu(a) => (
            "relu",
            &a.common.config,
            pairs!(a; task, solver, samples, classes, hidden, epochs, steps_per_epoch, rho, batch_size, c_rho, c_batch,
                inner_budget, delta, stride, seed, seeds; flags),
        ),
        Command::Tensor(a) => ("tensor", &a.common.config, pairs!(a; dims, rank, true_rank, sweeps, seed, tol; flags)),
        Command::PlanRho(a) => ("plan-rho", &a.common.config, pairs!(a; ell, l0, l1, power, g, r; flags)),
    };
    match execute(name, config.as_deref(), flags) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            if matches!(e, bdc_cli::CliError::Usage(_)) {
                eprintln!("{e}");
            } else {
                println!("{e}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

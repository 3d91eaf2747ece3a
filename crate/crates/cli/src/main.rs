//! `polymix` command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.

mod commands;
mod io;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polymix::experiments::Algo;

#[derive(Parser, Debug)]
#[command(name = "polymix", version, about = "Mixtures of noisy polytope-supported distributions")]
struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true, env = "POLYMIX_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a dataset from a canonical setting.
    Simulate(SimulateArgs),
    /// Fit a model to a dataset.
    Fit(FitArgs),
    /// Compare an estimate with the truth.
    Eval(EvalArgs),
    /// Choose (K, d) by BIC over a grid.
    Select(SelectArgs),
    /// Repeated simulate / fit / evaluate runs over sample sizes.
    Sweep(SweepArgs),
    /// Check total exposure and pairwise-distinct affine hulls.
    GeomCheck(GeomArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// 1, 2, 3, single-simplex[-asym] or single-polytope[-asym].
    #[arg(long)]
    setting: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset CSV (one row per observation, no header).
    #[arg(long)]
    out: String,
    /// Ground-truth parameter JSON.
    #[arg(long)]
    params: Option<String>,
    /// Latent sidecar CSV: component label then simplex weights.
    #[arg(long)]
    latents: Option<String>,
    /// Dirichlet concentration of the random mixing weights.
    #[arg(long, default_value_t = 50.0)]
    pi_concentration: f64,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum FitAlgo {
    Em,
    Gauss,
    Spectral,
    Gimh,
    Gibbs,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long, value_enum)]
    algo: FitAlgo,
    #[arg(long)]
    data: String,
    #[arg(long = "K", default_value_t = 1)]
    k: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: String,
    /// Dirichlet concentration: one value for all vertices or a comma list.
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    /// Total concentration for the spectral method (default: sum of alpha).
    #[arg(long)]
    abar: Option<f64>,
    /// Simplex atoms per component (EM) or per observation (GIMH).
    #[arg(long = "M")]
    m: Option<usize>,
    /// uniform, density-weighted or prior (default: prior when alpha is given).
    #[arg(long)]
    atoms: Option<polymix::em::AtomScheme>,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 20_000)]
    iters: usize,
    #[arg(long, default_value_t = 15_000)]
    burnin: usize,
    #[arg(long, default_value_t = 100)]
    thin: usize,
    /// Prior hyperparameters as JSON; missing fields take defaults.
    #[arg(long)]
    prior: Option<String>,
    /// Random-walk scales for GIMH.
    #[arg(long, default_value_t = 0.02)]
    step_theta: f64,
    #[arg(long, default_value_t = 0.01)]
    step_sigma2: f64,
    #[arg(long, default_value_t = 0.02)]
    step_pi: f64,
    /// Retained MCMC draws as JSON lines.
    #[arg(long)]
    chain: Option<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    truth: String,
    #[arg(long)]
    est: String,
    /// Also write the report here.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[arg(long)]
    data: String,
    /// Inclusive range `lo:hi` or a single value.
    #[arg(long = "K", value_parser = parse_range)]
    k: Span,
    #[arg(long, value_parser = parse_range)]
    d: Span,
    /// Independent selection runs with derived seeds.
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: String,
    /// Symmetric Dirichlet concentration used in every cell.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "M", default_value_t = 200)]
    m: usize,
    #[arg(long, default_value_t = 1000)]
    m_loglik: usize,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    setting: String,
    /// Comma list of em:M, gauss, spectral, gimh.
    #[arg(long, value_delimiter = ',', value_parser = parse_algo, required = true)]
    algos: Vec<Algo>,
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: String,
    /// Log-log plot of the errors.
    #[arg(long)]
    svg: Option<String>,
    /// Per-(algo, n) mean, median and standard error.
    #[arg(long)]
    summary: Option<String>,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 20_000)]
    iters: usize,
    #[arg(long, default_value_t = 15_000)]
    burnin: usize,
    #[arg(long, default_value_t = 100)]
    thin: usize,
}

#[derive(Args, Debug)]
struct GeomArgs {
    /// Parameter JSON (a simulate --params or fit --out file).
    #[arg(long)]
    params: String,
    /// Relative tolerance, scaled by the diameter of all vertices.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: Option<String>,
}

/// An inclusive run of positive integers.
#[derive(Debug, Clone)]
struct Span(Vec<usize>);

fn parse_range(s: &str) -> Result<Span, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("'{t}' is not a nonnegative integer"));
    match s.split_once(':') {
        Some((a, b)) => {
            let (a, b) = (num(a)?, num(b)?);
            if a == 0 || a > b {
                return Err(format!("range {s} must satisfy 1 <= lo <= hi"));
            }
            Ok(Span((a..=b).collect()))
        }
        None => {
            let v = num(s)?;
            if v == 0 {
                return Err("value must be positive".into());
            }
            Ok(Span(vec![v]))
        }
    }
}

fn parse_algo(s: &str) -> Result<Algo, String> {
    s.parse().map_err(|e: polymix::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: could not start {t} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    let invocation: Vec<String> = std::env::args().collect();
    let out = match cli.cmd {
        Command::Simulate(a) => commands::simulate(a, &invocation),
        Command::Fit(a) => commands::fit(a, &invocation),
        Command::Eval(a) => commands::eval(a, &invocation),
        Command::Select(a) => commands::select(a, &invocation),
        Command::Sweep(a) => commands::sweep(a, &invocation),
        Command::GeomCheck(a) => commands::geom_check(a, &invocation),
    };
    match out {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

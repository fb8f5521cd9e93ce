//! `isojet`: batch front-end writing JSON reports.
//!
//! Exit codes: 0 success or positive verdict, 2 negative but valid
//! verdict, 1 error.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use isojet::linalg::DEFAULT_RANK_TOL;

use report::{Inputs, Tolerances};

#[derive(Parser, Debug)]
#[command(name = "isojet", version, about = "Jet-rank certification, Nash inversion and formal right inverses")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Relative singular-value tolerance for numerical rank.
    #[arg(long, global = true, default_value_t = DEFAULT_RANK_TOL)]
    pub tol_rank: f64,
    /// Residual tolerance (continuation stopping, duality pairing).
    #[arg(long, global = true, default_value_t = 1e-6)]
    pub tol_res: f64,
    /// Seed for every randomized sample.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Report path; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; all cores when absent. Reports do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Classify a map by the rank of its jets on a grid or on seeded samples.
    Certify(CertifyArgs),
    /// Threshold table over ranges of (n, m, r), as JSON and CSV.
    Thresholds(ThresholdArgs),
    /// Infinitesimal inverse δf of the metric operator for δg.
    Invert(InvertArgs),
    /// Dependence coefficients and the compatibility operator of a map.
    Compat(CompatArgs),
    /// Membership and per-point diagnostics of the left-inverse system.
    Rightinv(RightinvArgs),
    /// Newton-type continuation towards a target metric.
    Solve(SolveArgs),
    /// Transversality of a submanifold for an operator.
    Transversal(TransversalArgs),
    /// Formal adjoint of an operator with involution and duality checks.
    Adjoint(AdjointArgs),
}

#[derive(Args, Debug)]
pub struct CertifyArgs {
    #[arg(long)]
    pub map: PathBuf,
    /// Grid file; without it, seeded samples in [-1, 1]^n are used.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    /// Number of seeded samples when no grid is given.
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
}

#[derive(Args, Debug)]
pub struct ThresholdArgs {
    /// Inclusive range `a..b` or a single value.
    #[arg(long, default_value = "2..8")]
    pub n: String,
    #[arg(long, default_value = "1")]
    pub m: String,
    #[arg(long, default_value = "1")]
    pub r: String,
    /// CSV path; defaults to the report path with a `.csv` extension.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum InvertMode {
    /// Decide from the rank profile of the map.
    Auto,
    Free,
    FullRank,
}

#[derive(Args, Debug)]
pub struct InvertArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub dg: PathBuf,
    #[arg(long)]
    pub grid: PathBuf,
    /// Shorthand for `--mode free`.
    #[arg(long, conflicts_with = "mode")]
    pub free: bool,
    #[arg(long, value_enum, default_value_t = InvertMode::Auto)]
    pub mode: InvertMode,
    /// Order of the right inverse on the full-rank path.
    #[arg(long, default_value_t = 2)]
    pub s: usize,
    /// Where to write the δf grid field.
    #[arg(long)]
    pub field_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompatArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub grid: PathBuf,
    /// Jet order r of the relations (columns up to r + 1).
    #[arg(long, default_value_t = 1)]
    pub order: usize,
    /// Also write the compatibility operator as a PDO file.
    #[arg(long)]
    pub pdo_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RightinvArgs {
    #[arg(long)]
    pub pdo: PathBuf,
    #[arg(long)]
    pub s: usize,
    #[arg(long)]
    pub grid: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Stencil {
    Second,
    Fourth,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub max_steps: usize,
    #[arg(long, value_enum, default_value_t = Stencil::Fourth)]
    pub stencil: Stencil,
    /// Overrides `--tol-res` as the stopping tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub field_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TransversalArgs {
    #[arg(long)]
    pub pdo: PathBuf,
    #[arg(long)]
    pub submanifold: PathBuf,
    /// Comma-separated point; exclusive with `--grid`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "grid")]
    pub point: Option<Vec<f64>>,
    #[arg(long)]
    pub grid: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AdjointArgs {
    #[arg(long)]
    pub pdo: PathBuf,
    /// Seeded random test pairs for the duality pairing.
    #[arg(long, default_value_t = 5)]
    pub pairs: usize,
    /// Also write the adjoint as a PDO file.
    #[arg(long)]
    pub pdo_out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<bool> {
    let g = &cli.global;
    let tol = Tolerances {
        rank: g.tol_rank,
        residual: g.tol_res,
    };
    let mut inputs = Inputs::default();
    let (name, outcome) = match &cli.command {
        Command::Certify(a) => ("certify", commands::certify(a, g, &mut inputs)?),
        Command::Thresholds(a) => ("thresholds", commands::thresholds(a, g)?),
        Command::Invert(a) => ("invert", commands::invert(a, g, &mut inputs)?),
        Command::Compat(a) => ("compat", commands::compat(a, g, &mut inputs)?),
        Command::Rightinv(a) => ("rightinv", commands::rightinv(a, g, &mut inputs)?),
        Command::Solve(a) => ("solve", commands::solve(a, g, &mut inputs)?),
        Command::Transversal(a) => ("transversal", commands::transversal(a, g, &mut inputs)?),
        Command::Adjoint(a) => ("adjoint", commands::adjoint(a, g, &mut inputs)?),
    };
    let positive = outcome.positive;
    let value = report::envelope(name, inputs, tol, g.seed, &outcome);
    report::write_json(g.out.as_deref(), &value)?;
    Ok(positive)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

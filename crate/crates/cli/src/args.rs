use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cogrowth_core::params::{EdgeLengths, Weights};
use cogrowth_core::subgroups::SubgroupSpec;

use crate::CliError;

/// Weighted cogrowth for free groups.
#[derive(Debug, Parser)]
#[command(name = "cogrowth", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,

    /// Write to this file instead of standard output.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Poincaré exponent of F_n or of a subgroup.
    Delta(DeltaArgs),
    /// Bottom of the spectrum of the weighted Laplacian on the tree.
    Lambda0(Lambda0Args),
    /// Stallings core graph of a subgroup.
    Fold(FoldArgs),
    /// Check the cogrowth formula on subgroups against truncated quotients.
    Verify(VerifyArgs),
    /// Monte Carlo return-rate estimate on a quotient graph.
    Walk(WalkArgs),
    /// Parameter sweeps producing plottable tables.
    #[command(subcommand)]
    Sweep(SweepCommand),
}

#[derive(Debug, Args)]
pub struct RankArg {
    /// Rank n of the free group; inferred from other inputs when omitted.
    #[arg(long)]
    pub rank: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DeltaArgs {
    #[command(flatten)]
    pub rank: RankArg,
    /// Edge-length parameter: "uniform" or comma-separated values such as 0.3,0.2 or 1/4,1/4.
    #[arg(long, default_value = "uniform")]
    pub r: String,
    /// Subgroup as inline JSON or a path to a JSON file.
    #[arg(long)]
    pub subgroup: Option<String>,
    /// Also count orbit points up to this many mean edge lengths.
    #[arg(long)]
    pub bruteforce: Option<f64>,
}

#[derive(Debug, Args)]
pub struct Lambda0Args {
    #[command(flatten)]
    pub rank: RankArg,
    /// Step weights: "uniform", comma-separated values, or "p-star" (needs --s).
    #[arg(long, default_value = "uniform")]
    pub p: String,
    /// Edge lengths for p-star.
    #[arg(long, default_value = "uniform")]
    pub r: String,
    /// Exponent for p-star.
    #[arg(long)]
    pub s: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FoldArgs {
    #[command(flatten)]
    pub rank: RankArg,
    /// Subgroup as inline JSON or a path to a JSON file.
    #[arg(long, conflicts_with = "generators")]
    pub subgroup: Option<String>,
    /// Comma-separated generator words, e.g. a,baB.
    #[arg(long)]
    pub generators: Option<String>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Named suite of subgroups.
    #[arg(long, value_enum)]
    pub suite: Option<Suite>,
    /// Subgroup as inline JSON or a path; may be repeated.
    #[arg(long)]
    pub subgroup: Vec<String>,
    #[arg(long, default_value = "uniform")]
    pub r: String,
    /// Increasing truncation depths.
    #[arg(long, value_delimiter = ',', default_value = "10,20,30")]
    pub depths: Vec<usize>,
    /// Largest accepted |formula − numeric| discrepancy.
    #[arg(long, default_value_t = 1e-2)]
    pub tol: f64,
    /// Seed for the power-iteration start vectors.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also cross-check δ_G by orbit counting up to this many mean edge lengths.
    #[arg(long)]
    pub bruteforce: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Builtin,
}

#[derive(Debug, Args)]
pub struct WalkArgs {
    #[command(flatten)]
    pub rank: RankArg,
    /// Subgroup as inline JSON or a path; the trivial subgroup when omitted.
    #[arg(long)]
    pub subgroup: Option<String>,
    #[arg(long, default_value = "uniform")]
    pub p: String,
    #[arg(long, default_value = "uniform")]
    pub r: String,
    #[arg(long)]
    pub s: Option<f64>,
    /// Walk length 2m.
    #[arg(long, default_value_t = 24)]
    pub steps: usize,
    #[arg(long, default_value_t = 1_000_000)]
    pub trials: u64,
    /// Tree depth beyond which walks are killed; defaults to steps/2.
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum SweepCommand {
    /// δ_{N_k}/δ along the conjugacy-depth exhaustion of a normal closure.
    Exhaustion {
        /// Comma-separated normal generators.
        #[arg(long)]
        generators: String,
        #[command(flatten)]
        rank: RankArg,
        #[arg(long, default_value = "uniform")]
        r: String,
        #[arg(long, default_value_t = 5)]
        k_max: usize,
    },
    /// The rescaled cogrowth formula against the classical one for uniform lengths.
    Formula {
        #[arg(long, default_value_t = 2)]
        rank: usize,
        #[arg(long, default_value_t = 50)]
        points: usize,
    },
}

/// Parses "1/4" or a decimal.
pub fn parse_number(text: &str) -> Result<f64, CliError> {
    let text = text.trim();
    let bad = || CliError::Config(format!("not a number: {text:?}"));
    match text.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            if b == 0.0 {
                return Err(bad());
            }
            Ok(a / b)
        }
        None => text.parse().map_err(|_| bad()),
    }
}

fn parse_list(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',').map(parse_number).collect()
}

/// Rank implied by a simplex argument, if it lists values.
pub fn listed_rank(text: &str) -> Option<usize> {
    (text.trim() != "uniform" && text.trim() != "p-star").then(|| text.split(',').count())
}

fn warn_drift(what: &str, drift: f64) {
    if drift.abs() > 1e-9 {
        eprintln!("warning: {what} summed to {} instead of 1/2; renormalized", 0.5 + drift);
    }
}

pub fn parse_lengths(text: &str, rank: usize) -> Result<EdgeLengths, CliError> {
    if text.trim() == "uniform" {
        return Ok(EdgeLengths::uniform(rank)?);
    }
    let (r, drift) = EdgeLengths::normalized(parse_list(text)?)?;
    if r.rank() != rank {
        return Err(CliError::Config(format!("r has {} entries but the rank is {rank}", r.rank())));
    }
    warn_drift("r", drift);
    Ok(r)
}

pub fn parse_weights(text: &str, rank: usize) -> Result<Weights, CliError> {
    if text.trim() == "uniform" {
        return Ok(Weights::uniform(rank)?);
    }
    let (p, drift) = Weights::normalized(parse_list(text)?)?;
    if p.rank() != rank {
        return Err(CliError::Config(format!("p has {} entries but the rank is {rank}", p.rank())));
    }
    warn_drift("p", drift);
    Ok(p)
}

/// Inline JSON (starting with `{`) or a path to a JSON file.
pub fn load_subgroup(text: &str) -> Result<SubgroupSpec, CliError> {
    let body = if text.trim_start().starts_with('{') {
        text.to_string()
    } else {
        std::fs::read_to_string(text).map_err(|e| CliError::Config(format!("cannot read {text}: {e}")))?
    };
    serde_json::from_str(&body).map_err(|e| CliError::Config(format!("malformed subgroup specification: {e}")))
}

/// Reconciles the ranks implied by several inputs; defaults to 2.
pub fn resolve_rank(explicit: Option<usize>, implied: &[Option<usize>]) -> Result<usize, CliError> {
    let mut rank = explicit;
    for r in implied.iter().flatten() {
        match rank {
            Some(x) if x != *r => {
                return Err(CliError::Config(format!("inconsistent ranks: {x} and {r}")));
            }
            _ => rank = Some(*r),
        }
    }
    Ok(rank.unwrap_or(2))
}

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::manifest::FitConfig;

#[derive(Debug, Parser)]
#[command(name = "gcgm", version, about = "Bayesian structure learning for Gaussian copula graphical models")]
pub struct Cli {
    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a dataset and write edge summaries, matrices, networks and densities.
    Fit(FitArgs),
    /// Generate a synthetic fixture (data.csv, schema.json, truth.json).
    Simulate(SimulateArgs),
    /// Exact edge posterior by enumeration of all 3-node graphs.
    Oracle(OracleArgs),
    /// Fit a fixture and score it against its truth (and the oracle when p = 3).
    Compare(CompareArgs),
}

/// Sampler flags; each mirrors a config-file key. Unset flags fall back to
/// the config file, then to the defaults.
#[derive(Debug, Args, Default, Clone)]
pub struct McmcArgs {
    /// JSON config file; explicit flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Total iterations including burn-in [default: 120000].
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Iterations discarded before accumulating [default: 20000].
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Prior probability of each edge [default: 0.2].
    #[arg(long)]
    pub edge_prior: Option<f64>,
    /// RNG seed; chain c uses stream c of this seed [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep every thin-th post-burn-in iteration [default: 1].
    #[arg(long)]
    pub thin: Option<usize>,
    /// Independent chains, merged in index order [default: 1].
    #[arg(long)]
    pub chains: Option<usize>,
    /// Edge proposals per iteration [default: 1].
    #[arg(long)]
    pub sweep: Option<usize>,
    /// G-Wishart degrees of freedom [default: 3].
    #[arg(long)]
    pub b: Option<f64>,
    /// G-Wishart scale matrix D = scale * I [default: 1].
    #[arg(long)]
    pub scale: Option<f64>,
    /// Check SPD, zero pattern and rank consistency at every iteration.
    #[arg(long)]
    pub debug_checks: bool,
    /// Network inclusion threshold [default: 0.5].
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Significance level of the Pearson baseline [default: 0.05].
    #[arg(long)]
    pub pearson_alpha: Option<f64>,
}

impl McmcArgs {
    /// Defaults, overlaid by the config file, overlaid by flags.
    pub fn resolve(&self) -> gcgm_core::Result<FitConfig> {
        let mut c = match &self.config {
            Some(path) => FitConfig::from_json(&std::fs::read_to_string(path)?)?,
            None => FitConfig::default(),
        };
        let m = &mut c.mcmc;
        macro_rules! overlay {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { m.$field = v; })* };
        }
        overlay!(iterations, burn_in, edge_prior, seed, thin, chains, sweep, b, scale);
        if self.debug_checks {
            m.debug_checks = true;
        }
        if let Some(t) = self.threshold {
            c.threshold = t;
        }
        if let Some(a) = self.pearson_alpha {
            c.pearson_alpha = a;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Observations CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Variable schema JSON.
    #[arg(long)]
    pub schema: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Fit each level of this grouping column separately.
    #[arg(long)]
    pub group_by: Option<String>,
    /// Write a resumable checkpoint here while sampling (single chain, no groups).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Iterations between checkpoint writes.
    #[arg(long, default_value_t = 10_000)]
    pub checkpoint_every: usize,
    /// Continue from a checkpoint written with the same data and config.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub mcmc: McmcArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Full synthetic spec as JSON; overrides the shape flags below.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub p: usize,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.2)]
    pub edge_density: f64,
    #[arg(long, default_value_t = 1)]
    pub graph_seed: u64,
    #[arg(long, default_value_t = 2)]
    pub data_seed: u64,
    /// Number of ordinal columns (placed after the continuous ones).
    #[arg(long, default_value_t = 0)]
    pub ordinal: usize,
    #[arg(long, default_value_t = 5)]
    pub ordinal_bins: usize,
    /// Number of binary columns (placed last).
    #[arg(long, default_value_t = 0)]
    pub binary: usize,
    /// Monotone distortion (exp, cubic, sigmoid) applied to every continuous column.
    #[arg(long)]
    pub distort: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Fixture directory holding data.csv and schema.json.
    #[arg(long, conflicts_with_all = ["data", "schema"])]
    pub fixture: Option<PathBuf>,
    #[arg(long, requires = "schema")]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub schema: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub edge_prior: f64,
    #[arg(long, default_value_t = 3.0)]
    pub b: f64,
    /// Output JSON file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Fixture directory holding data.csv, schema.json and truth.json.
    #[arg(long)]
    pub fixture: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub mcmc: McmcArgs,
}

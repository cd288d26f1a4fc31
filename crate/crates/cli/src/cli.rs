use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use otlab_core::conjugate::ConjugatePair;

#[derive(Debug, Parser)]
#[command(name = "otlab", version, about = "OT-based adversarial training lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write its record, metrics, checkpoints and plots.
    Train(TrainArgs),
    /// Run the cross product of sweep axes and seeds and tabulate the results.
    Sweep(SweepArgs),
    /// Check plan convergence, the marginal bound and duality on a discrete instance.
    Oracle(OracleArgs),
    /// Regenerate every figure of a run, sweep or oracle directory from its data.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Defaults to the first entry of `seeds`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory; defaults to `$OTLAB_OUTPUT_ROOT/<preset>_seed<N>_<hash>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace the preset named in the config file.
    #[arg(long)]
    pub preset: Option<String>,
    /// Record elapsed seconds in the metrics (makes them non-reproducible).
    #[arg(long)]
    pub wallclock: bool,
    #[arg(long)]
    pub no_plots: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Runs executed concurrently.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PairArg {
    Kl,
    Softplus,
}

impl From<PairArg> for ConjugatePair {
    fn from(p: PairArg) -> Self {
        match p {
            PairArg::Kl => ConjugatePair::KLExp,
            PairArg::Softplus => ConjugatePair::Softplus,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    /// Instance file; a random instance is drawn when omitted.
    #[arg(long)]
    pub instance: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub atoms: usize,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = PairArg::Kl)]
    pub pair: PairArg,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 10.0, 100.0, 1000.0])]
    pub alphas: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 100)]
    pub random_potentials: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    pub dir: PathBuf,
}

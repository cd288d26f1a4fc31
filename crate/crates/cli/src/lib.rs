//! Experiment orchestration for the `otlab` binary: training runs, sweeps,
//! oracle certificates and figure regeneration.

pub mod cli;
pub mod config;
pub mod oracle;
pub mod plots;
pub mod report;
pub mod sweep;
pub mod train;

use std::path::{Path, PathBuf};

use anyhow::Result;

pub use cli::{Cli, Command};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "OTLAB_OUTPUT_ROOT";

/// `--out` if given, else `<root>/<name>` with the root taken from the
/// environment, then the config file, then `./runs`.
pub fn output_dir(out: Option<&Path>, config_root: Option<&Path>, name: &str) -> PathBuf {
    if let Some(o) = out {
        return o.to_path_buf();
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .or_else(|| config_root.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(name)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train::cmd_train(&a).map(|_| ()),
        Command::Sweep(a) => sweep::cmd_sweep(&a).map(|_| ()),
        Command::Oracle(a) => oracle::cmd_oracle(&a).map(|_| ()),
        Command::Plot(a) => report::cmd_plot(&a.dir).map(|_| ()),
    }
}

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use otlab_core::trainer::{run_training, RunError, RunOptions, RunRecord, TrainerConfig};

use crate::cli::TrainArgs;
use crate::config::{Dtype, ExperimentConfig};
use crate::report;

pub const EXPERIMENT_FILE: &str = "experiment.toml";

pub fn load_config(path: &Path, preset: Option<&str>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(p) = preset {
        cfg.preset = p.to_string();
    }
    Ok(cfg)
}

/// Runs one training job into `dir`, persisting everything.
pub fn train_into(exp: &ExperimentConfig, cfg: TrainerConfig, dir: &Path, wallclock: bool) -> Result<RunRecord, RunError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(EXPERIMENT_FILE), exp.to_toml())?;
    let opts = RunOptions {
        snapshot_every: exp.snapshot_every,
        eval: exp.eval_options(),
        out_dir: Some(dir.to_path_buf()),
        record_wallclock: wallclock,
    };
    let target = cfg.target.clone();
    match exp.dtype {
        Dtype::F32 => run_training::<f32, _>(cfg, &target, &opts),
        Dtype::F64 => run_training::<f64, _>(cfg, &target, &opts),
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<PathBuf> {
    let exp = load_config(&args.config, args.preset.as_deref())?;
    exp.validate(false)?;
    let seed = args.seed.or(exp.seeds.first().copied()).unwrap_or(0);
    let cfg = exp
        .resolve(seed, None)
        .map_err(crate::config::ConfigError::Invalid)?;
    let hash = cfg.config_hash();
    let name = format!("{}_seed{}_{}", cfg.preset.name, seed, &hash[..8]);
    let dir = crate::output_dir(args.out.as_deref(), exp.output_dir.as_deref(), &name);
    println!(
        "training {} (seed {seed}, {} iterations, config {}) -> {}",
        cfg.preset.name,
        cfg.total_iters,
        &hash[..12],
        dir.display()
    );
    let result = train_into(&exp, cfg, &dir, args.wallclock);
    let plots = |dir: &Path| -> Result<()> {
        if !args.no_plots {
            report::plot_run(dir).context("writing plots")?;
        }
        Ok(())
    };
    match result {
        Ok(rec) => {
            plots(&dir)?;
            if let Some(m) = &rec.final_modes {
                println!(
                    "finished: {} iterations, {}/{} modes covered, high-quality fraction {:.3}, W2 {:.4}",
                    rec.iterations_completed,
                    m.covered_modes,
                    m.per_mode_counts.len(),
                    m.high_quality_fraction,
                    rec.final_w2.unwrap_or(f64::NAN)
                );
            }
            Ok(dir)
        }
        Err(RunError::Aborted { source, record }) => {
            // Partial data is still worth looking at.
            let _ = plots(&dir);
            bail!(
                "training aborted after {} iterations: {source} (partial record in {})",
                record.iterations_completed,
                dir.display()
            )
        }
        Err(e) => Err(e).context("training failed"),
    }
}

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::cli::SweepArgs;
use crate::config::{Cell, ExperimentConfig};
use crate::report;
use crate::train::{load_config, train_into};
use otlab_core::trainer::RunError;

pub const SWEEP_FILE: &str = "sweep.json";
pub const RUNS_CSV: &str = "sweep_runs.csv";
pub const TABLE_CSV: &str = "sweep_table.csv";

/// Outcome of one (cell, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub cell: String,
    pub seed: u64,
    pub run_dir: String,
    pub config_hash: String,
    /// `finished`, `aborted` or `invalid`.
    pub status: String,
    pub reason: String,
    pub final_covered: Option<usize>,
    pub final_w2: Option<f64>,
    pub best_covered: Option<usize>,
    pub best_w2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub experiment_hash: String,
    pub experiment: ExperimentConfig,
    pub cells: Vec<Cell>,
    pub runs: Vec<RunRow>,
}

fn run_one(exp: &ExperimentConfig, cell: &Cell, seed: u64, dir: &Path) -> RunRow {
    let mut row = RunRow {
        cell: cell.id.clone(),
        seed,
        run_dir: format!("runs/{}_seed{seed}", cell.id),
        config_hash: String::new(),
        status: "invalid".into(),
        reason: String::new(),
        final_covered: None,
        final_w2: None,
        best_covered: None,
        best_w2: None,
    };
    let cfg = match exp.resolve(seed, Some(cell)) {
        Ok(c) => c,
        Err(v) => {
            row.reason = v.join("; ");
            return row;
        }
    };
    row.config_hash = cfg.config_hash();
    let rec = match train_into(exp, cfg, &dir.join(&row.run_dir), false) {
        Ok(rec) => {
            row.status = "finished".into();
            rec
        }
        Err(RunError::Aborted { source, record }) => {
            row.status = "aborted".into();
            row.reason = source.to_string();
            *record
        }
        Err(e) => {
            row.status = "aborted".into();
            row.reason = e.to_string();
            return row;
        }
    };
    row.final_covered = rec.final_modes.as_ref().map(|m| m.covered_modes);
    row.final_w2 = rec.final_w2;
    if let Some(b) = rec.best_snapshot() {
        row.best_covered = Some(b.modes.covered_modes);
        row.best_w2 = Some(b.w2_mean);
    }
    row
}

/// Runs every job on up to `parallel` worker threads. Jobs share nothing but
/// the read-only configuration and write only to their own directories.
pub fn execute(exp: &ExperimentConfig, dir: &Path, parallel: usize) -> Vec<RunRow> {
    let cells = exp.cells();
    let jobs: Vec<(&Cell, u64)> = cells.iter().flat_map(|c| exp.seeds.iter().map(move |&s| (c, s))).collect();
    let results: Mutex<Vec<Option<RunRow>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..parallel.clamp(1, jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(cell, seed)) = jobs.get(i) else {
                    break;
                };
                let row = run_one(exp, cell, seed, dir);
                println!(
                    "[{}/{}] {} seed {}: {}{}",
                    i + 1,
                    jobs.len(),
                    row.cell,
                    seed,
                    row.status,
                    if row.reason.is_empty() {
                        String::new()
                    } else {
                        format!(" ({})", row.reason)
                    }
                );
                results.lock().expect("no worker panicked")[i] = Some(row);
            });
        }
    });
    results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let s = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
    (Some(m), Some(s))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

pub fn write_tables(dir: &Path, summary: &SweepSummary) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(RUNS_CSV))?;
    for r in &summary.runs {
        w.serialize(r)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(TABLE_CSV))?;
    w.write_record([
        "cell",
        "tau",
        "reg_lambda",
        "alpha_min",
        "alpha_max",
        "schedule",
        "runs",
        "finished",
        "failed",
        "covered_final_mean",
        "covered_final_std",
        "w2_final_mean",
        "w2_final_std",
        "covered_best_mean",
        "w2_best_mean",
        "failures",
    ])?;
    for cell in &summary.cells {
        let rows: Vec<&RunRow> = summary.runs.iter().filter(|r| r.cell == cell.id).collect();
        let done: Vec<&&RunRow> = rows.iter().filter(|r| r.status == "finished").collect();
        let covered: Vec<f64> = done.iter().filter_map(|r| r.final_covered.map(|c| c as f64)).collect();
        let w2: Vec<f64> = done.iter().filter_map(|r| r.final_w2).collect();
        let bc: Vec<f64> = done.iter().filter_map(|r| r.best_covered.map(|c| c as f64)).collect();
        let bw: Vec<f64> = done.iter().filter_map(|r| r.best_w2).collect();
        let (cm, cs) = mean_std(&covered);
        let (wm, ws) = mean_std(&w2);
        let failures: Vec<String> = rows
            .iter()
            .filter(|r| r.status != "finished")
            .map(|r| format!("seed {}: {}: {}", r.seed, r.status, r.reason))
            .collect();
        let axis = |k: &str| {
            cell.axis_values()
                .into_iter()
                .find(|(name, _)| *name == k)
                .map(|(_, v)| v)
                .unwrap_or_default()
        };
        w.write_record([
            cell.id.clone(),
            axis("tau"),
            axis("reg_lambda"),
            axis("alpha_min"),
            axis("alpha_max"),
            axis("schedule"),
            rows.len().to_string(),
            done.len().to_string(),
            (rows.len() - done.len()).to_string(),
            opt(cm),
            opt(cs),
            opt(wm),
            opt(ws),
            opt(mean_std(&bc).0),
            opt(mean_std(&bw).0),
            failures.join(" | "),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<PathBuf> {
    let exp = load_config(&args.config, args.preset.as_deref())?;
    exp.validate(true)?;
    let hash = exp.config_hash();
    let dir = crate::output_dir(args.out.as_deref(), exp.output_dir.as_deref(), &format!("sweep_{}", &hash[..8]));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join(crate::train::EXPERIMENT_FILE), exp.to_toml())?;
    let cells = exp.cells();
    println!(
        "sweep of {} cells x {} seeds ({} parallel) -> {}",
        cells.len(),
        exp.seeds.len(),
        args.parallel.max(1),
        dir.display()
    );
    let runs = execute(&exp, &dir, args.parallel);
    let summary = SweepSummary {
        experiment_hash: hash,
        experiment: exp,
        cells,
        runs,
    };
    std::fs::write(dir.join(SWEEP_FILE), serde_json::to_string_pretty(&summary)?)?;
    write_tables(&dir, &summary)?;
    report::plot_sweep(&dir).context("writing sweep plots")?;
    let failed = summary.runs.iter().filter(|r| r.status != "finished").count();
    println!(
        "{} runs finished, {failed} failed; table in {}",
        summary.runs.len() - failed,
        dir.join(TABLE_CSV).display()
    );
    Ok(dir)
}

//! Figures regenerated purely from persisted run, sweep and oracle data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use otlab_core::diagnostics::{weight_statistics, Summary};
use otlab_core::trainer::run::{snapshot_dir, CONFIG_FILE, RECORD_FILE};
use otlab_core::trainer::{RunRecord, TrainerConfig};

use crate::oracle::{OracleReport, CURVE_FILE};
use crate::plots::{self, Series};
use crate::sweep::{RunRow, SweepSummary, RUNS_CSV, SWEEP_FILE};

pub const PLOT_DIR: &str = "plots";
const EXTENT: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirKind {
    Run,
    Sweep,
    Oracle,
}

pub fn dir_kind(dir: &Path) -> Option<DirKind> {
    if dir.join(RECORD_FILE).is_file() {
        Some(DirKind::Run)
    } else if dir.join(SWEEP_FILE).is_file() {
        Some(DirKind::Sweep)
    } else if dir.join(CURVE_FILE).is_file() {
        Some(DirKind::Oracle)
    } else {
        None
    }
}

/// Plots `dir` itself if it holds a record, otherwise every record directly
/// below it. Returns the directories plotted.
pub fn cmd_plot(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    let mut targets = Vec::new();
    if let Some(k) = dir_kind(dir) {
        targets.push((dir.to_path_buf(), k));
    } else {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        entries.sort();
        for p in entries {
            if let Some(k) = dir_kind(&p) {
                targets.push((p, k));
            }
        }
    }
    if targets.is_empty() {
        bail!(
            "no records in {} (expected {RECORD_FILE}, {SWEEP_FILE} or {CURVE_FILE})",
            dir.display()
        );
    }
    for (d, k) in &targets {
        match k {
            DirKind::Run => plot_run(d),
            DirKind::Sweep => plot_sweep(d),
            DirKind::Oracle => plot_oracle(d),
        }
        .with_context(|| format!("plotting {}", d.display()))?;
        println!("plotted {}", d.display());
    }
    Ok(targets.into_iter().map(|t| t.0).collect())
}

fn read_points(path: &Path, width: usize) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row: Vec<f64> = rec.iter().map(str::parse).collect::<Result<_, _>>()?;
        if row.len() != width {
            bail!("{}: expected {width} columns, found {}", path.display(), row.len());
        }
        out.push(row);
    }
    Ok(out)
}

fn write(path: &Path, s: &str) -> Result<()> {
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

/// Picks snapshot iterations that are positive multiples of `every`, falling
/// back to all snapshots when fewer than two qualify.
fn pick(iters: &[u64], every: u64, max: usize) -> Vec<u64> {
    let hits: Vec<u64> = iters.iter().copied().filter(|&i| i > 0 && i % every == 0).collect();
    let base = if hits.len() >= 2 { hits } else { iters.to_vec() };
    if base.len() <= max {
        return base;
    }
    (0..max).map(|k| base[k * (base.len() - 1) / (max - 1)]).collect()
}

/// Verifies the record against its config file and lists missing data files.
pub fn check_run(dir: &Path) -> Result<RunRecord> {
    let rec = RunRecord::load(dir).with_context(|| format!("loading {}", dir.join(RECORD_FILE).display()))?;
    let cfg_path = dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&cfg_path).with_context(|| format!("reading {}", cfg_path.display()))?;
    let cfg: TrainerConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", cfg_path.display()))?;
    let file_hash = cfg.config_hash();
    if file_hash != rec.config_hash || !rec.hash_matches_config() {
        bail!(
            "config hash mismatch: record says {} but {} hashes to {}",
            rec.config_hash,
            cfg_path.display(),
            file_hash
        );
    }
    let mut missing = Vec::new();
    for s in &rec.snapshots {
        for f in ["samples.csv", "arc.csv", "pairs.csv"] {
            let p = snapshot_dir(dir, s.iter).join(f);
            if !p.is_file() {
                missing.push(p.display().to_string());
            }
        }
    }
    if missing.is_empty() {
        Ok(rec)
    } else {
        bail!("missing data files:\n  - {}", missing.join("\n  - "))
    }
}

pub fn plot_run(dir: &Path) -> Result<()> {
    let rec = check_run(dir)?;
    let out = dir.join(PLOT_DIR);
    std::fs::create_dir_all(&out)?;
    let means = rec.config.target.means.clone();

    let mut s = String::from("iter,loss_v,loss_T,alpha,reg_value\n");
    for l in &rec.logs {
        writeln!(s, "{},{:?},{:?},{:?},{:?}", l.iter, l.loss_v, l.loss_t, l.alpha, l.reg_value)?;
    }
    write(&out.join("loss_curves.csv"), &s)?;
    let series = vec![
        Series {
            name: "potential loss".into(),
            points: rec.logs.iter().map(|l| (l.iter as f64, l.loss_v)).collect(),
        },
        Series {
            name: "generator loss".into(),
            points: rec.logs.iter().map(|l| (l.iter as f64, l.loss_t)).collect(),
        },
    ];
    plots::line_chart(&out.join("loss_curves.png"), &format!("{} losses", rec.config.preset.name), "iteration", "loss", &series, false)?;

    let ws = weight_statistics(&rec.logs);
    let mut s = String::from("iter,mean_w_hat,mean_w,min_w_hat,max_w_hat,min_w,max_w\n");
    for p in &ws {
        writeln!(s, "{},{:?},{:?},{:?},{:?},{:?},{:?}", p.iter, p.mean_w_hat, p.mean_w, p.min_w_hat, p.max_w_hat, p.min_w, p.max_w)?;
    }
    write(&out.join("weights.csv"), &s)?;
    let series = vec![
        Series {
            name: "mean w_hat (fake)".into(),
            points: ws.iter().map(|p| (p.iter as f64, p.mean_w_hat)).collect(),
        },
        Series {
            name: "mean w (real)".into(),
            points: ws.iter().map(|p| (p.iter as f64, p.mean_w)).collect(),
        },
    ];
    plots::line_chart(&out.join("weights.png"), "sample weights", "iteration", "weight", &series, false)?;

    let mut s = String::from("iter,covered_modes,high_quality_fraction,w2_mean,w2_std,arc_median,arc_max\n");
    for sn in &rec.snapshots {
        writeln!(
            s,
            "{},{},{:?},{:?},{:?},{:?},{:?}",
            sn.iter, sn.modes.covered_modes, sn.modes.high_quality_fraction, sn.w2_mean, sn.w2_std, sn.arc.median, sn.arc.max
        )?;
    }
    write(&out.join("snapshots.csv"), &s)?;
    let series = vec![Series {
        name: "empirical W2".into(),
        points: rec.snapshots.iter().map(|s| (s.iter as f64, s.w2_mean)).collect(),
    }];
    plots::line_chart(&out.join("w2.png"), "empirical W2 to the target", "iteration", "W2", &series, false)?;

    let iters: Vec<u64> = rec.snapshots.iter().map(|s| s.iter).collect();

    let chosen = pick(&iters, 6_000, 6);
    let mut s = String::from("iter,x,y\n");
    let mut panels = Vec::new();
    for &it in &chosen {
        let pts = read_points(&snapshot_dir(dir, it).join("samples.csv"), 2)?;
        for p in &pts {
            writeln!(s, "{it},{:?},{:?}", p[0], p[1])?;
        }
        panels.push((format!("iter {it}"), pts.iter().map(|p| [p[0], p[1]]).collect()));
    }
    write(&out.join("scatter.csv"), &s)?;
    plots::scatter_grid(&out.join("scatter.png"), &panels, &means, EXTENT)?;

    let chosen = pick(&iters, 5_000, 12);
    let mut s = String::from("iter,min,q1,median,q3,max\n");
    let mut boxes = Vec::new();
    for &it in &chosen {
        let vals: Vec<f64> = read_points(&snapshot_dir(dir, it).join("arc.csv"), 1)?.into_iter().map(|r| r[0]).collect();
        let q = Summary::of(&vals);
        writeln!(s, "{it},{:?},{:?},{:?},{:?},{:?}", q.min, q.q1, q.median, q.q3, q.max)?;
        boxes.push((format!("{it}"), [q.min, q.q1, q.median, q.q3, q.max]));
    }
    write(&out.join("arc_boxplot.csv"), &s)?;
    plots::boxplot(&out.join("arc_boxplot.png"), "average rate of change of the potential", "ARC", &boxes)?;

    if let Some(last) = rec.snapshots.last() {
        let segs = read_points(&snapshot_dir(dir, last.iter).join("pairs.csv"), 4)?;
        let mut s = String::from("x0,x1,y0,y1\n");
        for g in &segs {
            writeln!(s, "{:?},{:?},{:?},{:?}", g[0], g[1], g[2], g[3])?;
        }
        write(&out.join("transport_pairs.csv"), &s)?;
        let segs: Vec<[f64; 4]> = segs.iter().map(|g| [g[0], g[1], g[2], g[3]]).collect();
        plots::segments(&out.join("transport_pairs.png"), &format!("x -> T(x, z) at iter {}", last.iter), &segs, &means, EXTENT)?;
    }
    Ok(())
}

/// Axis value of one run row, from the sweep's cell table.
fn axis_value(cells: &SweepSummary, row: &RunRow, axis: &str) -> Option<String> {
    cells
        .cells
        .iter()
        .find(|c| c.id == row.cell)?
        .axis_values()
        .into_iter()
        .find(|(k, _)| *k == axis)
        .map(|(_, v)| v)
}

pub fn plot_sweep(dir: &Path) -> Result<()> {
    let summary: SweepSummary = serde_json::from_str(
        &std::fs::read_to_string(dir.join(SWEEP_FILE)).with_context(|| format!("reading {}", dir.join(SWEEP_FILE).display()))?,
    )?;
    if summary.experiment.config_hash() != summary.experiment_hash {
        bail!("config hash mismatch in {}", dir.join(SWEEP_FILE).display());
    }
    let runs_path = dir.join(RUNS_CSV);
    let mut rows = Vec::new();
    for r in csv::Reader::from_path(&runs_path)
        .with_context(|| format!("reading {}", runs_path.display()))?
        .deserialize()
    {
        let r: RunRow = r?;
        rows.push(r);
    }
    let out = dir.join(PLOT_DIR);
    std::fs::create_dir_all(&out)?;
    for axis in ["tau", "reg_lambda", "alpha_max", "schedule"] {
        // value -> (final W2s, final covered counts), finished runs only.
        let mut groups: BTreeMap<String, (Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
        for r in &rows {
            let Some(v) = axis_value(&summary, r, axis) else { continue };
            let g = groups.entry(v).or_default();
            if r.status == "finished" {
                g.0.extend(r.final_w2);
                g.1.extend(r.final_covered.map(|c| c as f64));
            } else {
                g.2 += 1;
            }
        }
        if groups.is_empty() {
            continue;
        }
        let numeric = groups.keys().all(|k| k.parse::<f64>().is_ok());
        let mut keys: Vec<String> = groups.keys().cloned().collect();
        if numeric {
            keys.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
        }
        let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
        let mut s = format!("{axis},runs_finished,runs_failed,w2_final_mean,covered_final_mean\n");
        let (mut w2_pts, mut cov_pts) = (Vec::new(), Vec::new());
        for (i, k) in keys.iter().enumerate() {
            let (w2, cov, failed) = &groups[k];
            let x = if numeric { k.parse().unwrap() } else { i as f64 };
            writeln!(s, "{k},{},{failed},{:?},{:?}", w2.len(), mean(w2), mean(cov))?;
            if !w2.is_empty() {
                w2_pts.push((x, mean(w2)));
                cov_pts.push((x, mean(cov)));
            }
        }
        write(&out.join(format!("axis_{axis}.csv")), &s)?;
        let label = if numeric { axis.to_string() } else { format!("{axis} (index: {})", keys.join(", ")) };
        let log_x = numeric && keys.len() > 2 && keys.iter().all(|k| k.parse::<f64>().unwrap() > 0.0);
        plots::line_chart(
            &out.join(format!("axis_{axis}_w2.png")),
            &format!("{} : W2 vs {axis}", summary.experiment.preset),
            &label,
            "final empirical W2",
            &[Series { name: "W2".into(), points: w2_pts }],
            log_x,
        )?;
        plots::line_chart(
            &out.join(format!("axis_{axis}_modes.png")),
            &format!("{} : covered modes vs {axis}", summary.experiment.preset),
            &label,
            "covered modes",
            &[Series { name: "modes".into(), points: cov_pts }],
            log_x,
        )?;
    }
    Ok(())
}

pub fn plot_oracle(dir: &Path) -> Result<()> {
    let report: OracleReport = serde_json::from_str(
        &std::fs::read_to_string(dir.join(CURVE_FILE)).with_context(|| format!("reading {}", dir.join(CURVE_FILE).display()))?,
    )?;
    let out = dir.join(PLOT_DIR);
    std::fs::create_dir_all(&out)?;
    let mut s = String::from("alpha,tv_distance,kkt_residual,converged,iterations,bound_lhs,bound_rhs,bound_holds\n");
    for p in &report.curve.points {
        writeln!(
            s,
            "{:?},{:?},{:?},{},{},{:?},{:?},{}",
            p.alpha, p.tv_distance, p.report.kkt_residual, p.report.converged, p.report.iterations, p.bound.lhs, p.bound.rhs, p.bound.holds
        )?;
    }
    write(&out.join("tv_curve.csv"), &s)?;
    let pts = |f: fn(&otlab_core::oracle::CurvePoint) -> f64| report.curve.points.iter().map(|p| (p.alpha, f(p))).collect();
    plots::line_chart(
        &out.join("tv_curve.png"),
        "plan distance to the OT plan",
        "alpha",
        "TV distance",
        &[Series { name: "TV".into(), points: pts(|p| p.tv_distance) }],
        true,
    )?;
    plots::line_chart(
        &out.join("bound.png"),
        "marginal divergence bound",
        "alpha",
        "value",
        &[
            Series { name: "divergence (lhs)".into(), points: pts(|p| p.bound.lhs) },
            Series { name: "tau/alpha W2^2 (rhs)".into(), points: pts(|p| p.bound.rhs) },
        ],
        true,
    )?;
    Ok(())
}

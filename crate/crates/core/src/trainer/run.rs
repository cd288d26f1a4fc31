//! Full training runs: the step loop plus periodic evaluation, metrics,
//! checkpoints and the run record.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{
    empirical_w2, mode_report, network_arc, network_transport_pairs, DiagnosticsError, ModeReport, Segment, Summary,
    DEFAULT_RADIUS_SIGMAS,
};
use crate::models::{generator_forward, sample_source};
use crate::scalar::Scalar;

use super::checkpoint::{self, CheckpointError};
use super::preset::TrainerConfig;
use super::step::{train_step, DataSource, StepLog, TrainerState};
use super::TrainError;

/// Sample sizes used at each snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub mode_samples: usize,
    pub arc_pairs: usize,
    pub w2_points: usize,
    pub w2_draws: usize,
    /// Generated points kept for scatter plots.
    pub scatter_points: usize,
    pub pair_points: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mode_samples: 10_000,
            arc_pairs: 10_000,
            w2_points: 512,
            w2_draws: 5,
            scatter_points: 1_000,
            pair_points: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub snapshot_every: u64,
    pub eval: EvalOptions,
    /// Persist metrics, checkpoints and snapshots here when set.
    pub out_dir: Option<PathBuf>,
    /// Fill `wallclock` in the metrics; off by default so streams are
    /// byte-identical across reruns.
    pub record_wallclock: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            snapshot_every: 1_000,
            eval: EvalOptions::default(),
            out_dir: None,
            record_wallclock: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Finished,
    Aborted(String),
}

/// Evaluation of the model after `iter` completed iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub iter: u64,
    pub modes: ModeReport,
    pub arc: Summary,
    pub w2_mean: f64,
    pub w2_std: f64,
    pub checkpoint: Option<String>,
    #[serde(skip)]
    pub arc_samples: Vec<f64>,
    #[serde(skip)]
    pub samples: Vec<[f64; 2]>,
    #[serde(skip)]
    pub pairs: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub config: TrainerConfig,
    pub dtype: String,
    pub status: RunStatus,
    pub iterations_completed: u64,
    pub metrics_file: Option<String>,
    pub checkpoints: Vec<String>,
    pub snapshots: Vec<Snapshot>,
    pub final_modes: Option<ModeReport>,
    pub final_w2: Option<f64>,
    /// Snapshot with the most covered modes, ties broken by lower W₂.
    pub best_iter: Option<u64>,
    #[serde(skip)]
    pub logs: Vec<StepLog>,
}

impl RunRecord {
    fn new<T: Scalar>(config: &TrainerConfig) -> Self {
        Self {
            config_hash: config.config_hash(),
            config: config.clone(),
            dtype: T::DTYPE.to_string(),
            status: RunStatus::Running,
            iterations_completed: 0,
            metrics_file: None,
            checkpoints: Vec::new(),
            snapshots: Vec::new(),
            final_modes: None,
            final_w2: None,
            best_iter: None,
            logs: Vec::new(),
        }
    }

    pub fn snapshot_at(&self, iter: u64) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.iter == iter)
    }

    pub fn best_snapshot(&self) -> Option<&Snapshot> {
        self.best_iter.and_then(|i| self.snapshot_at(i))
    }

    /// Standard deviation of `loss_v` over the last `window` logged steps.
    pub fn loss_v_std(&self, window: usize) -> f64 {
        let tail = &self.logs[self.logs.len().saturating_sub(window)..];
        let n = tail.len().max(1) as f64;
        let mean = tail.iter().map(|l| l.loss_v).sum::<f64>() / n;
        (tail.iter().map(|l| (l.loss_v - mean).powi(2)).sum::<f64>() / n).sqrt()
    }

    /// The metrics stream exactly as written to disk.
    pub fn metrics_ndjson(&self) -> String {
        let mut s = String::new();
        for l in &self.logs {
            s.push_str(&metrics_line(l));
        }
        s
    }

    pub fn hash_matches_config(&self) -> bool {
        self.config.config_hash() == self.config_hash
    }

    /// Reads `record.json` and the metrics stream from a run directory.
    pub fn load(dir: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(dir.join(RECORD_FILE))?;
        let mut rec: RunRecord = serde_json::from_str(&text)?;
        if let Some(m) = &rec.metrics_file {
            rec.logs = read_metrics(&dir.join(m))?;
        }
        Ok(rec)
    }

    fn finish_summary(&mut self) {
        if let Some(last) = self.snapshots.last() {
            self.final_modes = Some(last.modes.clone());
            self.final_w2 = Some(last.w2_mean);
        }
        self.best_iter = self
            .snapshots
            .iter()
            .max_by(|a, b| {
                a.modes
                    .covered_modes
                    .cmp(&b.modes.covered_modes)
                    .then(b.w2_mean.total_cmp(&a.w2_mean))
                    .then(a.iter.cmp(&b.iter))
            })
            .map(|s| s.iter);
    }
}

pub const RECORD_FILE: &str = "record.json";
pub const METRICS_FILE: &str = "metrics.ndjson";
pub const CONFIG_FILE: &str = "config.json";

pub fn metrics_line(log: &StepLog) -> String {
    let mut s = serde_json::to_string(log).expect("log serializes");
    s.push('\n');
    s
}

pub fn read_metrics(path: &Path) -> Result<Vec<StepLog>, RunError> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("run aborted after {} iterations: {source}", .record.iterations_completed)]
    Aborted {
        #[source]
        source: TrainError,
        record: Box<RunRecord>,
    },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("snapshot_every must be positive")]
    BadSnapshotInterval,
}

/// RNG for evaluation at iteration `iter`; independent of the training streams.
pub fn eval_rng(seed: u64, iter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0E7A_15ED_D1A6_0000);
    rng.set_stream(iter);
    rng
}

fn generate<T: Scalar>(state: &TrainerState<T>, n: usize, rng: &mut ChaCha8Rng) -> (Array2<T>, Array2<T>, Array2<T>) {
    let a = state.config.arch;
    let x = sample_source(n, a.data_dim, rng);
    let z = sample_source(n, a.noise_dim, rng);
    let y = generator_forward(&state.params, &x, &z);
    (x, z, y)
}

fn to_points<T: Scalar>(a: &Array2<T>) -> Vec<[f64; 2]> {
    a.rows()
        .into_iter()
        .map(|r| [r[0].to_f64_lossy(), r[1].to_f64_lossy()])
        .collect()
}

/// Mode coverage, ARC and empirical W₂ of the current model.
pub fn evaluate<T: Scalar>(state: &TrainerState<T>, eval: &EvalOptions) -> Result<Snapshot, DiagnosticsError> {
    let cfg = &state.config;
    let mut rng = eval_rng(cfg.seed, state.iter);
    let (_, _, y) = generate(state, eval.mode_samples, &mut rng);
    let modes = mode_report(&y, &cfg.target, DEFAULT_RADIUS_SIGMAS);
    let samples = to_points(&y.slice(ndarray::s![..eval.scatter_points.min(y.nrows()), ..]).to_owned());
    let arc = network_arc(&state.params, &cfg.target, eval.arc_pairs, state.iter, &mut rng)?;
    let mut w2s = Vec::with_capacity(eval.w2_draws);
    for _ in 0..eval.w2_draws {
        let (_, _, fake) = generate(state, eval.w2_points, &mut rng);
        let real: Array2<T> = cfg.target.sample(eval.w2_points, &mut rng);
        w2s.push(empirical_w2(&fake, &real)?);
    }
    let n = w2s.len().max(1) as f64;
    let w2_mean = w2s.iter().sum::<f64>() / n;
    let w2_std = (w2s.iter().map(|w| (w - w2_mean).powi(2)).sum::<f64>() / n).sqrt();
    let a = cfg.arch;
    let x = sample_source(eval.pair_points, a.data_dim, &mut rng);
    let z = sample_source(eval.pair_points, a.noise_dim, &mut rng);
    let pairs = network_transport_pairs(&state.params, &x, &z);
    Ok(Snapshot {
        iter: state.iter,
        modes,
        arc: arc.summary,
        w2_mean,
        w2_std,
        checkpoint: None,
        arc_samples: arc.samples,
        samples,
        pairs,
    })
}

struct Persist {
    dir: PathBuf,
    metrics: BufWriter<File>,
}

impl Persist {
    fn open(dir: &Path, config: &TrainerConfig) -> Result<Self, RunError> {
        fs::create_dir_all(dir.join("checkpoints"))?;
        fs::create_dir_all(dir.join("snapshots"))?;
        fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(config)?)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics: BufWriter::new(File::create(dir.join(METRICS_FILE))?),
        })
    }

    fn write_record(&mut self, rec: &RunRecord) -> Result<(), RunError> {
        self.metrics.flush()?;
        let tmp = self.dir.join("record.json.tmp");
        fs::write(&tmp, serde_json::to_string_pretty(rec)?)?;
        fs::rename(tmp, self.dir.join(RECORD_FILE))?;
        Ok(())
    }

    fn write_snapshot<T: Scalar>(&self, state: &TrainerState<T>, snap: &mut Snapshot) -> Result<String, RunError> {
        let rel = format!("checkpoints/ckpt_{:06}.bin", snap.iter);
        checkpoint::save(state, &self.dir.join(&rel))?;
        snap.checkpoint = Some(rel.clone());
        write_snapshot_data(&self.dir, snap)?;
        Ok(rel)
    }
}

pub fn snapshot_dir(run_dir: &Path, iter: u64) -> PathBuf {
    run_dir.join("snapshots").join(format!("iter_{iter:06}"))
}

/// Scatter samples, ARC values and transport segments as CSV.
pub fn write_snapshot_data(run_dir: &Path, snap: &Snapshot) -> std::io::Result<()> {
    let d = snapshot_dir(run_dir, snap.iter);
    fs::create_dir_all(&d)?;
    let mut s = String::from("x,y\n");
    for p in &snap.samples {
        s.push_str(&format!("{:?},{:?}\n", p[0], p[1]));
    }
    fs::write(d.join("samples.csv"), s)?;
    let mut s = String::from("arc\n");
    for a in &snap.arc_samples {
        s.push_str(&format!("{a:?}\n"));
    }
    fs::write(d.join("arc.csv"), s)?;
    let mut s = String::from("x0,x1,y0,y1\n");
    for p in &snap.pairs {
        s.push_str(&format!("{:?},{:?},{:?},{:?}\n", p.from[0], p.from[1], p.to[0], p.to[1]));
    }
    fs::write(d.join("pairs.csv"), s)
}

/// Executes `config.total_iters` steps, evaluating and checkpointing every
/// `snapshot_every` iterations (and at both ends).
///
/// A failing step ends the run with [`RunError::Aborted`], whose record has
/// already been flushed to disk.
pub fn run_training<T: Scalar, D: DataSource<T> + ?Sized>(
    config: TrainerConfig,
    data: &D,
    opts: &RunOptions,
) -> Result<RunRecord, RunError> {
    if opts.snapshot_every == 0 {
        return Err(RunError::BadSnapshotInterval);
    }
    let mut state: TrainerState<T> = TrainerState::new(config.clone())?;
    let mut rec = RunRecord::new::<T>(&config);
    let mut persist = match &opts.out_dir {
        Some(dir) => {
            rec.metrics_file = Some(METRICS_FILE.into());
            Some(Persist::open(dir, &config)?)
        }
        None => None,
    };
    let start = Instant::now();

    let snapshot = |state: &TrainerState<T>, rec: &mut RunRecord, persist: &mut Option<Persist>| -> Result<(), RunError> {
        let mut snap = evaluate(state, &opts.eval)?;
        if let Some(p) = persist.as_mut() {
            let rel = p.write_snapshot(state, &mut snap)?;
            rec.checkpoints.push(rel);
        }
        rec.snapshots.push(snap);
        if let Some(p) = persist.as_mut() {
            p.write_record(rec)?;
        }
        Ok(())
    };

    snapshot(&state, &mut rec, &mut persist)?;
    while state.iter < config.total_iters {
        match train_step(&mut state, data) {
            Ok(mut log) => {
                if opts.record_wallclock {
                    log.wallclock = Some(start.elapsed().as_secs_f64());
                }
                if let Some(p) = persist.as_mut() {
                    p.metrics.write_all(metrics_line(&log).as_bytes())?;
                }
                rec.logs.push(log);
                rec.iterations_completed = state.iter;
            }
            Err(e) => {
                rec.status = RunStatus::Aborted(e.to_string());
                rec.finish_summary();
                if let Some(p) = persist.as_mut() {
                    p.write_record(&rec)?;
                }
                return Err(RunError::Aborted {
                    source: e,
                    record: Box::new(rec),
                });
            }
        }
        if state.iter.is_multiple_of(opts.snapshot_every) || state.iter == config.total_iters {
            snapshot(&state, &mut rec, &mut persist)?;
        }
    }
    rec.status = RunStatus::Finished;
    rec.finish_summary();
    if let Some(p) = persist.as_mut() {
        p.write_record(&rec)?;
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::weight_statistics;
    use crate::models::ArchConfig;
    use crate::trainer::PresetName;

    fn small(name: PresetName, iters: u64) -> TrainerConfig {
        let mut c = TrainerConfig::toy(name, 11).with_total_iters(iters);
        c.arch = ArchConfig {
            hidden: 16,
            blocks: 1,
            ..ArchConfig::default()
        };
        c.batch_size = 32;
        c
    }

    fn quick() -> RunOptions {
        RunOptions {
            snapshot_every: 5,
            eval: EvalOptions {
                mode_samples: 200,
                arc_pairs: 100,
                w2_points: 32,
                w2_draws: 2,
                scatter_points: 50,
                pair_points: 10,
            },
            ..RunOptions::default()
        }
    }

    #[test]
    fn zero_iterations_give_only_the_initial_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(PresetName::UotmSp, 0);
        let opts = RunOptions {
            out_dir: Some(dir.path().to_path_buf()),
            ..quick()
        };
        let rec = run_training::<f32, _>(cfg.clone(), &cfg.target, &opts).unwrap();
        assert_eq!(rec.status, RunStatus::Finished);
        assert_eq!(rec.snapshots.len(), 1);
        assert_eq!(rec.checkpoints, vec!["checkpoints/ckpt_000000.bin".to_string()]);
        assert!(rec.logs.is_empty());
        assert_eq!(fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap(), "");
    }

    #[test]
    fn runs_are_reproducible_and_persisted() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(PresetName::UotmSp, 12);
        let opts = RunOptions {
            out_dir: Some(dir.path().to_path_buf()),
            ..quick()
        };
        let a = run_training::<f32, _>(cfg.clone(), &cfg.target, &opts).unwrap();
        let b = run_training::<f32, _>(cfg.clone(), &cfg.target, &quick()).unwrap();
        assert_eq!(a.metrics_ndjson(), b.metrics_ndjson());
        let strip = |r: &RunRecord| {
            let mut s = r.snapshots.clone();
            s.iter_mut().for_each(|s| s.checkpoint = None);
            s
        };
        assert_eq!(strip(&a), strip(&b));
        let iters: Vec<u64> = a.snapshots.iter().map(|s| s.iter).collect();
        assert_eq!(iters, vec![0, 5, 10, 12]);
        assert_eq!(fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap(), a.metrics_ndjson());
        assert!(a.metrics_ndjson().lines().all(|l| l.contains("\"wallclock\":null") && l.contains("\"loss_T\"")));

        let loaded = RunRecord::load(dir.path()).unwrap();
        assert_eq!(loaded.logs, a.logs);
        assert_eq!(loaded.status, RunStatus::Finished);
        assert!(loaded.hash_matches_config());
        let ck: TrainerState<f32> = checkpoint::load(&dir.path().join(&a.checkpoints[3])).unwrap();
        assert_eq!(ck.iter, 12);
        assert!(snapshot_dir(dir.path(), 10).join("arc.csv").exists());
    }

    #[test]
    fn divergence_aborts_with_a_flushed_partial_record() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(PresetName::Wgan, 20);
        cfg.divergence_threshold = 1e-12;
        let opts = RunOptions {
            out_dir: Some(dir.path().to_path_buf()),
            ..quick()
        };
        let err = run_training::<f32, _>(cfg.clone(), &cfg.target, &opts).unwrap_err();
        let RunError::Aborted { record, source } = err else {
            panic!("expected an abort");
        };
        assert!(matches!(source, TrainError::Diverged { iter: 0, .. }));
        assert!(matches!(record.status, RunStatus::Aborted(_)));
        let on_disk = RunRecord::load(dir.path()).unwrap();
        assert_eq!(on_disk.status, record.status);
    }

    #[test]
    fn wallclock_is_opt_in() {
        let cfg = small(PresetName::Wgan, 2);
        let opts = RunOptions {
            record_wallclock: true,
            ..quick()
        };
        let rec = run_training::<f32, _>(cfg.clone(), &cfg.target, &opts).unwrap();
        assert!(rec.logs.iter().all(|l| l.wallclock.is_some()));
    }

    #[test]
    fn logged_weights_follow_the_conjugate() {
        let cfg = small(PresetName::Otm, 10);
        let rec = run_training::<f32, _>(cfg.clone(), &cfg.target, &quick()).unwrap();
        for p in weight_statistics(&rec.logs) {
            assert_eq!((p.min_w_hat, p.max_w_hat, p.min_w, p.max_w), (1.0, 1.0, 1.0, 1.0));
        }
        let cfg = small(PresetName::UotmSp, 10);
        let rec = run_training::<f32, _>(cfg.clone(), &cfg.target, &quick()).unwrap();
        for p in weight_statistics(&rec.logs) {
            assert!(p.min_w_hat > 0.0 && p.min_w > 0.0);
            assert!(p.max_w_hat < 2.0 && p.max_w < 2.0);
        }
    }

    #[test]
    fn zero_snapshot_interval_is_rejected() {
        let cfg = small(PresetName::Wgan, 2);
        let opts = RunOptions {
            snapshot_every: 0,
            ..quick()
        };
        assert!(matches!(
            run_training::<f32, _>(cfg.clone(), &cfg.target, &opts),
            Err(RunError::BadSnapshotInterval)
        ));
    }
}

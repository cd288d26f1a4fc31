//! Experiment configuration files (TOML).
//!
//! ```toml
//! preset = "UOTM_SP"
//! seeds = [0, 1, 2]
//! snapshot_every = 1000
//!
//! [overrides]
//! total_iters = 30000
//! tau = 0.01
//!
//! [sweep]
//! tau = [0.01, 0.05]
//! reg_lambda = [0.0, 5.0]
//! alpha_range = [[0.2, 5.0], [1.0, 1.0]]
//! schedule = ["linear", "cosine"]
//! ```
//!
//! Every field of `[overrides]` is optional and replaces the preset's toy
//! default. `[sweep]` axes are crossed with each other and with `seeds`.

use std::path::{Path, PathBuf};

use otlab_core::conjugate::ConjugatePair;
use otlab_core::schedule::{DivergenceSchedule, ScheduleKind};
use otlab_core::trainer::{EvalOptions, PresetName, Regularizer, TrainerConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub total_iters: Option<u64>,
    pub tau: Option<f64>,
    pub g1: Option<ConjugatePair>,
    pub g2: Option<ConjugatePair>,
    pub regularizer: Option<Regularizer>,
    pub reg_lambda: Option<f64>,
    pub clip_bound: Option<f64>,
    pub grad_clip: Option<f64>,
    pub schedule: Option<ScheduleKind>,
    pub alpha_min: Option<f64>,
    pub alpha_max: Option<f64>,
    pub schedule_end_iter: Option<u64>,
    pub step_period: Option<u64>,
    pub batch_size: Option<usize>,
    pub lr_generator: Option<f64>,
    pub lr_potential: Option<f64>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub inner_iters_v: Option<u32>,
    pub inner_iters_t: Option<u32>,
    pub hidden: Option<usize>,
    pub blocks: Option<usize>,
    pub divergence_threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tau: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reg_lambda: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alpha_range: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schedule: Vec<ScheduleKind>,
}

impl SweepAxes {
    pub fn is_empty(&self) -> bool {
        self.tau.is_empty() && self.reg_lambda.is_empty() && self.alpha_range.is_empty() && self.schedule.is_empty()
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_snapshot_every() -> u64 {
    1_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: u64,
    #[serde(default)]
    pub dtype: Dtype,
    #[serde(default)]
    pub overrides: Overrides,
    #[serde(default)]
    pub eval: Option<EvalOptions>,
    #[serde(default)]
    pub sweep: SweepAxes,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

/// One point of the sweep grid: the axis values it fixes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: String,
    pub tau: Option<f64>,
    pub reg_lambda: Option<f64>,
    pub alpha_range: Option<[f64; 2]>,
    pub schedule: Option<ScheduleKind>,
}

impl Cell {
    fn apply(&self, o: &mut Overrides) {
        if let Some(t) = self.tau {
            o.tau = Some(t);
        }
        if let Some(l) = self.reg_lambda {
            o.reg_lambda = Some(l);
        }
        if let Some([lo, hi]) = self.alpha_range {
            o.alpha_min = Some(lo);
            o.alpha_max = Some(hi);
        }
        if let Some(k) = self.schedule {
            o.schedule = Some(k);
        }
    }

    /// `(axis, value)` pairs for tables.
    pub fn axis_values(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        if let Some(t) = self.tau {
            v.push(("tau", format!("{t:?}")));
        }
        if let Some(l) = self.reg_lambda {
            v.push(("reg_lambda", format!("{l:?}")));
        }
        if let Some([lo, hi]) = self.alpha_range {
            v.push(("alpha_min", format!("{lo:?}")));
            v.push(("alpha_max", format!("{hi:?}")));
        }
        if let Some(k) = self.schedule {
            v.push(("schedule", schedule_name(k).to_string()));
        }
        v
    }
}

pub fn schedule_name(k: ScheduleKind) -> &'static str {
    match k {
        ScheduleKind::Constant => "constant",
        ScheduleKind::Cosine => "cosine",
        ScheduleKind::Linear => "linear",
        ScheduleKind::Step => "step",
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn preset_name(&self) -> Result<PresetName, String> {
        self.preset.parse()
    }

    /// The trainer configuration for `seed` with `cell`'s axis values applied.
    pub fn resolve(&self, seed: u64, cell: Option<&Cell>) -> Result<TrainerConfig, Vec<String>> {
        let name = self.preset_name().map_err(|e| vec![format!("preset: {e}")])?;
        let mut o = self.overrides.clone();
        if let Some(c) = cell {
            c.apply(&mut o);
        }
        let mut cfg = TrainerConfig::toy(name, seed);
        if let Some(n) = o.total_iters {
            cfg = cfg.with_total_iters(n);
        }
        let p = &mut cfg.preset;
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value {
                    $field = v;
                }
            };
        }
        set!(p.tau, o.tau);
        set!(p.g1, o.g1);
        set!(p.g2, o.g2);
        set!(p.regularizer, o.regularizer);
        set!(p.reg_lambda, o.reg_lambda);
        set!(p.clip_bound, o.clip_bound);
        if o.grad_clip.is_some() {
            p.grad_clip = o.grad_clip;
        }
        let s = &mut p.schedule;
        if let Some(kind) = o.schedule {
            if s.kind == ScheduleKind::Constant && kind != ScheduleKind::Constant {
                // Ramp over the first three quarters of the run unless told otherwise.
                s.schedule_end_iter = (cfg.total_iters * 3 / 4).max(1);
            }
            s.kind = kind;
        }
        set!(s.alpha_min, o.alpha_min);
        set!(s.alpha_max, o.alpha_max);
        set!(s.schedule_end_iter, o.schedule_end_iter);
        set!(s.step_period, o.step_period);
        if s.kind == ScheduleKind::Constant {
            *s = DivergenceSchedule {
                alpha_max: s.alpha_min,
                ..*s
            };
        }
        set!(cfg.batch_size, o.batch_size);
        set!(cfg.lr_generator, o.lr_generator);
        set!(cfg.lr_potential, o.lr_potential);
        set!(cfg.adam_beta1, o.adam_beta1);
        set!(cfg.adam_beta2, o.adam_beta2);
        set!(cfg.adam_eps, o.adam_eps);
        set!(cfg.inner_iters_v, o.inner_iters_v);
        set!(cfg.inner_iters_t, o.inner_iters_t);
        set!(cfg.arch.hidden, o.hidden);
        set!(cfg.arch.blocks, o.blocks);
        set!(cfg.divergence_threshold, o.divergence_threshold);
        let v = cfg.violations();
        if v.is_empty() {
            Ok(cfg)
        } else {
            Err(v)
        }
    }

    /// Cross product of the sweep axes; a single empty cell without axes.
    pub fn cells(&self) -> Vec<Cell> {
        fn axis<T: Copy>(v: &[T]) -> Vec<Option<T>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().copied().map(Some).collect()
            }
        }
        let s = &self.sweep;
        let mut out = Vec::new();
        for tau in axis(&s.tau) {
            for lam in axis(&s.reg_lambda) {
                for ar in axis(&s.alpha_range) {
                    for kind in axis(&s.schedule) {
                        let mut cell = Cell {
                            id: String::new(),
                            tau,
                            reg_lambda: lam,
                            alpha_range: ar,
                            schedule: kind,
                        };
                        let parts: Vec<String> =
                            cell.axis_values().iter().map(|(k, v)| format!("{k}={v}")).collect();
                        cell.id = if parts.is_empty() {
                            format!("cell{:03}", out.len())
                        } else {
                            format!("cell{:03}_{}", out.len(), parts.join("_"))
                        };
                        out.push(cell);
                    }
                }
            }
        }
        out
    }

    /// Every problem with the file, so users can fix them in one pass.
    pub fn violations(&self, require_sweep: bool) -> Vec<String> {
        let mut v = Vec::new();
        if let Err(e) = self.preset_name() {
            v.push(format!("preset: {e}"));
        }
        if self.seeds.is_empty() {
            v.push("seeds: at least one seed is required".into());
        }
        if self.snapshot_every == 0 {
            v.push("snapshot_every: must be positive".into());
        }
        if require_sweep && self.sweep.is_empty() {
            v.push("sweep: at least one axis (tau, reg_lambda, alpha_range, schedule) must list values".into());
        }
        if v.iter().any(|m| m.starts_with("preset")) {
            return v;
        }
        let seed = self.seeds.first().copied().unwrap_or(0);
        let mut seen = std::collections::BTreeSet::new();
        for cell in self.cells() {
            if let Err(errs) = self.resolve(seed, Some(&cell)) {
                for e in errs {
                    let msg = if self.sweep.is_empty() {
                        e
                    } else {
                        format!("{}: {e}", cell.id)
                    };
                    if seen.insert(msg.clone()) {
                        v.push(msg);
                    }
                }
            }
        }
        v
    }

    pub fn validate(&self, require_sweep: bool) -> Result<(), ConfigError> {
        let v = self.violations(require_sweep);
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        self.eval.unwrap_or_default()
    }
}

//! Named presets of the unified framework and the trainer configuration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conjugate::ConjugatePair;
use crate::models::{ArchConfig, GaussianMixtureTarget};
use crate::schedule::DivergenceSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PresetName {
    #[serde(rename = "WGAN")]
    Wgan,
    #[serde(rename = "WGAN_GP")]
    WganGp,
    #[serde(rename = "OTM")]
    Otm,
    #[serde(rename = "UOTM_NoCost")]
    UotmNoCost,
    #[serde(rename = "UOTM_SP")]
    UotmSp,
    #[serde(rename = "UOTM_KL")]
    UotmKl,
    #[serde(rename = "UOTM_SD")]
    UotmSd,
}

impl PresetName {
    pub const ALL: [PresetName; 7] = [
        Self::Wgan,
        Self::WganGp,
        Self::Otm,
        Self::UotmNoCost,
        Self::UotmSp,
        Self::UotmKl,
        Self::UotmSd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Wgan => "WGAN",
            Self::WganGp => "WGAN_GP",
            Self::Otm => "OTM",
            Self::UotmNoCost => "UOTM_NoCost",
            Self::UotmSp => "UOTM_SP",
            Self::UotmKl => "UOTM_KL",
            Self::UotmSd => "UOTM_SD",
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.replace('-', "_");
        Self::ALL
            .iter()
            .copied()
            .find(|p| p.as_str().eq_ignore_ascii_case(&norm))
            .ok_or_else(|| {
                let valid: Vec<_> = Self::ALL.iter().map(|p| p.as_str()).collect();
                format!("unknown preset `{s}`; valid presets: {}", valid.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    None,
    R1,
    GradientPenalty,
    WeightClip,
}

/// One row of the unified framework: cost intensity, conjugates,
/// regularizer and α schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPreset {
    pub name: PresetName,
    pub tau: f64,
    pub g1: ConjugatePair,
    pub g2: ConjugatePair,
    pub g3: ConjugatePair,
    pub regularizer: Regularizer,
    pub reg_lambda: f64,
    pub clip_bound: f64,
    /// Optional global gradient-norm clip on the potential update.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    pub schedule: DivergenceSchedule,
}

impl ModelPreset {
    /// Toy-benchmark defaults for `name` with a `total_iters`-long run.
    pub fn toy(name: PresetName, total_iters: u64) -> Self {
        use ConjugatePair::*;
        let base = Self {
            name,
            tau: 0.0,
            g1: Identity,
            g2: Identity,
            g3: Identity,
            regularizer: Regularizer::None,
            reg_lambda: 0.0,
            clip_bound: 0.1,
            grad_clip: None,
            schedule: DivergenceSchedule::constant(1.0),
        };
        match name {
            PresetName::Wgan => Self {
                regularizer: Regularizer::WeightClip,
                ..base
            },
            PresetName::WganGp => Self {
                regularizer: Regularizer::GradientPenalty,
                reg_lambda: 5.0,
                ..base
            },
            PresetName::Otm => Self {
                tau: 0.05,
                regularizer: Regularizer::R1,
                reg_lambda: 5.0,
                ..base
            },
            PresetName::UotmNoCost => Self {
                g1: Softplus,
                g2: Softplus,
                ..base
            },
            PresetName::UotmSp => Self {
                tau: 0.01,
                g1: Softplus,
                g2: Softplus,
                ..base
            },
            PresetName::UotmKl => Self {
                tau: 0.01,
                g1: KLExp,
                g2: KLExp,
                ..base
            },
            PresetName::UotmSd => Self {
                tau: 0.01,
                g1: Softplus,
                g2: Softplus,
                schedule: DivergenceSchedule::linear(0.2, 5.0, (total_iters * 3 / 4).max(1)),
                ..base
            },
        }
    }

    /// Every violated preset invariant, as human-readable messages.
    pub fn violations(&self) -> Vec<String> {
        use ConjugatePair::*;
        let mut v = Vec::new();
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            v.push(format!("preset.tau must be finite and non-negative, got {}", self.tau));
        }
        if self.g3 != Identity {
            v.push("preset.g3 must be identity".to_string());
        }
        if !(self.reg_lambda >= 0.0 && self.reg_lambda.is_finite()) {
            v.push(format!("preset.reg_lambda must be non-negative, got {}", self.reg_lambda));
        }
        if !(self.clip_bound > 0.0) {
            v.push(format!("preset.clip_bound must be positive, got {}", self.clip_bound));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                v.push(format!("preset.grad_clip must be positive, got {c}"));
            }
        }
        if let Err(e) = self.schedule.validate() {
            v.push(format!("preset.schedule: {e}"));
        }
        let pairs = |a: ConjugatePair| self.g1 == a && self.g2 == a;
        let zero_tau = self.tau == 0.0;
        let shape_ok = match self.name {
            PresetName::Wgan => zero_tau && pairs(Identity) && self.regularizer == Regularizer::WeightClip,
            PresetName::WganGp => {
                zero_tau && pairs(Identity) && self.regularizer == Regularizer::GradientPenalty
            }
            PresetName::Otm => !zero_tau && pairs(Identity),
            PresetName::UotmNoCost => zero_tau && pairs(Softplus),
            PresetName::UotmSp => !zero_tau && pairs(Softplus),
            PresetName::UotmKl => !zero_tau && pairs(KLExp),
            PresetName::UotmSd => !zero_tau && pairs(Softplus) && !self.schedule.is_constant(),
        };
        if !shape_ok {
            v.push(format!(
                "preset {} requires a different (tau, g1, g2, regularizer, schedule) combination",
                self.name
            ));
        }
        v
    }
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub preset: ModelPreset,
    pub total_iters: u64,
    pub inner_iters_v: u32,
    pub inner_iters_t: u32,
    pub batch_size: usize,
    pub lr_generator: f64,
    pub lr_potential: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub arch: ArchConfig,
    pub target: GaussianMixtureTarget,
    /// Any |loss| above this aborts the run as diverged.
    pub divergence_threshold: f64,
}

impl TrainerConfig {
    pub const TOY_ITERS: u64 = 30_000;

    /// Toy-benchmark defaults: batch 128, learning rates 2e-4 / 1e-4,
    /// β₂ = 0.9, β₁ = 0 for the identity-conjugate models and 0.5 otherwise.
    pub fn toy(name: PresetName, seed: u64) -> Self {
        let preset = ModelPreset::toy(name, Self::TOY_ITERS);
        let beta1 = match name {
            PresetName::Wgan | PresetName::WganGp | PresetName::Otm => 0.0,
            _ => 0.5,
        };
        Self {
            preset,
            total_iters: Self::TOY_ITERS,
            inner_iters_v: 1,
            inner_iters_t: 1,
            batch_size: 128,
            lr_generator: 2e-4,
            lr_potential: 1e-4,
            adam_beta1: beta1,
            adam_beta2: 0.9,
            adam_eps: 1e-8,
            seed,
            arch: ArchConfig::default(),
            target: GaussianMixtureTarget::default(),
            divergence_threshold: 1e8,
        }
    }

    /// Shortens the run, rescaling a scheduled preset's end point.
    pub fn with_total_iters(mut self, total_iters: u64) -> Self {
        if !self.preset.schedule.is_constant() {
            let old = self.total_iters.max(1) as f64;
            let frac = self.preset.schedule.schedule_end_iter as f64 / old;
            self.preset.schedule.schedule_end_iter = ((total_iters as f64 * frac).round() as u64).max(1);
        }
        self.total_iters = total_iters;
        self
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = self.preset.violations();
        if self.inner_iters_v == 0 {
            v.push("inner_iters_v must be positive".into());
        }
        if self.inner_iters_t == 0 {
            v.push("inner_iters_t must be positive".into());
        }
        if self.batch_size == 0 {
            v.push("batch_size must be positive".into());
        }
        for (name, lr) in [("lr_generator", self.lr_generator), ("lr_potential", self.lr_potential)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                v.push(format!("{name} must be finite and non-negative, got {lr}"));
            }
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                v.push(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            v.push("adam_eps must be positive".into());
        }
        let a = &self.arch;
        if a.hidden == 0 || a.data_dim == 0 || a.noise_dim == 0 {
            v.push("arch dimensions must be positive".into());
        }
        if a.data_dim != 2 && !self.target.means.is_empty() {
            v.push("the mixture target is two-dimensional; arch.data_dim must be 2".into());
        }
        if self.target.means.is_empty() || !(self.target.sigma > 0.0) {
            v.push("target needs at least one mode and a positive sigma".into());
        }
        if !(self.divergence_threshold > 0.0) {
            v.push("divergence_threshold must be positive".into());
        }
        v
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn config_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

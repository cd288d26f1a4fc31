//! The unified adversarial trainer.

pub mod checkpoint;
pub mod losses;
pub mod optim;
pub mod preset;
pub mod run;
pub mod step;

use thiserror::Error;

use crate::conjugate::MathError;

pub use losses::{
    generator_loss, gradient_penalty, potential_loss, r1_regularizer, sample_weights, weight_clip,
};
pub use optim::{Adam, AdamConfig};
pub use preset::{ModelPreset, PresetName, Regularizer, TrainerConfig};
pub use run::{evaluate, run_training, EvalOptions, RunError, RunOptions, RunRecord, RunStatus, Snapshot};
pub use step::{
    generator_objective, iteration_rng, potential_objective, train_step, BatchSample, DataSource,
    StepLog, TrainerState, WeightSummary,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("{}non-finite value in {term}", fmt_iter(*.iter))]
    NonFinite { iter: Option<u64>, term: String },
    #[error("{}{term}: {source}", fmt_iter(*.iter))]
    Math {
        iter: Option<u64>,
        term: String,
        #[source]
        source: MathError,
    },
    #[error("iteration {iter}: {term} diverged (|{value:e}| above threshold)")]
    Diverged { iter: u64, term: String, value: f64 },
    #[error("shape error: {0}")]
    Shape(String),
}

fn fmt_iter(iter: Option<u64>) -> String {
    iter.map(|i| format!("iteration {i}: ")).unwrap_or_default()
}

impl TrainError {
    /// Attaches the iteration index to errors raised below the step loop.
    pub fn at_iter(self, i: u64) -> Self {
        match self {
            Self::NonFinite { term, .. } => Self::NonFinite { iter: Some(i), term },
            Self::Math { term, source, .. } => Self::Math {
                iter: Some(i),
                term,
                source,
            },
            other => other,
        }
    }
}

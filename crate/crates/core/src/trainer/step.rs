//! One iteration of the alternating potential/generator updates.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::models::{generator_tape, potential_tape, sample_source, GaussianMixtureTarget, NetworkParams};
use crate::scalar::{lit, Scalar};

use super::losses::{
    cost_tape, gradient_penalty_tape, interpolate, r1_tape, sample_weights, scaled_conj_tape,
    weight_clip_in_place,
};
use super::optim::{clip_grad_norm, Adam, AdamConfig};
use super::preset::{ModelPreset, Regularizer, TrainerConfig};
use super::TrainError;

/// Supplies target samples; the source is always a standard Gaussian.
pub trait DataSource<T: Scalar> {
    fn sample_target(&self, n: usize, rng: &mut ChaCha8Rng) -> Array2<T>;
}

impl<T: Scalar> DataSource<T> for GaussianMixtureTarget {
    fn sample_target(&self, n: usize, rng: &mut ChaCha8Rng) -> Array2<T> {
        self.sample(n, rng)
    }
}

/// Source points `x`, target points `y`, auxiliary noise `z` and
/// interpolation weights `t` (used only by the gradient penalty).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSample<T> {
    pub x: Array2<T>,
    pub y: Array2<T>,
    pub z: Array2<T>,
    pub t: Array1<T>,
}

impl<T: Scalar> BatchSample<T> {
    pub fn draw<D: DataSource<T> + ?Sized>(
        data: &D,
        n: usize,
        data_dim: usize,
        noise_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let x = sample_source(n, data_dim, rng);
        let y = data.sample_target(n, rng);
        let z = sample_source(n, noise_dim, rng);
        let t = Array1::from_shape_fn(n, |_| lit::<T>(rng.random::<f64>()));
        Self { x, y, z, t }
    }
}

/// RNG for iteration `iter` of a run seeded with `seed`. Stream 0 is reserved
/// for parameter initialization.
pub fn iteration_rng(seed: u64, iter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iter.wrapping_add(1));
    rng
}

/// Loss value, gradients and per-sample quantities of the potential objective.
#[derive(Debug, Clone)]
pub struct PotentialEval<T> {
    pub loss: T,
    pub reg_value: T,
    pub grads: Vec<Array2<T>>,
    pub l_hat: Vec<T>,
    pub v_real: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct GeneratorEval<T> {
    pub loss: T,
    pub grads: Vec<Array2<T>>,
}

fn finite_or<T: Scalar>(term: &str, v: T) -> Result<T, TrainError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(TrainError::NonFinite {
            iter: None,
            term: term.to_string(),
        })
    }
}

fn check_grads<T: Scalar>(term: &str, grads: &[Array2<T>]) -> Result<(), TrainError> {
    if grads.iter().all(|g| g.iter().all(|v| v.is_finite())) {
        Ok(())
    } else {
        Err(TrainError::NonFinite {
            iter: None,
            term: term.to_string(),
        })
    }
}

/// `L_v` and its gradient with respect to the potential parameters.
pub fn potential_objective<T: Scalar>(
    preset: &ModelPreset,
    params: &NetworkParams<T>,
    batch: &BatchSample<T>,
    alpha: T,
) -> Result<PotentialEval<T>, TrainError> {
    let arch = &params.arch;
    let tape = Tape::new();
    let gen = params.generator.bind(&tape);
    let pot = params.potential.bind(&tape);
    let x = tape.leaf(batch.x.clone());
    let fake = generator_tape(arch, &gen, x, tape.leaf(batch.z.clone()));
    let y = tape.leaf(batch.y.clone());
    let v_fake = potential_tape(arch, &pot, fake);
    let v_real = potential_tape(arch, &pot, y);
    let cost = cost_tape(lit::<T>(preset.tau), x, fake);
    let arg_fake = v_fake - cost;
    let t1 = scaled_conj_tape(preset.g1, alpha, arg_fake).mean();
    let t2 = scaled_conj_tape(preset.g2, alpha, -v_real).mean();
    finite_or("g1_term", t1.item())?;
    finite_or("g2_term", t2.item())?;
    let reg = match preset.regularizer {
        Regularizer::R1 => Some(r1_tape(arch, &pot, y)),
        Regularizer::GradientPenalty => {
            let interp = interpolate(&batch.y, &fake.value(), &batch.t);
            Some(gradient_penalty_tape(arch, &pot, tape.leaf(interp)))
        }
        Regularizer::None | Regularizer::WeightClip => None,
    };
    let mut loss = t1 + t2;
    let mut reg_value = T::zero();
    if let Some(r) = reg {
        reg_value = finite_or("regularizer", r.item())?;
        if preset.reg_lambda != 0.0 {
            loss = loss + r.scale(lit::<T>(preset.reg_lambda));
        }
    }
    let loss_value = finite_or("loss_v", loss.item())?;
    let grads: Vec<_> = tape
        .grad(loss, &pot)
        .into_iter()
        .map(|g| g.value().as_ref().clone())
        .collect();
    check_grads("grad_v", &grads)?;
    Ok(PotentialEval {
        loss: loss_value,
        reg_value,
        grads,
        l_hat: arg_fake.value().iter().map(|&v| -v).collect(),
        v_real: v_real.value().iter().copied().collect(),
    })
}

/// `L_T` and its gradient with respect to the generator parameters.
pub fn generator_objective<T: Scalar>(
    preset: &ModelPreset,
    params: &NetworkParams<T>,
    batch: &BatchSample<T>,
) -> Result<GeneratorEval<T>, TrainError> {
    let arch = &params.arch;
    let tape = Tape::new();
    let gen = params.generator.bind(&tape);
    let pot = params.potential.bind(&tape);
    let x = tape.leaf(batch.x.clone());
    let fake = generator_tape(arch, &gen, x, tape.leaf(batch.z.clone()));
    let v_fake = potential_tape(arch, &pot, fake);
    let loss = (cost_tape(lit::<T>(preset.tau), x, fake) - v_fake).mean();
    let loss_value = finite_or("loss_T", loss.item())?;
    let grads: Vec<_> = tape
        .grad(loss, &gen)
        .into_iter()
        .map(|g| g.value().as_ref().clone())
        .collect();
    check_grads("grad_T", &grads)?;
    Ok(GeneratorEval {
        loss: loss_value,
        grads,
    })
}

/// Min/mean/max of a weight batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl WeightSummary {
    pub fn of<T: Scalar>(ws: &[T]) -> Self {
        let mut s = Self {
            mean: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        };
        for &w in ws {
            let w = w.to_f64_lossy();
            s.mean += w;
            s.min = s.min.min(w);
            s.max = s.max.max(w);
        }
        s.mean /= ws.len().max(1) as f64;
        s
    }
}

/// Per-iteration metrics record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub iter: u64,
    pub loss_v: f64,
    #[serde(rename = "loss_T")]
    pub loss_t: f64,
    pub alpha: f64,
    pub reg_value: f64,
    pub w_hat: WeightSummary,
    pub w: WeightSummary,
    /// Seconds since the start of the run; `None` keeps streams byte-identical.
    pub wallclock: Option<f64>,
}

/// Parameters, optimizer moments and iteration counter of one run.
#[derive(Debug, Clone)]
pub struct TrainerState<T: Scalar> {
    pub config: TrainerConfig,
    pub params: NetworkParams<T>,
    pub opt_generator: Adam<T>,
    pub opt_potential: Adam<T>,
    pub iter: u64,
}

impl<T: Scalar> TrainerState<T> {
    pub fn new(config: TrainerConfig) -> Result<Self, TrainError> {
        let v = config.violations();
        if !v.is_empty() {
            return Err(TrainError::InvalidConfig(v));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = NetworkParams::init(config.arch, &mut rng);
        Ok(Self::from_params(config, params))
    }

    pub fn from_params(config: TrainerConfig, params: NetworkParams<T>) -> Self {
        let adam = |lr| AdamConfig {
            lr,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
        };
        let opt_generator = Adam::new(adam(config.lr_generator), &params.generator);
        let opt_potential = Adam::new(adam(config.lr_potential), &params.potential);
        Self {
            config,
            params,
            opt_generator,
            opt_potential,
            iter: 0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.config.preset.schedule.alpha_at(self.iter)
    }

    /// One potential update on `batch`; returns the evaluation before the step.
    pub fn potential_update(&mut self, batch: &BatchSample<T>, alpha: T) -> Result<PotentialEval<T>, TrainError> {
        let preset = &self.config.preset;
        let mut eval = potential_objective(preset, &self.params, batch, alpha)?;
        if let Some(c) = preset.grad_clip {
            clip_grad_norm(&mut eval.grads, c);
        }
        self.opt_potential.update(&mut self.params.potential, &eval.grads);
        if preset.regularizer == Regularizer::WeightClip {
            weight_clip_in_place(&mut self.params, lit::<T>(preset.clip_bound));
        }
        Ok(eval)
    }

    pub fn generator_update(&mut self, batch: &BatchSample<T>) -> Result<GeneratorEval<T>, TrainError> {
        let eval = generator_objective(&self.config.preset, &self.params, batch)?;
        self.opt_generator.update(&mut self.params.generator, &eval.grads);
        Ok(eval)
    }
}

fn check_divergence(term: &str, value: f64, threshold: f64, iter: u64) -> Result<(), TrainError> {
    if value.abs() > threshold {
        Err(TrainError::Diverged {
            iter,
            term: term.to_string(),
            value,
        })
    } else {
        Ok(())
    }
}

/// Runs iteration `state.iter`: `K_v` potential updates then `K_T` generator
/// updates, each on a fresh batch, and advances the counter.
pub fn train_step<T: Scalar, D: DataSource<T> + ?Sized>(
    state: &mut TrainerState<T>,
    data: &D,
) -> Result<StepLog, TrainError> {
    let iter = state.iter;
    let cfg = state.config.clone();
    let alpha_f = state.alpha();
    let alpha = lit::<T>(alpha_f);
    let mut rng = iteration_rng(cfg.seed, iter);
    let draw = |rng: &mut ChaCha8Rng| {
        BatchSample::draw(data, cfg.batch_size, cfg.arch.data_dim, cfg.arch.noise_dim, rng)
    };
    let at = |e: TrainError| e.at_iter(iter);

    let mut last_v = None;
    for _ in 0..cfg.inner_iters_v {
        let batch = draw(&mut rng);
        last_v = Some(state.potential_update(&batch, alpha).map_err(at)?);
    }
    let pv = last_v.expect("inner_iters_v > 0");
    check_divergence("loss_v", pv.loss.to_f64_lossy(), cfg.divergence_threshold, iter)?;
    let (w_hat, w) = sample_weights(&cfg.preset, alpha, &pv.l_hat, &pv.v_real).map_err(at)?;

    let mut loss_t = T::zero();
    for _ in 0..cfg.inner_iters_t {
        let batch = draw(&mut rng);
        loss_t = state.generator_update(&batch).map_err(at)?.loss;
    }
    check_divergence("loss_T", loss_t.to_f64_lossy(), cfg.divergence_threshold, iter)?;

    state.iter += 1;
    Ok(StepLog {
        iter,
        loss_v: pv.loss.to_f64_lossy(),
        loss_t: loss_t.to_f64_lossy(),
        alpha: alpha_f,
        reg_value: pv.reg_value.to_f64_lossy(),
        w_hat: WeightSummary::of(&w_hat),
        w: WeightSummary::of(&w),
        wallclock: None,
    })
}

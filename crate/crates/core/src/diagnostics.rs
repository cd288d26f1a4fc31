//! Run diagnostics: potential rate-of-change, mode coverage, empirical W₂,
//! transport segments and adaptive-weight series.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{generator_forward, potential_forward, GaussianMixtureTarget, NetworkParams};
use crate::oracle::solve_assignment;
use crate::scalar::Scalar;
use crate::trainer::{DataSource, StepLog};

/// Largest cloud accepted by [`empirical_w2`]; the assignment is cubic.
pub const W2_MAX_POINTS: usize = 512;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("clouds must have equal sizes, got {0} and {1}")]
    SizeMismatch(usize, usize),
    #[error("cloud of {size} points exceeds the exact-assignment cap of {cap}")]
    TooLarge { size: usize, cap: usize },
    #[error("clouds must be non-empty and share a dimension")]
    Shape,
    #[error("{0}")]
    InvalidArgument(String),
}

/// Order statistics of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl Summary {
    /// Quartiles by linear interpolation between order statistics.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                min: f64::NAN,
                q1: f64::NAN,
                median: f64::NAN,
                q3: f64::NAN,
                max: f64::NAN,
                mean: f64::NAN,
            };
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (s.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
        };
        Self {
            min: s[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: s[s.len() - 1],
            mean: s.iter().sum::<f64>() / s.len() as f64,
        }
    }
}

/// Axis-aligned sampling box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Region {
    /// `[−14, 14]²`, enclosing the radius-12 ring with room to spare.
    pub fn toy() -> Self {
        Self {
            lo: [-14.0, -14.0],
            hi: [14.0, 14.0],
        }
    }
}

/// `|v(b) − v(a)| / ‖b − a‖` over random pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcDistribution {
    pub iteration: u64,
    pub samples: Vec<f64>,
    pub summary: Summary,
}

pub const ARC_DEFAULT_PAIRS: usize = 10_000;

/// Average rate of change of `potential` between `a` uniform over `region`
/// and `b` drawn from `data`. Coincident pairs are redrawn.
pub fn arc_distribution<T, F, D>(
    potential: F,
    region: Region,
    data: &D,
    n_pairs: usize,
    iteration: u64,
    rng: &mut ChaCha8Rng,
) -> Result<ArcDistribution, DiagnosticsError>
where
    T: Scalar,
    F: Fn(&Array2<T>) -> Array1<T>,
    D: DataSource<T> + ?Sized,
{
    if n_pairs == 0 {
        return Err(DiagnosticsError::InvalidArgument("n_pairs must be at least 1".into()));
    }
    if (0..2).any(|d| !(region.hi[d] > region.lo[d])) {
        return Err(DiagnosticsError::InvalidArgument("region must have positive extent".into()));
    }
    let mut a = Array2::<T>::zeros((n_pairs, 2));
    for mut row in a.rows_mut() {
        for d in 0..2 {
            row[d] = T::from_f64_lossy(rng.random_range(region.lo[d]..region.hi[d]));
        }
    }
    let mut b: Array2<T> = data.sample_target(n_pairs, rng);
    if b.dim() != (n_pairs, 2) {
        return Err(DiagnosticsError::Shape);
    }
    loop {
        let clash: Vec<usize> = (0..n_pairs).filter(|&i| a.row(i) == b.row(i)).collect();
        if clash.is_empty() {
            break;
        }
        let fresh: Array2<T> = data.sample_target(clash.len(), rng);
        for (k, &i) in clash.iter().enumerate() {
            b.row_mut(i).assign(&fresh.row(k));
        }
    }
    let (va, vb) = (potential(&a), potential(&b));
    let samples = (0..n_pairs)
        .map(|i| {
            let dist = distance(a.row(i), b.row(i));
            (vb[i] - va[i]).to_f64_lossy().abs() / dist
        })
        .collect::<Vec<_>>();
    Ok(ArcDistribution {
        iteration,
        summary: Summary::of(&samples),
        samples,
    })
}

/// [`arc_distribution`] for a network's potential on the toy region.
pub fn network_arc<T: Scalar>(
    params: &NetworkParams<T>,
    target: &GaussianMixtureTarget,
    n_pairs: usize,
    iteration: u64,
    rng: &mut ChaCha8Rng,
) -> Result<ArcDistribution, DiagnosticsError> {
    arc_distribution(|y: &Array2<T>| potential_forward(params, y), Region::toy(), target, n_pairs, iteration, rng)
}

fn distance<T: Scalar>(a: ArrayView1<T>, b: ArrayView1<T>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).to_f64_lossy().powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Per-mode counts of samples landing within `radius_sigmas·σ` of their
/// nearest mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub per_mode_counts: Vec<usize>,
    pub covered_modes: usize,
    pub high_quality_fraction: f64,
}

pub const DEFAULT_RADIUS_SIGMAS: f64 = 3.0;

/// A mode counts as covered once it holds `max(1, n/80)` high-quality samples.
pub fn mode_report<T: Scalar>(samples: &Array2<T>, target: &GaussianMixtureTarget, radius_sigmas: f64) -> ModeReport {
    assert!(radius_sigmas > 0.0, "radius_sigmas must be positive");
    let n = samples.nrows();
    let radius = radius_sigmas * target.sigma;
    let mut counts = vec![0usize; target.num_modes()];
    for row in samples.rows() {
        let p = [row[0].to_f64_lossy(), row[1].to_f64_lossy()];
        let (k, d2) = target
            .means
            .iter()
            .map(|m| (p[0] - m[0]).powi(2) + (p[1] - m[1]).powi(2))
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("target has modes");
        if d2.sqrt() <= radius {
            counts[k] += 1;
        }
    }
    let threshold = (n / 80).max(1);
    let hq: usize = counts.iter().sum();
    ModeReport {
        covered_modes: counts.iter().filter(|&&c| c >= threshold).count(),
        high_quality_fraction: if n == 0 { 0.0 } else { hq as f64 / n as f64 },
        per_mode_counts: counts,
    }
}

/// `W₂` between two equal-size uniform clouds via exact assignment on
/// squared Euclidean cost.
pub fn empirical_w2<T: Scalar>(a: &Array2<T>, b: &Array2<T>) -> Result<f64, DiagnosticsError> {
    let n = a.nrows();
    if n != b.nrows() {
        return Err(DiagnosticsError::SizeMismatch(n, b.nrows()));
    }
    if n > W2_MAX_POINTS {
        return Err(DiagnosticsError::TooLarge {
            size: n,
            cap: W2_MAX_POINTS,
        });
    }
    if n == 0 || a.ncols() != b.ncols() {
        return Err(DiagnosticsError::Shape);
    }
    let cost = Array2::from_shape_fn((n, n), |(i, j)| distance(a.row(i), b.row(j)).powi(2));
    let (_, total) = solve_assignment(&cost);
    Ok((total / n as f64).max(0.0).sqrt())
}

/// Endpoints `(x, T(x, z))` of one transport segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub from: [f64; 2],
    pub to: [f64; 2],
}

impl Segment {
    pub fn length(&self) -> f64 {
        ((self.to[0] - self.from[0]).powi(2) + (self.to[1] - self.from[1]).powi(2)).sqrt()
    }
}

pub fn transport_pairs<T, G>(generator: G, x: &Array2<T>, z: &Array2<T>) -> Vec<Segment>
where
    T: Scalar,
    G: Fn(&Array2<T>, &Array2<T>) -> Array2<T>,
{
    let y = generator(x, z);
    assert_eq!(y.dim(), x.dim(), "generator must map points to points");
    x.rows()
        .into_iter()
        .zip(y.rows())
        .map(|(p, q)| Segment {
            from: [p[0].to_f64_lossy(), p[1].to_f64_lossy()],
            to: [q[0].to_f64_lossy(), q[1].to_f64_lossy()],
        })
        .collect()
}

pub fn network_transport_pairs<T: Scalar>(params: &NetworkParams<T>, x: &Array2<T>, z: &Array2<T>) -> Vec<Segment> {
    transport_pairs(|x: &Array2<T>, z: &Array2<T>| generator_forward(params, x, z), x, z)
}

/// Mean distance from each point to its nearest mode mean.
pub fn mean_nearest_mode_distance<T: Scalar>(points: &Array2<T>, target: &GaussianMixtureTarget) -> f64 {
    let total: f64 = points
        .rows()
        .into_iter()
        .map(|p| {
            target
                .means
                .iter()
                .map(|m| ((p[0].to_f64_lossy() - m[0]).powi(2) + (p[1].to_f64_lossy() - m[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / points.nrows().max(1) as f64
}

/// One logged step of the adaptive-weight series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightPoint {
    pub iter: u64,
    pub mean_w_hat: f64,
    pub mean_w: f64,
    /// `max/min` within the batch; 1 when all weights agree.
    pub ratio_w_hat: f64,
    pub ratio_w: f64,
    pub max_w_hat: f64,
    pub min_w_hat: f64,
    pub max_w: f64,
    pub min_w: f64,
}

pub fn weight_statistics(logs: &[StepLog]) -> Vec<WeightPoint> {
    logs.iter()
        .map(|l| WeightPoint {
            iter: l.iter,
            mean_w_hat: l.w_hat.mean,
            mean_w: l.w.mean,
            ratio_w_hat: l.w_hat.max / l.w_hat.min,
            ratio_w: l.w.max / l.w.min,
            max_w_hat: l.w_hat.max,
            min_w_hat: l.w_hat.min,
            max_w: l.w.max,
            min_w: l.w.min,
        })
        .collect()
}

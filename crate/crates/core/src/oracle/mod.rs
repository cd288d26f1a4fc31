//! Finite-support OT and α-scaled UOT solvers used as ground truth.

pub mod dual;
pub mod exact;
pub mod io;
pub mod theory;
pub mod uot;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conjugate::ConjugatePair;
use crate::scalar::Scalar;

pub use dual::{c_transform, semi_dual_value, CTransform};
pub use exact::{solve_assignment, solve_ot_exact, ExactSolution};
pub use io::{parse_instance, write_instance, Instance, ParseError};
pub use theory::{
    duality_report, marginal_bound_check, plan_convergence_curve, random_instance, BoundCheck,
    ConvergenceCurve, CurvePoint, DualityReport,
};
pub use uot::{solve_uot_alpha, solve_uot_alpha_from, SolveReport, UotOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("balanced OT needs equal total masses (got {mu} and {nu})")]
    UnequalMass { mu: f64, nu: f64 },
    #[error("supports live in different dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("{0:?} has no strictly convex primal; use the balanced solver")]
    NotStrictlyConvex(ConjugatePair),
    #[error("alpha must be positive and finite, got {0}")]
    BadAlpha(f64),
    #[error("start plan has shape {got:?}, expected {expected:?}")]
    StartShape { got: (usize, usize), expected: (usize, usize) },
    #[error("alphas must be strictly increasing")]
    AlphasNotIncreasing,
    #[error("size {size} exceeds the exact-solver cap of {cap}")]
    TooLarge { size: usize, cap: usize },
    #[error(transparent)]
    Math(#[from] crate::conjugate::MathError),
}

/// Atoms (one per row) with non-negative masses.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure<T> {
    pub atoms: Array2<T>,
    pub masses: Array1<T>,
}

impl<T: Scalar> DiscreteMeasure<T> {
    pub fn new(atoms: Array2<T>, masses: Array1<T>) -> Result<Self, OracleError> {
        if atoms.nrows() != masses.len() {
            return Err(OracleError::InvalidMeasure(format!(
                "{} atoms but {} masses",
                atoms.nrows(),
                masses.len()
            )));
        }
        if atoms.nrows() == 0 {
            return Err(OracleError::InvalidMeasure("empty support".into()));
        }
        if let Some(i) = masses.iter().position(|m| !(m.is_finite() && *m >= T::zero())) {
            return Err(OracleError::InvalidMeasure(format!(
                "mass of atom {i} is {}",
                masses[i]
            )));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(OracleError::InvalidMeasure("non-finite atom coordinate".into()));
        }
        for i in 0..atoms.nrows() {
            for j in 0..i {
                if atoms.row(i) == atoms.row(j) {
                    return Err(OracleError::InvalidMeasure(format!(
                        "atoms {j} and {i} coincide"
                    )));
                }
            }
        }
        Ok(Self { atoms, masses })
    }

    /// Equal masses summing to one.
    pub fn uniform(atoms: Array2<T>) -> Result<Self, OracleError> {
        let n = atoms.nrows();
        let m = T::one() / T::from_usize(n.max(1)).expect("usize fits");
        Self::new(atoms, Array1::from_elem(n, m))
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn total_mass(&self) -> T {
        self.masses.sum()
    }

    pub fn atom(&self, i: usize) -> ArrayView1<'_, T> {
        self.atoms.row(i)
    }
}

/// `cost[i, j] = τ‖xᵢ − yⱼ‖²`.
pub fn cost_matrix<T: Scalar>(mu: &DiscreteMeasure<T>, nu: &DiscreteMeasure<T>, tau: T) -> Result<Array2<T>, OracleError> {
    if mu.dim() != nu.dim() {
        return Err(OracleError::DimensionMismatch(mu.dim(), nu.dim()));
    }
    Ok(Array2::from_shape_fn((mu.len(), nu.len()), |(i, j)| {
        let d = mu.atom(i).iter().zip(nu.atom(j)).fold(T::zero(), |acc, (&a, &b)| {
            let t = a - b;
            acc + t * t
        });
        tau * d
    }))
}

/// A coupling matrix with its marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan<T> {
    pub matrix: Array2<T>,
}

impl<T: Scalar> TransportPlan<T> {
    pub fn new(matrix: Array2<T>) -> Self {
        Self { matrix }
    }

    pub fn row_marginal(&self) -> Array1<T> {
        self.matrix.sum_axis(Axis(1))
    }

    pub fn col_marginal(&self) -> Array1<T> {
        self.matrix.sum_axis(Axis(0))
    }

    pub fn cost(&self, cost: &Array2<T>) -> T {
        (&self.matrix * cost).sum()
    }

    /// `½ Σ |πᵢⱼ − π'ᵢⱼ|`.
    pub fn tv_distance(&self, other: &Self) -> T {
        let s = (&self.matrix - &other.matrix).mapv(|v| v.abs()).sum();
        s / T::from_f64_lossy(2.0)
    }
}

//! c-transforms and the (α-scaled) semi-dual objective.

use ndarray::{Array1, Array2};

use crate::conjugate::{alpha_scaled_conj, ConjugatePair};
use crate::scalar::Scalar;

use super::{cost_matrix, DiscreteMeasure, OracleError};

/// `v^c(xᵢ) = min_j (c(xᵢ, yⱼ) − v(yⱼ))` with the minimizing index.
#[derive(Debug, Clone, PartialEq)]
pub struct CTransform<T> {
    pub values: Array1<T>,
    pub argmin: Vec<usize>,
}

/// c-transform of `v` (values on the columns of `cost`) onto its rows.
pub fn c_transform_cost<T: Scalar>(v: &[T], cost: &Array2<T>) -> CTransform<T> {
    assert_eq!(v.len(), cost.ncols(), "one potential value per column atom");
    let mut values = Array1::zeros(cost.nrows());
    let mut argmin = vec![0; cost.nrows()];
    for (i, row) in cost.rows().into_iter().enumerate() {
        let mut best = T::infinity();
        for (j, (&c, &vj)) in row.iter().zip(v).enumerate() {
            let s = c - vj;
            if s < best {
                best = s;
                argmin[i] = j;
            }
        }
        values[i] = best;
    }
    CTransform { values, argmin }
}

/// c-transform of `v` on ν's atoms onto μ's atoms, for `c = τ‖x − y‖²`.
pub fn c_transform<T: Scalar>(
    v: &[T],
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    tau: T,
) -> Result<CTransform<T>, OracleError> {
    if v.len() != nu.len() {
        return Err(OracleError::InvalidMeasure(format!(
            "{} potential values for {} atoms",
            v.len(),
            nu.len()
        )));
    }
    Ok(c_transform_cost(v, &cost_matrix(mu, nu, tau)?))
}

/// `Σᵢ μᵢ·(−αΨ₁*(−v^c(xᵢ)/α)) + Σⱼ νⱼ·(−αΨ₂*(−v(yⱼ)/α))`.
pub fn semi_dual_value<T: Scalar>(
    v: &[T],
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    tau: T,
    pair1: ConjugatePair,
    pair2: ConjugatePair,
    alpha: T,
) -> Result<T, OracleError> {
    let vc = c_transform(v, mu, nu, tau)?;
    semi_dual_from_transform(v, &vc.values, &mu.masses, &nu.masses, pair1, pair2, alpha)
}

pub(crate) fn semi_dual_from_transform<T: Scalar>(
    v: &[T],
    vc: &Array1<T>,
    a: &Array1<T>,
    b: &Array1<T>,
    pair1: ConjugatePair,
    pair2: ConjugatePair,
    alpha: T,
) -> Result<T, OracleError> {
    let mut total = T::zero();
    for (&m, &u) in a.iter().zip(vc) {
        total = total - m * alpha_scaled_conj(pair1, alpha, -u).map_err(OracleError::Math)?;
    }
    for (&m, &vj) in b.iter().zip(v) {
        total = total - m * alpha_scaled_conj(pair2, alpha, -vj).map_err(OracleError::Math)?;
    }
    Ok(total)
}

//! Cost function, entropy conjugates and Csiszár divergences.
//!
//! Every conjugate `g = Ψ*` used by the trainer satisfies `g(0) = 0` and
//! `g'(0) = 1`. The α-scaled conjugate `(αΨ)*(x) = α·Ψ*(x/α)` converges
//! uniformly to the identity on compacts as α grows.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MathError {
    #[error("exponential overflow evaluating the conjugate at x = {x}")]
    Overflow { x: f64 },
    #[error("alpha must be positive and finite, got {alpha}")]
    NonPositiveAlpha { alpha: f64 },
}

/// Quadratic transport cost `c(x, y) = τ‖x − y‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostFunction<T> {
    pub tau: T,
}

impl<T: Scalar> CostFunction<T> {
    pub fn new(tau: T) -> Self {
        Self { tau }
    }

    pub fn cost(&self, x: &[T], y: &[T]) -> T {
        debug_assert_eq!(x.len(), y.len());
        let sq = x
            .iter()
            .zip(y)
            .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
        self.tau * sq
    }
}

/// Entropy function `Ψ` together with its convex conjugate `Ψ*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConjugatePair {
    /// `Ψ* = Id`; `Ψ` is the indicator of `{1}` (exact marginal matching).
    Identity,
    /// `Ψ*(x) = 2·log(1 + eˣ) − 2·log 2`.
    Softplus,
    /// `Ψ*(x) = eˣ − 1`; `Ψ(y) = y·log y − y + 1` (KL divergence).
    KLExp,
}

impl ConjugatePair {
    pub const ALL: [ConjugatePair; 3] = [Self::Identity, Self::Softplus, Self::KLExp];

    pub fn name(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Softplus => "softplus",
            Self::KLExp => "klexp",
        }
    }

    /// `Ψ*(x)`.
    pub fn conj_value<T: Scalar>(self, x: T) -> Result<T, MathError> {
        match self {
            Self::Identity => Ok(x),
            Self::Softplus => Ok(softplus_conj(x)),
            Self::KLExp => klexp_conj(x),
        }
    }

    /// `(Ψ*)'(x)`.
    pub fn conj_deriv<T: Scalar>(self, x: T) -> Result<T, MathError> {
        match self {
            Self::Identity => Ok(T::one()),
            Self::Softplus => Ok(softplus_conj_deriv(x)),
            Self::KLExp => checked_exp(x),
        }
    }

    /// `Ψ(y)`; `+∞` outside the effective domain.
    pub fn primal_value<T: Scalar>(self, y: T) -> T {
        primal_entropy(self, y)
    }

    /// `Ψ'(∞) = lim_{y→∞} Ψ(y)/y`, the price of mass singular to the reference.
    pub fn primal_slope_at_infinity<T: Scalar>(self) -> T {
        // Identity: indicator of {1}. Softplus: Ψ = +∞ for y ≥ 2. KL: y·log y grows superlinearly.
        T::infinity()
    }

    /// Whether `Ψ` is strictly convex on its domain.
    pub fn strictly_convex_primal(self) -> bool {
        !matches!(self, Self::Identity)
    }
}

/// Numerically stable `log(1 + eˣ)`.
#[inline]
pub fn log1p_exp<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Scaled and translated softplus, `SP(x) = 2·log(1 + eˣ) − 2·log 2`.
pub fn softplus_conj<T: Scalar>(x: T) -> T {
    let two = lit::<T>(2.0);
    two * log1p_exp(x) - two * T::LN_2()
}

/// `SP'(x) = 2σ(x)`, bounded in `(0, 2)`.
pub fn softplus_conj_deriv<T: Scalar>(x: T) -> T {
    lit::<T>(2.0) * sigmoid(x)
}

fn checked_exp<T: Scalar>(x: T) -> Result<T, MathError> {
    let e = x.exp();
    if e.is_finite() {
        Ok(e)
    } else {
        Err(MathError::Overflow { x: x.to_f64_lossy() })
    }
}

/// KL conjugate `eˣ − 1`; overflow is reported, never returned as `+∞`.
pub fn klexp_conj<T: Scalar>(x: T) -> Result<T, MathError> {
    let v = x.exp_m1();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(MathError::Overflow { x: x.to_f64_lossy() })
    }
}

fn check_alpha<T: Scalar>(alpha: T) -> Result<(), MathError> {
    if alpha > T::zero() && alpha.is_finite() {
        Ok(())
    } else {
        Err(MathError::NonPositiveAlpha {
            alpha: alpha.to_f64_lossy(),
        })
    }
}

/// `(αΨ)*(x) = α·Ψ*(x/α)`.
pub fn alpha_scaled_conj<T: Scalar>(pair: ConjugatePair, alpha: T, x: T) -> Result<T, MathError> {
    check_alpha(alpha)?;
    match pair {
        ConjugatePair::Identity => Ok(x),
        _ => Ok(alpha * pair.conj_value(x / alpha)?),
    }
}

/// `((αΨ)*)'(x) = (Ψ*)'(x/α)`.
pub fn alpha_scaled_conj_deriv<T: Scalar>(
    pair: ConjugatePair,
    alpha: T,
    x: T,
) -> Result<T, MathError> {
    check_alpha(alpha)?;
    pair.conj_deriv(x / alpha)
}

/// The entropy function `Ψ(y)` of a pair, as an extended real.
pub fn primal_entropy<T: Scalar>(pair: ConjugatePair, y: T) -> T {
    let inf = T::infinity();
    if y.is_nan() || y < T::zero() {
        return inf;
    }
    match pair {
        ConjugatePair::Identity => {
            if y == T::one() {
                T::zero()
            } else {
                inf
            }
        }
        ConjugatePair::Softplus => {
            let two = lit::<T>(2.0);
            if y == T::zero() {
                two * T::LN_2()
            } else if y >= two {
                inf
            } else {
                y * (y / (two - y)).ln() + two * (two - y).ln()
            }
        }
        ConjugatePair::KLExp => {
            if y == T::zero() {
                T::one()
            } else if y.is_infinite() {
                inf
            } else {
                y * y.ln() - y + T::one()
            }
        }
    }
}

/// `Ψ'(r)` on the interior of the domain; used by the UOT solver.
pub(crate) fn primal_deriv<T: Scalar>(pair: ConjugatePair, y: T) -> T {
    match pair {
        ConjugatePair::Identity => T::nan(),
        ConjugatePair::Softplus => {
            let two = lit::<T>(2.0);
            (y / (two - y)).ln()
        }
        ConjugatePair::KLExp => y.ln(),
    }
}

/// `Ψ''(r)` on the interior of the domain.
pub(crate) fn primal_second_deriv<T: Scalar>(pair: ConjugatePair, y: T) -> T {
    match pair {
        ConjugatePair::Identity => T::nan(),
        ConjugatePair::Softplus => {
            let two = lit::<T>(2.0);
            two / (y * (two - y))
        }
        ConjugatePair::KLExp => T::one() / y,
    }
}

/// Csiszár divergence `D_Ψ(p|q) = Σ qᵢ Ψ(pᵢ/qᵢ) + Ψ'(∞)·Σ_{qᵢ=0} pᵢ`.
///
/// `p` and `q` are masses on a shared atom index set. `+∞` is a valid result.
pub fn csiszar_divergence<T: Scalar>(pair: ConjugatePair, p: &[T], q: &[T]) -> T {
    assert_eq!(p.len(), q.len(), "measures must share an atom index set");
    let mut total = T::zero();
    let mut singular = T::zero();
    for (&pi, &qi) in p.iter().zip(q) {
        if qi > T::zero() {
            total = total + qi * primal_entropy(pair, pi / qi);
        } else {
            singular = singular + pi;
        }
    }
    if singular > T::zero() {
        total = total + pair.primal_slope_at_infinity::<T>() * singular;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // Numeric Legendre transform sup_x {x·y − Ψ*(x)} on a dense grid.
    fn numeric_primal(pair: ConjugatePair, y: f64) -> f64 {
        let mut best = f64::NEG_INFINITY;
        let n = 400_000;
        for k in 0..=n {
            let x = -20.0 + 40.0 * k as f64 / n as f64;
            let v = x * y - pair.conj_value(x).unwrap();
            best = best.max(v);
        }
        best
    }

    #[test]
    fn softplus_values() {
        assert_eq!(softplus_conj(0.0f64), 0.0);
        // 2·(30 + log(1+e^-30)) − 2·log 2, evaluated with mpmath at 30 digits.
        assert_abs_diff_eq!(softplus_conj(30.0f64), 58.613_705_638_880_3, epsilon = 1e-12);
        assert!(softplus_conj(1e6f64).is_finite());
        assert!((softplus_conj_deriv(0.0f64) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn klexp_values_and_overflow() {
        assert_eq!(klexp_conj(0.0f64).unwrap(), 0.0);
        assert_abs_diff_eq!(klexp_conj(1.0f64).unwrap(), std::f64::consts::E - 1.0, epsilon = 1e-15);
        assert!(matches!(klexp_conj(800.0f64), Err(MathError::Overflow { .. })));
        assert!(matches!(klexp_conj(100.0f32), Err(MathError::Overflow { .. })));
    }

    #[test]
    fn alpha_scaling() {
        assert_eq!(alpha_scaled_conj(ConjugatePair::Identity, 7.0, 3.2f64).unwrap(), 3.2);
        // 4·(log(1+e^0.5) − log 2), mpmath.
        assert_abs_diff_eq!(
            alpha_scaled_conj(ConjugatePair::Softplus, 2.0, 1.0f64).unwrap(),
            1.1237192144806455,
            epsilon = 1e-12
        );
        assert!(alpha_scaled_conj(ConjugatePair::Softplus, 0.0, 1.0f64).is_err());
        assert!(alpha_scaled_conj(ConjugatePair::KLExp, -1.0, 1.0f64).is_err());
    }

    #[test]
    fn primal_closed_forms_match_numeric_legendre() {
        for &y in &[0.1, 0.5, 1.0, 1.5, 1.9] {
            let numeric = numeric_primal(ConjugatePair::Softplus, y);
            assert_abs_diff_eq!(primal_entropy(ConjugatePair::Softplus, y), numeric, epsilon = 1e-8);
        }
        for &y in &[0.1, 0.5, 1.0, 2.0, 3.0] {
            let numeric = numeric_primal(ConjugatePair::KLExp, y);
            assert_abs_diff_eq!(primal_entropy(ConjugatePair::KLExp, y), numeric, epsilon = 1e-8);
        }
    }

    #[test]
    fn primal_edge_cases() {
        assert_eq!(primal_entropy(ConjugatePair::KLExp, 1.0f64), 0.0);
        assert_eq!(primal_entropy(ConjugatePair::KLExp, 0.0f64), 1.0);
        assert_eq!(primal_entropy(ConjugatePair::Softplus, 1.0f64), 0.0);
        assert_abs_diff_eq!(
            primal_entropy(ConjugatePair::Softplus, 0.0f64),
            2.0 * std::f64::consts::LN_2
        );
        assert!(primal_entropy(ConjugatePair::Softplus, 2.0f64).is_infinite());
        assert!(primal_entropy(ConjugatePair::Identity, 2.0f64).is_infinite());
        assert_eq!(primal_entropy(ConjugatePair::Identity, 1.0f64), 0.0);
        for pair in ConjugatePair::ALL {
            assert!(primal_entropy(pair, -0.1f64).is_infinite());
        }
    }

    #[test]
    fn csiszar_examples() {
        let p = [0.5, 0.5];
        let q = [0.25, 0.75];
        // Σ qᵢ Ψ(pᵢ/qᵢ) with Ψ = y log y − y + 1, mpmath at 30 digits.
        assert_abs_diff_eq!(
            csiszar_divergence(ConjugatePair::KLExp, &p, &q),
            0.14384103622589046,
            epsilon = 1e-14
        );
        for pair in ConjugatePair::ALL {
            assert_eq!(csiszar_divergence(pair, &q, &q), 0.0);
        }
        assert!(csiszar_divergence(ConjugatePair::KLExp, &[0.5f64, 0.5], &[1.0, 0.0]).is_infinite());
        // zero mass on the singular atom contributes nothing
        assert!(csiszar_divergence(ConjugatePair::KLExp, &[1.0, 0.0], &[1.0, 0.0]) == 0.0);
    }

    #[test]
    fn cost_properties() {
        let c = CostFunction::new(0.5f64);
        assert_eq!(c.cost(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(c.cost(&[0.0, 0.0], &[3.0, 4.0]), 12.5);
        assert_eq!(c.cost(&[3.0, 4.0], &[0.0, 0.0]), 12.5);
    }
}

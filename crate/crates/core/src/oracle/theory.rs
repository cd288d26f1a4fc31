//! Numerical certificates: marginal-discrepancy bound, plan convergence as
//! α grows, and duality gaps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conjugate::{csiszar_divergence, ConjugatePair};
use crate::scalar::{lit, Scalar};

use super::dual::semi_dual_value;
use super::exact::solve_ot_exact;
use super::uot::{solve_uot_alpha_from, SolveReport, UotOptions};
use super::{DiscreteMeasure, OracleError, TransportPlan};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `D_Ψ₁(π₀|μ) + D_Ψ₂(π₁|ν) ≤ (τ/α)·W₂²(μ, ν) + tol`, with `W₂²` the balanced
/// OT objective at unit cost intensity.
#[allow(clippy::too_many_arguments)]
pub fn marginal_bound_check<T: Scalar>(
    plan: &TransportPlan<T>,
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    tau: T,
    pair1: ConjugatePair,
    pair2: ConjugatePair,
    alpha: T,
    tol: T,
) -> Result<BoundCheck, OracleError> {
    let w2sq = solve_ot_exact(mu, nu, T::one())?.objective;
    let lhs = marginal_divergence(plan, mu, nu, pair1, pair2);
    let rhs = tau / alpha * w2sq;
    Ok(BoundCheck {
        lhs: lhs.to_f64_lossy(),
        rhs: rhs.to_f64_lossy(),
        holds: lhs <= rhs + tol,
    })
}

fn marginal_divergence<T: Scalar>(
    plan: &TransportPlan<T>,
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    pair1: ConjugatePair,
    pair2: ConjugatePair,
) -> T {
    let p = plan.row_marginal();
    let q = plan.col_marginal();
    csiszar_divergence(pair1, p.as_slice().expect("contiguous"), mu.masses.as_slice().expect("contiguous"))
        + csiszar_divergence(pair2, q.as_slice().expect("contiguous"), nu.masses.as_slice().expect("contiguous"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub alpha: f64,
    pub tv_distance: f64,
    pub report: SolveReport,
    pub bound: BoundCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCurve {
    pub ot_objective: f64,
    /// Instances whose OT plan is not certified unique carry no points.
    pub unique_ot_plan: bool,
    pub points: Vec<CurvePoint>,
}

impl ConvergenceCurve {
    pub fn is_non_increasing(&self, slack: f64) -> bool {
        self.points
            .windows(2)
            .all(|w| w[1].tv_distance <= w[0].tv_distance + slack)
    }

    pub fn all_converged(&self) -> bool {
        self.points.iter().all(|p| p.report.converged)
    }
}

/// Total-variation distance between `π^α` and the OT plan for each α.
#[allow(clippy::too_many_arguments)]
pub fn plan_convergence_curve<T: Scalar>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    tau: T,
    pair1: ConjugatePair,
    pair2: ConjugatePair,
    alphas: &[f64],
    opts: &UotOptions,
    bound_tol: f64,
) -> Result<ConvergenceCurve, OracleError> {
    if alphas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(OracleError::AlphasNotIncreasing);
    }
    let ot = solve_ot_exact(mu, nu, tau)?;
    let mut curve = ConvergenceCurve {
        ot_objective: ot.objective.to_f64_lossy(),
        unique_ot_plan: ot.unique,
        points: Vec::new(),
    };
    if !ot.unique {
        return Ok(curve);
    }
    let mut previous: Option<TransportPlan<T>> = None;
    for &alpha in alphas {
        let a = lit::<T>(alpha);
        let mut starts = vec![&ot.plan.matrix];
        if let Some(p) = &previous {
            starts.insert(0, &p.matrix);
        }
        let (plan, report) = solve_uot_alpha_from(mu, nu, tau, pair1, pair2, a, opts, &starts)?;
        let bound = marginal_bound_check(&plan, mu, nu, tau, pair1, pair2, a, lit(bound_tol))?;
        curve.points.push(CurvePoint {
            alpha,
            tv_distance: plan.tv_distance(&ot.plan).to_f64_lossy(),
            report,
            bound,
        });
        if report.converged {
            previous = Some(plan);
        }
    }
    Ok(curve)
}

/// Strong duality at the LP potentials and weak duality for random ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub primal: f64,
    pub semi_dual_at_lp: f64,
    pub gap: f64,
    pub random_potentials: usize,
    pub weak_duality_violations: usize,
    pub max_random_value: f64,
}

pub fn duality_report<T: Scalar>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    tau: T,
    random_potentials: usize,
    seed: u64,
) -> Result<DualityReport, OracleError> {
    let id = ConjugatePair::Identity;
    let ot = solve_ot_exact(mu, nu, tau)?;
    let at_lp = semi_dual_value(ot.g.as_slice().expect("contiguous"), mu, nu, tau, id, id, T::one())?;
    let spread = ot.g.iter().fold(T::one(), |acc, &v| acc.max(v.abs())).to_f64_lossy() * 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut max_val = f64::NEG_INFINITY;
    for _ in 0..random_potentials {
        let v: Vec<T> = (0..nu.len()).map(|_| lit(rng.random_range(-spread..spread))).collect();
        let val = semi_dual_value(&v, mu, nu, tau, id, id, T::one())?.to_f64_lossy();
        max_val = max_val.max(val);
        if val > ot.objective.to_f64_lossy() + 1e-12 {
            violations += 1;
        }
    }
    Ok(DualityReport {
        primal: ot.objective.to_f64_lossy(),
        semi_dual_at_lp: at_lp.to_f64_lossy(),
        gap: (ot.objective - at_lp).abs().to_f64_lossy(),
        random_potentials,
        weak_duality_violations: violations,
        max_random_value: max_val,
    })
}

/// A random instance with atoms in the unit cube and masses drawn from
/// `[0.2, 1]` then normalized; generic with probability one.
pub fn random_instance(n: usize, m: usize, dim: usize, seed: u64) -> Result<(DiscreteMeasure<f64>, DiscreteMeasure<f64>), OracleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut measure = |k: usize| {
        let atoms = ndarray::Array2::from_shape_fn((k, dim), |_| rng.random::<f64>());
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let s: f64 = w.iter().sum();
        DiscreteMeasure::new(atoms, ndarray::Array1::from_iter(w.iter().map(|x| x / s)))
    };
    let mu = measure(n)?;
    let nu = measure(m)?;
    Ok((mu, nu))
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALPHAS: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];

    #[test]
    fn identical_measures_give_zero_curve() {
        let (mu, _) = random_instance(5, 5, 2, 9).unwrap();
        let kl = ConjugatePair::KLExp;
        let curve = plan_convergence_curve(&mu, &mu, 1.0, kl, kl, &ALPHAS, &UotOptions::default(), 1e-6).unwrap();
        assert!(curve.unique_ot_plan);
        for p in &curve.points {
            assert!(p.tv_distance < 1e-8, "{p:?}");
            assert!(p.bound.holds && p.bound.rhs == 0.0);
        }
    }

    #[test]
    fn bound_tightens_with_alpha() {
        let kl = ConjugatePair::KLExp;
        for seed in 0..5 {
            let (mu, nu) = random_instance(5, 5, 2, seed).unwrap();
            let curve = plan_convergence_curve(&mu, &nu, 1.0, kl, kl, &[1.0, 10.0, 100.0], &UotOptions::default(), 1e-6).unwrap();
            if !curve.unique_ot_plan {
                continue;
            }
            assert!(curve.points.iter().all(|p| p.bound.holds));
            assert!(curve.points[2].bound.lhs <= curve.points[0].bound.lhs);
        }
    }

    #[test]
    fn rejects_unsorted_alphas() {
        let (mu, nu) = random_instance(2, 2, 2, 0).unwrap();
        let kl = ConjugatePair::KLExp;
        let r = plan_convergence_curve(&mu, &nu, 1.0, kl, kl, &[10.0, 1.0], &UotOptions::default(), 1e-6);
        assert!(matches!(r, Err(OracleError::AlphasNotIncreasing)));
    }

    #[test]
    fn duality_report_has_no_gap() {
        let (mu, nu) = random_instance(4, 5, 2, 3).unwrap();
        let r = duality_report(&mu, &nu, 1.0, 100, 0).unwrap();
        assert!(r.gap <= 1e-10);
        assert_eq!(r.weak_duality_violations, 0);
    }
}

//! α-scaled unbalanced OT by spectral projected gradient, finished with a
//! Newton polish on the identified support and certified by the KKT residual.

use std::collections::VecDeque;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::conjugate::{primal_deriv, primal_entropy, primal_second_deriv, ConjugatePair};
use crate::scalar::{lit, Scalar};

use super::{cost_matrix, DiscreteMeasure, OracleError, TransportPlan};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UotOptions {
    /// Target for `max |min(πᵢⱼ, ∂F/∂πᵢⱼ)|`.
    pub tol: f64,
    pub max_iters: usize,
    /// Density ratios of the softplus primal are kept below `2 − margin`.
    pub domain_margin: f64,
}

impl Default for UotOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 200_000,
            domain_margin: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct Problem<'a, T> {
    cost: &'a Array2<T>,
    a: &'a Array1<T>,
    b: &'a Array1<T>,
    pair1: ConjugatePair,
    pair2: ConjugatePair,
    alpha: T,
    margin: T,
}

impl<T: Scalar> Problem<'_, T> {
    fn marginals(&self, x: &Array2<T>) -> (Array1<T>, Array1<T>) {
        (x.sum_axis(ndarray::Axis(1)), x.sum_axis(ndarray::Axis(0)))
    }

    fn ratio_ok(&self, pair: ConjugatePair, r: T) -> bool {
        // Zero marginals have an infinite-slope barrier; keep iterates off them.
        r > T::zero() && (pair != ConjugatePair::Softplus || r < lit::<T>(2.0) - self.margin)
    }

    /// Objective, `+∞` outside the (margin-shrunk) domain.
    fn value(&self, x: &Array2<T>) -> T {
        let (p, q) = self.marginals(x);
        let mut f = (x * self.cost).sum();
        for (&pi, &ai) in p.iter().zip(self.a) {
            let r = pi / ai;
            if !self.ratio_ok(self.pair1, r) {
                return T::infinity();
            }
            f = f + self.alpha * ai * primal_entropy(self.pair1, r);
        }
        for (&qj, &bj) in q.iter().zip(self.b) {
            let r = qj / bj;
            if !self.ratio_ok(self.pair2, r) {
                return T::infinity();
            }
            f = f + self.alpha * bj * primal_entropy(self.pair2, r);
        }
        f
    }

    fn gradient(&self, x: &Array2<T>) -> Array2<T> {
        let (p, q) = self.marginals(x);
        let dp: Vec<T> = p
            .iter()
            .zip(self.a)
            .map(|(&pi, &ai)| self.alpha * primal_deriv(self.pair1, pi / ai))
            .collect();
        let dq: Vec<T> = q
            .iter()
            .zip(self.b)
            .map(|(&qj, &bj)| self.alpha * primal_deriv(self.pair2, qj / bj))
            .collect();
        Array2::from_shape_fn(x.dim(), |(i, j)| self.cost[[i, j]] + dp[i] + dq[j])
    }
}

fn kkt_residual<T: Scalar>(x: &Array2<T>, g: &Array2<T>) -> T {
    x.iter()
        .zip(g)
        .fold(T::zero(), |acc, (&xi, &gi)| acc.max(xi.min(gi).abs()))
}

fn dot<T: Scalar>(a: &Array2<T>, b: &Array2<T>) -> T {
    (a * b).sum()
}

/// Solves `H d = r` by Gaussian elimination with partial pivoting.
fn solve_dense<T: Scalar>(mut h: Array2<T>, mut r: Vec<T>) -> Option<Vec<T>> {
    let k = r.len();
    let scale = h.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()));
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| h[[i, col]].abs().partial_cmp(&h[[j, col]].abs()).expect("finite"))?;
        if !(h[[piv, col]].abs() > lit::<T>(1e-13) * scale) {
            return None;
        }
        if piv != col {
            for c in 0..k {
                let t = h[[col, c]];
                h[[col, c]] = h[[piv, c]];
                h[[piv, c]] = t;
            }
            r.swap(piv, col);
        }
        for row in col + 1..k {
            let f = h[[row, col]] / h[[col, col]];
            if f != T::zero() {
                for c in col..k {
                    h[[row, c]] = h[[row, c]] - f * h[[col, c]];
                }
                r[row] = r[row] - f * r[col];
            }
        }
    }
    let mut d = vec![T::zero(); k];
    for row in (0..k).rev() {
        let mut s = r[row];
        for c in row + 1..k {
            s = s - h[[row, c]] * d[c];
        }
        d[row] = s / h[[row, row]];
    }
    Some(d)
}

/// Newton iterations restricted to `{x > g}`; `None` if the support guess is
/// inconsistent (singular Hessian or an entry driven negative).
fn newton_polish<T: Scalar>(prob: &Problem<'_, T>, x0: &Array2<T>, tol: T) -> Option<(Array2<T>, T)> {
    let g0 = prob.gradient(x0);
    let support: Vec<(usize, usize)> = x0
        .indexed_iter()
        .filter(|&((i, j), &v)| v > T::zero() && v > g0[[i, j]])
        .map(|(ij, _)| ij)
        .collect();
    if support.is_empty() {
        return None;
    }
    let mut x = Array2::zeros(x0.dim());
    for &(i, j) in &support {
        x[[i, j]] = x0[[i, j]];
    }
    let k = support.len();
    for _ in 0..60 {
        let g = prob.gradient(&x);
        let res = kkt_residual(&x, &g);
        if res <= tol {
            return Some((x, res));
        }
        let (p, q) = prob.marginals(&x);
        let hp: Vec<T> = p
            .iter()
            .zip(prob.a)
            .map(|(&pi, &ai)| prob.alpha * primal_second_deriv(prob.pair1, pi / ai) / ai)
            .collect();
        let hq: Vec<T> = q
            .iter()
            .zip(prob.b)
            .map(|(&qj, &bj)| prob.alpha * primal_second_deriv(prob.pair2, qj / bj) / bj)
            .collect();
        let h = Array2::from_shape_fn((k, k), |(e, f)| {
            let ((i, j), (i2, j2)) = (support[e], support[f]);
            let mut v = T::zero();
            if i == i2 {
                v = v + hp[i];
            }
            if j == j2 {
                v = v + hq[j];
            }
            v
        });
        let rhs: Vec<T> = support.iter().map(|&(i, j)| -g[[i, j]]).collect();
        let d = solve_dense(h, rhs)?;
        let f0 = prob.value(&x);
        let slope = support
            .iter()
            .zip(&d)
            .fold(T::zero(), |acc, (&(i, j), &di)| acc + g[[i, j]] * di);
        let mut t = T::one();
        let mut accepted = None;
        for _ in 0..40 {
            let mut xt = x.clone();
            for (&(i, j), &di) in support.iter().zip(&d) {
                xt[[i, j]] = xt[[i, j]] + t * di;
            }
            if xt.iter().all(|&v| v >= T::zero()) {
                let ft = prob.value(&xt);
                let better_res = kkt_residual(&xt, &prob.gradient(&xt)) < res;
                if ft.is_finite() && (ft <= f0 + lit::<T>(1e-4) * t * slope || better_res) {
                    accepted = Some(xt);
                    break;
                }
            }
            t = t / lit::<T>(2.0);
        }
        x = accepted?;
    }
    let res = kkt_residual(&x, &prob.gradient(&x));
    (res <= tol).then_some((x, res))
}

/// Minimizes `Σ cπ + α·D_Ψ₁(π₀|μ) + α·D_Ψ₂(π₁|ν)` over `π ≥ 0`.
pub fn solve_uot_alpha<T: Scalar>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    tau: T,
    pair1: ConjugatePair,
    pair2: ConjugatePair,
    alpha: T,
    opts: &UotOptions,
) -> Result<(TransportPlan<T>, SolveReport), OracleError> {
    solve_uot_alpha_from(mu, nu, tau, pair1, pair2, alpha, opts, &[])
}

/// Like [`solve_uot_alpha`], but if the solve from the product plan does not
/// converge, retries from each of `starts` (full-size plans) in turn. Large α
/// is badly conditioned; a nearby plan, e.g. the OT plan, is a good start.
#[allow(clippy::too_many_arguments)]
pub fn solve_uot_alpha_from<T: Scalar>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    tau: T,
    pair1: ConjugatePair,
    pair2: ConjugatePair,
    alpha: T,
    opts: &UotOptions,
    starts: &[&Array2<T>],
) -> Result<(TransportPlan<T>, SolveReport), OracleError> {
    for p in [pair1, pair2] {
        if !p.strictly_convex_primal() {
            return Err(OracleError::NotStrictlyConvex(p));
        }
    }
    if !(alpha > T::zero() && alpha.is_finite()) {
        return Err(OracleError::BadAlpha(alpha.to_f64_lossy()));
    }
    let full_cost = cost_matrix(mu, nu, tau)?;
    // Zero-mass atoms carry no mass at the optimum (Ψ'(∞) = ∞); drop them.
    let rows: Vec<usize> = (0..mu.len()).filter(|&i| mu.masses[i] > T::zero()).collect();
    let cols: Vec<usize> = (0..nu.len()).filter(|&j| nu.masses[j] > T::zero()).collect();
    let mut full = Array2::zeros((mu.len(), nu.len()));
    if rows.is_empty() || cols.is_empty() {
        let report = SolveReport {
            objective: 0.0,
            kkt_residual: 0.0,
            iterations: 0,
            converged: true,
        };
        return Ok((TransportPlan::new(full), report));
    }
    let cost = Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| full_cost[[rows[i], cols[j]]]);
    let a = Array1::from_iter(rows.iter().map(|&i| mu.masses[i]));
    let b = Array1::from_iter(cols.iter().map(|&j| nu.masses[j]));
    let prob = Problem {
        cost: &cost,
        a: &a,
        b: &b,
        pair1,
        pair2,
        alpha,
        margin: lit::<T>(opts.domain_margin),
    };
    let tol = lit::<T>(opts.tol);
    let total = a.sum().max(b.sum());
    let product = Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| a[i] * b[j] / total);
    let (mut x, mut res, mut iterations) = spg(&prob, product.clone(), tol, opts.max_iters);
    for start in starts {
        if res <= tol {
            break;
        }
        if start.dim() != (mu.len(), nu.len()) {
            return Err(OracleError::StartShape {
                got: start.dim(),
                expected: (mu.len(), nu.len()),
            });
        }
        let mut x0 = Array2::from_shape_fn(product.dim(), |(i, j)| start[[rows[i], cols[j]]].max(T::zero()));
        if !prob.value(&x0).is_finite() {
            // Pull an infeasible start slightly towards the product plan.
            let w = lit::<T>(1e-3);
            x0 = x0.mapv(|v| v * (T::one() - w)) + product.mapv(|v| v * w);
            if !prob.value(&x0).is_finite() {
                continue;
            }
        }
        let (xs, rs, its) = spg(&prob, x0, tol, opts.max_iters);
        iterations += its;
        if rs < res {
            (x, res) = (xs, rs);
        }
    }
    for (ri, &i) in rows.iter().enumerate() {
        for (cj, &j) in cols.iter().enumerate() {
            full[[i, j]] = x[[ri, cj]];
        }
    }
    let report = SolveReport {
        objective: prob.value(&x).to_f64_lossy(),
        kkt_residual: res.to_f64_lossy(),
        iterations,
        converged: res <= tol,
    };
    Ok((TransportPlan::new(full), report))
}

fn spg<T: Scalar>(prob: &Problem<'_, T>, mut x: Array2<T>, tol: T, max_iters: usize) -> (Array2<T>, T, usize) {
    let mut f = prob.value(&x);
    let mut g = prob.gradient(&x);
    let (lam_min, lam_max) = (lit::<T>(1e-30), lit::<T>(1e30));
    let pg0 = (&x - &g).mapv(|v| v.max(T::zero())) - &x;
    let pg_norm = pg0.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()));
    let mut lam = if pg_norm > T::zero() { T::one() / pg_norm } else { T::one() };
    let mut history: VecDeque<T> = VecDeque::from([f]);
    let mut best = (x.clone(), kkt_residual(&x, &g));

    for iter in 0..max_iters {
        let res = kkt_residual(&x, &g);
        if res < best.1 {
            best = (x.clone(), res);
        }
        if res <= tol {
            return (x, res, iter);
        }
        if iter % 25 == 24 {
            if let Some((xp, rp)) = newton_polish(prob, &x, tol) {
                return (xp, rp, iter);
            }
        }
        let d = (&x - &g.mapv(|v| v * lam)).mapv(|v| v.max(T::zero())) - &x;
        let gd = dot(&g, &d);
        if !(gd < T::zero()) {
            break;
        }
        let f_ref = history.iter().copied().fold(T::neg_infinity(), T::max);
        let mut t = T::one();
        let mut next = None;
        for _ in 0..80 {
            let xt = &x + &d.mapv(|v| v * t);
            let ft = prob.value(&xt);
            if ft <= f_ref + lit::<T>(1e-4) * t * gd {
                next = Some((xt, ft));
                break;
            }
            t = t / lit::<T>(2.0);
        }
        let Some((xt, ft)) = next else { break };
        let gt = prob.gradient(&xt);
        let s = &xt - &x;
        let y = &gt - &g;
        let sy = dot(&s, &y);
        lam = if sy > T::zero() {
            (dot(&s, &s) / sy).max(lam_min).min(lam_max)
        } else {
            lam_max
        };
        x = xt;
        f = ft;
        g = gt;
        history.push_back(f);
        if history.len() > 10 {
            history.pop_front();
        }
    }
    if let Some((xp, rp)) = newton_polish(prob, &best.0, tol) {
        return (xp, rp, max_iters);
    }
    let (x, res) = best;
    (x, res, max_iters)
}

//! Exact balanced OT: successive shortest paths on the transportation
//! network, plus a Hungarian solver for square assignment problems.

use ndarray::{Array1, Array2};

use crate::scalar::{lit, Scalar};

use super::{cost_matrix, DiscreteMeasure, OracleError, TransportPlan};

/// Optimal plan with dual potentials `f` (on μ) and `g` (on ν) satisfying
/// `f_i + g_j ≤ c_ij`, with equality on the support of the plan.
#[derive(Debug, Clone)]
pub struct ExactSolution<T> {
    pub plan: TransportPlan<T>,
    pub objective: T,
    pub f: Array1<T>,
    pub g: Array1<T>,
    /// Certified unique: strictly positive reduced costs off an acyclic support.
    pub unique: bool,
    pub min_offsupport_reduced_cost: T,
}

pub fn solve_ot_exact<T: Scalar>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    tau: T,
) -> Result<ExactSolution<T>, OracleError> {
    let cost = cost_matrix(mu, nu, tau)?;
    solve_ot_cost(&mu.masses, &nu.masses, &cost)
}

/// Balanced OT for an arbitrary non-negative cost matrix.
pub fn solve_ot_cost<T: Scalar>(
    a: &Array1<T>,
    b: &Array1<T>,
    cost: &Array2<T>,
) -> Result<ExactSolution<T>, OracleError> {
    let (n, m) = cost.dim();
    assert_eq!((n, m), (a.len(), b.len()), "cost shape must match the marginals");
    let (sa, sb) = (a.sum(), b.sum());
    let scale = sa.max(sb).max(T::one());
    if (sa - sb).abs() > lit::<T>(1e3) * T::epsilon() * scale {
        return Err(OracleError::UnequalMass {
            mu: sa.to_f64_lossy(),
            nu: sb.to_f64_lossy(),
        });
    }
    let tol = lit::<T>(16.0) * T::epsilon() * scale;

    let src = |i: usize| 1 + i;
    let snk = |j: usize| 1 + n + j;
    let (s_node, t_node, nodes) = (0, n + m + 1, n + m + 2);
    let mut supply: Vec<T> = a.to_vec();
    let mut demand: Vec<T> = b.to_vec();
    let mut flow = Array2::<T>::zeros((n, m));
    let mut pot = vec![T::zero(); nodes];
    let inf = T::infinity();

    // Residual edges out of `u` as (target, cost).
    let edges = |u: usize, supply: &[T], demand: &[T], flow: &Array2<T>, out: &mut Vec<(usize, T)>| {
        out.clear();
        if u == s_node {
            out.extend((0..n).filter(|&i| supply[i] > tol).map(|i| (src(i), T::zero())));
        } else if u <= n {
            let i = u - 1;
            out.extend((0..m).map(|j| (snk(j), cost[[i, j]])));
            if a[i] - supply[i] > tol {
                out.push((s_node, T::zero()));
            }
        } else if u < t_node {
            let j = u - 1 - n;
            out.extend((0..n).filter(|&i| flow[[i, j]] > tol).map(|i| (src(i), -cost[[i, j]])));
            if demand[j] > tol {
                out.push((t_node, T::zero()));
            }
        } else {
            out.extend((0..m).filter(|&j| b[j] - demand[j] > tol).map(|j| (snk(j), T::zero())));
        }
    };

    let mut out = Vec::with_capacity(n.max(m) + 1);
    loop {
        if supply.iter().all(|&s| s <= tol) || demand.iter().all(|&d| d <= tol) {
            break;
        }
        let mut dist = vec![inf; nodes];
        let mut prev = vec![usize::MAX; nodes];
        let mut done = vec![false; nodes];
        dist[s_node] = T::zero();
        for _ in 0..nodes {
            let Some(u) = (0..nodes)
                .filter(|&v| !done[v] && dist[v] < inf)
                .min_by(|&x, &y| dist[x].partial_cmp(&dist[y]).expect("finite"))
            else {
                break;
            };
            done[u] = true;
            edges(u, &supply, &demand, &flow, &mut out);
            for &(v, w) in &out {
                let rc = (w + pot[u] - pot[v]).max(T::zero());
                if !done[v] && dist[u] + rc < dist[v] {
                    dist[v] = dist[u] + rc;
                    prev[v] = u;
                }
            }
        }
        let dt = dist[t_node];
        if dt == inf {
            break;
        }
        for v in 0..nodes {
            pot[v] = pot[v] + dist[v].min(dt);
        }
        // Bottleneck along the path.
        let mut path = vec![t_node];
        while *path.last().expect("non-empty") != s_node {
            path.push(prev[*path.last().expect("non-empty")]);
        }
        path.reverse();
        let mut push = inf;
        for w in path.windows(2) {
            let (u, v) = (w[0], w[1]);
            let cap = if u == s_node {
                supply[v - 1]
            } else if u <= n && v == s_node {
                a[u - 1] - supply[u - 1]
            } else if u <= n {
                inf
            } else if u < t_node && v == t_node {
                demand[u - 1 - n]
            } else if u < t_node {
                flow[[v - 1, u - 1 - n]]
            } else {
                b[v - 1 - n] - demand[v - 1 - n]
            };
            push = push.min(cap);
        }
        for w in path.windows(2) {
            let (u, v) = (w[0], w[1]);
            if u == s_node {
                supply[v - 1] = supply[v - 1] - push;
            } else if u <= n && v == s_node {
                supply[u - 1] = supply[u - 1] + push;
            } else if u <= n {
                flow[[u - 1, v - 1 - n]] = flow[[u - 1, v - 1 - n]] + push;
            } else if u < t_node && v == t_node {
                demand[u - 1 - n] = demand[u - 1 - n] - push;
            } else if u < t_node {
                flow[[v - 1, u - 1 - n]] = flow[[v - 1, u - 1 - n]] - push;
            } else {
                demand[v - 1 - n] = demand[v - 1 - n] + push;
            }
        }
    }

    let f = Array1::from_shape_fn(n, |i| -pot[src(i)]);
    let g = Array1::from_shape_fn(m, |j| pot[snk(j)]);
    let plan = TransportPlan::new(flow);
    let objective = plan.cost(cost);
    let (unique, min_rc) = certify_unique(&plan.matrix, cost, &f, &g, tol);
    Ok(ExactSolution {
        plan,
        objective,
        f,
        g,
        unique,
        min_offsupport_reduced_cost: min_rc,
    })
}

fn certify_unique<T: Scalar>(
    plan: &Array2<T>,
    cost: &Array2<T>,
    f: &Array1<T>,
    g: &Array1<T>,
    tol: T,
) -> (bool, T) {
    let (n, m) = plan.dim();
    let cmax = cost.iter().fold(T::one(), |acc, &c| acc.max(c.abs()));
    let mut parent: Vec<usize> = (0..n + m).collect();
    fn root(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut acyclic = true;
    let mut min_rc = T::infinity();
    for i in 0..n {
        for j in 0..m {
            if plan[[i, j]] > tol {
                let (ri, rj) = (root(&mut parent, i), root(&mut parent, n + j));
                if ri == rj {
                    acyclic = false;
                } else {
                    parent[ri] = rj;
                }
            } else {
                min_rc = min_rc.min(cost[[i, j]] - f[i] - g[j]);
            }
        }
    }
    let unique = acyclic && min_rc > lit::<T>(1e-9) * cmax;
    (unique, min_rc)
}

/// Minimum-cost assignment of rows to distinct columns (`rows ≤ cols`).
///
/// Returns `assignment[row] = col` and the total cost.
pub fn solve_assignment<T: Scalar>(cost: &Array2<T>) -> (Vec<usize>, T) {
    let (n, m) = cost.dim();
    assert!(n <= m, "assignment needs rows <= cols");
    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] = u[p[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    let total = assignment
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (i, &j)| acc + cost[[i, j]]);
    (assignment, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for k in 0..=p.len() {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    fn brute_force(cost: &Array2<f64>) -> f64 {
        permutations(cost.nrows())
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }

    fn random_measure(rng: &mut ChaCha8Rng, n: usize, uniform: bool) -> DiscreteMeasure<f64> {
        let atoms = Array2::from_shape_fn((n, 2), |_| rng.random::<f64>());
        if uniform {
            return DiscreteMeasure::uniform(atoms).unwrap();
        }
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
        let s: f64 = w.iter().sum();
        DiscreteMeasure::new(atoms, Array1::from_iter(w.iter().map(|x| x / s))).unwrap()
    }

    fn check_certificate(mu: &DiscreteMeasure<f64>, nu: &DiscreteMeasure<f64>, sol: &ExactSolution<f64>) {
        let p = &sol.plan;
        for (x, y) in p.row_marginal().iter().zip(&mu.masses) {
            assert!((x - y).abs() <= 1e-10);
        }
        for (x, y) in p.col_marginal().iter().zip(&nu.masses) {
            assert!((x - y).abs() <= 1e-10);
        }
        assert!(p.matrix.iter().all(|&v| v >= 0.0));
        let c = cost_matrix(mu, nu, 1.0).unwrap();
        let dual = sol.f.dot(&mu.masses) + sol.g.dot(&nu.masses);
        assert!((dual - sol.objective).abs() <= 1e-10, "{dual} vs {}", sol.objective);
        for i in 0..mu.len() {
            for j in 0..nu.len() {
                assert!(c[[i, j]] - sol.f[i] - sol.g[j] >= -1e-12);
            }
        }
    }

    #[test]
    fn identical_measures_give_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mu = random_measure(&mut rng, 5, false);
        let sol = solve_ot_exact(&mu, &mu, 1.0).unwrap();
        assert!(sol.objective.abs() < 1e-15);
        for i in 0..5 {
            assert!((sol.plan.matrix[[i, i]] - mu.masses[i]).abs() < 1e-12);
        }
        assert!(sol.unique);
    }

    #[test]
    fn crossing_pair() {
        let mu = DiscreteMeasure::uniform(array![[0.0], [1.0]]).unwrap();
        let nu = DiscreteMeasure::uniform(array![[1.0], [0.0]]).unwrap();
        let sol = solve_ot_exact(&mu, &nu, 1.0).unwrap();
        assert_eq!(sol.objective, 0.0);
        assert_eq!(sol.plan.matrix, array![[0.0, 0.5], [0.5, 0.0]]);
    }

    #[test]
    fn uniform_instances_match_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [4, 6] {
            for _ in 0..20 {
                let mu = random_measure(&mut rng, n, true);
                let nu = random_measure(&mut rng, n, true);
                let c = cost_matrix(&mu, &nu, 1.0).unwrap();
                let want = brute_force(&c) / n as f64;
                let sol = solve_ot_exact(&mu, &nu, 1.0).unwrap();
                assert!((sol.objective - want).abs() < 1e-12);
                check_certificate(&mu, &nu, &sol);
                let (_, total) = solve_assignment(&c);
                assert!((total / n as f64 - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unequal_masses_rejected() {
        let mu = DiscreteMeasure::new(array![[0.0]], array![1.0]).unwrap();
        let nu = DiscreteMeasure::new(array![[1.0]], array![0.5]).unwrap();
        assert!(matches!(solve_ot_exact(&mu, &nu, 1.0), Err(OracleError::UnequalMass { .. })));
    }

    #[test]
    fn generic_instances_are_unique_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut unique = 0;
        for _ in 0..50 {
            let mu = random_measure(&mut rng, 5, false);
            let nu = random_measure(&mut rng, 5, false);
            let sol = solve_ot_exact(&mu, &nu, 1.0).unwrap();
            check_certificate(&mu, &nu, &sol);
            unique += sol.unique as usize;
        }
        assert!(unique >= 45, "{unique}");
    }

    #[test]
    fn ties_are_not_certified() {
        // Four corners of a square: both matchings of the diagonal pair cost the same.
        let mu = DiscreteMeasure::uniform(array![[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let nu = DiscreteMeasure::uniform(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let sol = solve_ot_exact(&mu, &nu, 1.0).unwrap();
        assert!(!sol.unique);
        assert!((sol.objective - 1.0f64).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn ssp_and_hungarian_agree(seed in 0u64..1000, n in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mu = random_measure(&mut rng, n, true);
            let nu = random_measure(&mut rng, n, true);
            let c = cost_matrix(&mu, &nu, 1.0).unwrap();
            let sol = solve_ot_exact(&mu, &nu, 1.0).unwrap();
            let (perm, total) = solve_assignment(&c);
            prop_assert!((sol.objective - total / n as f64).abs() < 1e-12);
            let mut seen = perm.clone();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn general_masses_satisfy_certificate(seed in 0u64..1000, n in 1usize..7, m in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mu = random_measure(&mut rng, n, false);
            let nu = random_measure(&mut rng, m, false);
            let sol = solve_ot_exact(&mu, &nu, 1.0).unwrap();
            check_certificate(&mu, &nu, &sol);
        }
    }
}

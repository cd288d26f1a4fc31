//! The 2-D benchmark: Gaussian source, 8-mode ring target, and the shared
//! residual-MLP generator and potential.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::scalar::{lit, Scalar};

/// Mixture of `N(mᵢ, σ²I)` with equal weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureTarget {
    pub means: Vec<[f64; 2]>,
    pub sigma: f64,
}

impl Default for GaussianMixtureTarget {
    /// Eight modes `12·(cos(iπ/4), sin(iπ/4))`, σ = 0.4.
    fn default() -> Self {
        Self::ring(8, 12.0, 0.4)
    }
}

impl GaussianMixtureTarget {
    pub fn ring(modes: usize, radius: f64, sigma: f64) -> Self {
        let means = (0..modes)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / modes as f64;
                [radius * t.cos(), radius * t.sin()]
            })
            .collect();
        Self { means, sigma }
    }

    pub fn num_modes(&self) -> usize {
        self.means.len()
    }

    /// `n` i.i.d. samples: uniform component, then isotropic Gaussian.
    pub fn sample<T: Scalar, R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<T> {
        let mut out = Array2::zeros((n, 2));
        let k = self.means.len();
        for mut row in out.rows_mut() {
            let m = self.means[rng.random_range(0..k)];
            for d in 0..2 {
                let e: f64 = StandardNormal.sample(rng);
                row[d] = lit(m[d] + self.sigma * e);
            }
        }
        out
    }

    /// Smallest axis-aligned box containing every mean plus a margin.
    pub fn bounding_box(&self, margin: f64) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for m in &self.means {
            for d in 0..2 {
                lo[d] = lo[d].min(m[d] - margin);
                hi[d] = hi[d].max(m[d] + margin);
            }
        }
        (lo, hi)
    }
}

/// `n` i.i.d. standard normal points in `dim` dimensions.
pub fn sample_source<T: Scalar, R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Array2<T> {
    Array2::from_shape_simple_fn((n, dim), || {
        let e: f64 = StandardNormal.sample(rng);
        lit(e)
    })
}

/// Sizes shared by the generator and the potential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchConfig {
    pub data_dim: usize,
    pub noise_dim: usize,
    pub hidden: usize,
    pub blocks: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            data_dim: 2,
            noise_dim: 2,
            hidden: 128,
            blocks: 3,
        }
    }
}

/// Named parameter tensors of one network, in forward order.
///
/// Biases are stored as `1×m` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub names: Vec<String>,
    pub tensors: Vec<Array2<T>>,
}

impl<T: Scalar> ParamSet<T> {
    fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    fn push_linear<R: Rng + ?Sized>(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let w = Array2::from_shape_simple_fn((fan_in, fan_out), || lit::<T>(dist.sample(rng)));
        let b = Array2::from_shape_simple_fn((1, fan_out), || lit::<T>(dist.sample(rng)));
        self.names.push(format!("{name}.weight"));
        self.tensors.push(w);
        self.names.push(format!("{name}.bias"));
        self.tensors.push(b);
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors.iter().map(|t| t.dim()).collect()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Array2::zeros(t.dim())).collect(),
        }
    }

    /// Records every tensor as a tape leaf.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Vec<Var<'t, T>> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Flattened copy of every entry, in tensor order.
    pub fn flatten(&self) -> Vec<T> {
        self.tensors.iter().flat_map(|t| t.iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length mismatch");
        let mut k = 0;
        for t in &mut self.tensors {
            for v in t.iter_mut() {
                *v = flat[k];
                k += 1;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| t.mapv(|v| lit::<U>(v.to_f64_lossy())))
                .collect(),
        }
    }
}

/// Parameters of the generator `T_θ` and the potential `v_φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub arch: ArchConfig,
    pub generator: ParamSet<T>,
    pub potential: ParamSet<T>,
}

impl<T: Scalar> NetworkParams<T> {
    /// Uniform `±1/√fan_in` initialization for weights and biases.
    pub fn init<R: Rng + ?Sized>(arch: ArchConfig, rng: &mut R) -> Self {
        let h = arch.hidden;
        let mut g = ParamSet::new();
        g.push_linear("z_embed.0", arch.noise_dim, h, rng);
        g.push_linear("z_embed.1", h, h, rng);
        g.push_linear("x_in", arch.data_dim, h, rng);
        for k in 0..arch.blocks {
            g.push_linear(&format!("block.{k}"), h, h, rng);
        }
        g.push_linear("out.0", h, h, rng);
        g.push_linear("out.1", h, arch.data_dim, rng);

        let mut v = ParamSet::new();
        v.push_linear("y_in", arch.data_dim, h, rng);
        for k in 0..arch.blocks {
            v.push_linear(&format!("block.{k}"), h, h, rng);
        }
        v.push_linear("out.0", h, h, rng);
        v.push_linear("out.1", h, 1, rng);

        Self {
            arch,
            generator: g,
            potential: v,
        }
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        NetworkParams {
            arch: self.arch,
            generator: self.generator.cast(),
            potential: self.potential.cast(),
        }
    }
}

fn linear<'t, T: Scalar>(x: Var<'t, T>, w: Var<'t, T>, b: Var<'t, T>) -> Var<'t, T> {
    x.matmul(w).add_row(b)
}

/// `T_θ(x, z)` on the tape. `params` are the bound generator tensors.
pub fn generator_tape<'t, T: Scalar>(
    arch: &ArchConfig,
    params: &[Var<'t, T>],
    x: Var<'t, T>,
    z: Var<'t, T>,
) -> Var<'t, T> {
    assert_eq!(x.shape().0, z.shape().0, "x and z batch sizes differ");
    let mut p = params.chunks_exact(2).map(|c| (c[0], c[1]));
    let mut next = || p.next().expect("generator parameter count");
    let (w, b) = next();
    let ez = linear(z, w, b).silu();
    let (w, b) = next();
    let ez = linear(ez, w, b);
    let (w, b) = next();
    let mut h = linear(x, w, b);
    for _ in 0..arch.blocks {
        let (w, b) = next();
        h = h + linear(h.silu(), w, b);
    }
    let s = h + ez;
    let (w, b) = next();
    let s = linear(s.silu(), w, b);
    let (w, b) = next();
    linear(s.silu(), w, b)
}

/// `v_φ(y)` on the tape, as an n×1 column.
pub fn potential_tape<'t, T: Scalar>(
    arch: &ArchConfig,
    params: &[Var<'t, T>],
    y: Var<'t, T>,
) -> Var<'t, T> {
    let mut p = params.chunks_exact(2).map(|c| (c[0], c[1]));
    let mut next = || p.next().expect("potential parameter count");
    let (w, b) = next();
    let mut h = linear(y, w, b);
    for _ in 0..arch.blocks {
        let (w, b) = next();
        h = h + linear(h.silu(), w, b);
    }
    let (w, b) = next();
    let h = linear(h.silu(), w, b);
    let (w, b) = next();
    linear(h.silu(), w, b)
}

/// Evaluates `T_θ(x, z)`.
pub fn generator_forward<T: Scalar>(params: &NetworkParams<T>, x: &Array2<T>, z: &Array2<T>) -> Array2<T> {
    let tape = Tape::new();
    let bound = params.generator.bind(&tape);
    let out = generator_tape(&params.arch, &bound, tape.leaf(x.clone()), tape.leaf(z.clone()));
    out.value().as_ref().clone()
}

/// Evaluates `v_φ(y)` for every row of `y`.
pub fn potential_forward<T: Scalar>(params: &NetworkParams<T>, y: &Array2<T>) -> Array1<T> {
    let tape = Tape::new();
    let bound = params.potential.bind(&tape);
    let out = potential_tape(&params.arch, &bound, tape.leaf(y.clone()));
    out.value().column(0).to_owned()
}

/// Per-sample input gradients `∇_y v_φ(y)`.
pub fn potential_input_grad<T: Scalar>(params: &NetworkParams<T>, y: &Array2<T>) -> Array2<T> {
    let tape = Tape::new();
    let bound = params.potential.bind(&tape);
    let yv = tape.leaf(y.clone());
    let out = potential_tape(&params.arch, &bound, yv).sum();
    tape.grad(out, &[yv])[0].value().as_ref().clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_arch() -> ArchConfig {
        ArchConfig {
            data_dim: 2,
            noise_dim: 2,
            hidden: 8,
            blocks: 2,
        }
    }

    #[test]
    fn ring_means() {
        let t = GaussianMixtureTarget::default();
        assert_eq!(t.num_modes(), 8);
        assert!((t.means[0][0] - 12.0).abs() < 1e-12 && t.means[0][1].abs() < 1e-12);
        for m in &t.means {
            assert!(((m[0] * m[0] + m[1] * m[1]).sqrt() - 12.0).abs() < 1e-12);
        }
    }

    #[test]
    fn target_component_frequencies_and_spread() {
        let t = GaussianMixtureTarget::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let s: Array2<f64> = t.sample(n, &mut rng);
        let mut counts = [0usize; 8];
        let mut sq = [0.0f64; 8];
        for row in s.rows() {
            let (k, d2) = t
                .means
                .iter()
                .enumerate()
                .map(|(k, m)| (k, (row[0] - m[0]).powi(2) + (row[1] - m[1]).powi(2)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            counts[k] += 1;
            sq[k] += d2;
        }
        for k in 0..8 {
            let freq = counts[k] as f64 / n as f64;
            assert!((freq - 0.125).abs() <= 0.01, "mode {k} freq {freq}");
            let std = (sq[k] / (2.0 * counts[k] as f64)).sqrt();
            assert!((std - 0.4).abs() <= 0.02, "mode {k} std {std}");
        }
    }

    #[test]
    fn source_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s: Array2<f64> = sample_source(100_000, 2, &mut rng);
        let mean = s.mean_axis(ndarray::Axis(0)).unwrap();
        assert!(mean.iter().all(|m| m.abs() <= 0.02));
        for d in 0..2 {
            let var = s.column(d).mapv(|v| (v - mean[d]).powi(2)).mean().unwrap();
            assert!((var - 1.0).abs() <= 0.03);
        }
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let sa: Array2<f32> = sample_source(1, 2, &mut a);
        let sb: Array2<f32> = sample_source(1, 2, &mut b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn default_parameter_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = NetworkParams::<f32>::init(ArchConfig::default(), &mut rng);
        // z: 2·128+128 + 128·128+128; x_in: 2·128+128; 3 blocks; out: 128·128+128 + 128·2+2
        assert_eq!(p.generator.num_params(), 384 + 16512 + 384 + 3 * 16512 + 16512 + 258);
        assert_eq!(p.potential.num_params(), 384 + 3 * 16512 + 16512 + 129);
    }

    #[test]
    fn zero_final_layer_gives_constant_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = NetworkParams::<f64>::init(small_arch(), &mut rng);
        let gl = p.generator.tensors.len();
        p.generator.tensors[gl - 2].fill(0.0);
        let pl = p.potential.tensors.len();
        p.potential.tensors[pl - 2].fill(0.0);
        p.potential.tensors[pl - 1].fill(0.0);
        let x: Array2<f64> = sample_source(16, 2, &mut rng);
        let z: Array2<f64> = sample_source(16, 2, &mut rng);
        let out = generator_forward(&p, &x, &z);
        for row in out.rows() {
            assert_eq!(row, out.row(0));
        }
        assert!(potential_forward(&p, &x).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = NetworkParams::<f32>::init(ArchConfig::default(), &mut rng);
        let x: Array2<f32> = sample_source(32, 2, &mut rng);
        let z: Array2<f32> = sample_source(32, 2, &mut rng);
        assert_eq!(generator_forward(&p, &x, &z), generator_forward(&p, &x, &z));
        assert_eq!(potential_forward(&p, &x), potential_forward(&p, &x));
    }

    fn fd_check(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>, analytic: &Array2<f64>) {
        let h = 1e-4;
        for idx in ndarray::indices(x.dim()) {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[idx] += h;
            xm[idx] -= h;
            let numeric = (f(&xp) - f(&xm)) / (2.0 * h);
            let a = analytic[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(rel <= 1e-3, "analytic {a} numeric {numeric}");
        }
    }

    #[test]
    fn generator_input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = NetworkParams::<f64>::init(small_arch(), &mut rng);
        let x: Array2<f64> = sample_source(4, 2, &mut rng);
        let z: Array2<f64> = sample_source(4, 2, &mut rng);
        let weights: Array2<f64> = sample_source(4, 2, &mut rng);
        let objective = |x: &Array2<f64>| (generator_forward(&p, x, &z) * &weights).sum();
        let tape = Tape::new();
        let bound = p.generator.bind(&tape);
        let xv = tape.leaf(x.clone());
        let out = generator_tape(&p.arch, &bound, xv, tape.leaf(z.clone()));
        let loss = (out * tape.leaf(weights.clone())).sum();
        let g = tape.grad(loss, &[xv])[0].value();
        fd_check(objective, &x, &g);
    }

    #[test]
    fn potential_input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = NetworkParams::<f64>::init(small_arch(), &mut rng);
        let y: Array2<f64> = sample_source(5, 2, &mut rng);
        let g = potential_input_grad(&p, &y);
        fd_check(|y| potential_forward(&p, y).sum(), &y, &g);
    }

    #[test]
    fn potential_empirical_lipschitz_probe() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = NetworkParams::<f64>::init(small_arch(), &mut rng);
        // Largest input-gradient norm on a fine grid bounds the rate of change
        // between neighbouring grid points up to curvature.
        let n = 41;
        let grid = Array2::from_shape_fn((n * n, 2), |(i, d)| {
            let (a, b) = (i / n, i % n);
            -4.0 + 8.0 * (if d == 0 { a } else { b }) as f64 / (n - 1) as f64
        });
        let grads = potential_input_grad(&p, &grid);
        let l_emp = grads
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .fold(0.0, f64::max);
        let delta = Array2::from_elem((n * n, 2), 1e-3);
        let shifted = &grid + &delta;
        let v0 = potential_forward(&p, &grid);
        let v1 = potential_forward(&p, &shifted);
        let step = (2.0f64).sqrt() * 1e-3;
        for (a, b) in v0.iter().zip(v1.iter()) {
            assert!((a - b).abs() <= 1.01 * l_emp * step);
        }
    }
}

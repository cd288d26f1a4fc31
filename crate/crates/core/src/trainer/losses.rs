//! Potential/generator objectives, regularizers and sample weights.

use ndarray::{Array1, Array2};

use crate::autodiff::{Tape, Var};
use crate::conjugate::{alpha_scaled_conj, alpha_scaled_conj_deriv, ConjugatePair};
use crate::models::{potential_tape, ArchConfig, NetworkParams};
use crate::scalar::{lit, Scalar};

use super::preset::ModelPreset;
use super::TrainError;

fn check_finite<T: Scalar>(term: &str, xs: &[T]) -> Result<(), TrainError> {
    match xs.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(TrainError::NonFinite {
            iter: None,
            term: format!("{term}[{i}]"),
        }),
    }
}

fn mean<T: Scalar>(xs: impl ExactSizeIterator<Item = T>) -> T {
    let n = xs.len();
    let s = xs.fold(T::zero(), |a, b| a + b);
    s / lit::<T>(n as f64)
}

fn scaled_conj_mean<T: Scalar>(
    term: &str,
    pair: ConjugatePair,
    alpha: T,
    args: impl ExactSizeIterator<Item = T>,
) -> Result<T, TrainError> {
    let n = args.len();
    let mut acc = T::zero();
    for a in args {
        acc = acc + alpha_scaled_conj(pair, alpha, a).map_err(|e| TrainError::Math {
            iter: None,
            term: term.to_string(),
            source: e,
        })?;
    }
    let m = acc / lit::<T>(n as f64);
    check_finite(term, &[m])?;
    Ok(m)
}

/// `mean g₁(−c + v(ŷ)) + mean g₂(−v(y)) + λ·reg`, with α-scaled conjugates.
pub fn potential_loss<T: Scalar>(
    preset: &ModelPreset,
    alpha: T,
    v_of_fake: &[T],
    v_of_real: &[T],
    cost_of_fake: &[T],
    reg_value: T,
) -> Result<T, TrainError> {
    if v_of_fake.is_empty() || v_of_real.is_empty() || v_of_fake.len() != cost_of_fake.len() {
        return Err(TrainError::Shape(format!(
            "potential_loss needs non-empty batches with matching fake/cost sizes ({}, {}, {})",
            v_of_fake.len(),
            v_of_real.len(),
            cost_of_fake.len()
        )));
    }
    check_finite("v_of_fake", v_of_fake)?;
    check_finite("v_of_real", v_of_real)?;
    check_finite("cost_of_fake", cost_of_fake)?;
    check_finite("reg_value", &[reg_value])?;
    let fake = scaled_conj_mean(
        "g1_term",
        preset.g1,
        alpha,
        v_of_fake.iter().zip(cost_of_fake).map(|(&v, &c)| v - c),
    )?;
    let real = scaled_conj_mean("g2_term", preset.g2, alpha, v_of_real.iter().map(|&v| -v))?;
    Ok(fake + real + lit::<T>(preset.reg_lambda) * reg_value)
}

/// `mean(c − v)`; never α-scaled.
pub fn generator_loss<T: Scalar>(cost_of_fake: &[T], v_of_fake: &[T]) -> Result<T, TrainError> {
    if cost_of_fake.is_empty() || cost_of_fake.len() != v_of_fake.len() {
        return Err(TrainError::Shape("generator_loss needs equal non-empty batches".into()));
    }
    check_finite("cost_of_fake", cost_of_fake)?;
    check_finite("v_of_fake", v_of_fake)?;
    let m = mean(cost_of_fake.iter().zip(v_of_fake).map(|(&c, &v)| c - v));
    check_finite("generator_loss", &[m])?;
    Ok(m)
}

/// `ŵ = ((αΨ₁)*)'(−l̂)` and `w = ((αΨ₂)*)'(−v(y))`.
pub fn sample_weights<T: Scalar>(
    preset: &ModelPreset,
    alpha: T,
    l_hat: &[T],
    v_real: &[T],
) -> Result<(Vec<T>, Vec<T>), TrainError> {
    let wrap = |term: &str| {
        let term = term.to_string();
        move |e| TrainError::Math { iter: None, term: term.clone(), source: e }
    };
    let w_hat = l_hat
        .iter()
        .map(|&l| alpha_scaled_conj_deriv(preset.g1, alpha, -l).map_err(wrap("w_hat")))
        .collect::<Result<Vec<_>, _>>()?;
    let w = v_real
        .iter()
        .map(|&v| alpha_scaled_conj_deriv(preset.g2, alpha, -v).map_err(wrap("w")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((w_hat, w))
}

/// `(αΨ)*` applied elementwise on the tape.
pub fn scaled_conj_tape<'t, T: Scalar>(pair: ConjugatePair, alpha: T, x: Var<'t, T>) -> Var<'t, T> {
    match pair {
        ConjugatePair::Identity => x,
        ConjugatePair::Softplus => {
            let two_a = lit::<T>(2.0) * alpha;
            x.scale(T::one() / alpha)
                .softplus()
                .scale(two_a)
                .add_scalar(-two_a * T::LN_2())
        }
        ConjugatePair::KLExp => x.scale(T::one() / alpha).exp().scale(alpha).add_scalar(-alpha),
    }
}

/// `τ‖x − ŷ‖²` per row, as an n×1 column.
pub fn cost_tape<'t, T: Scalar>(tau: T, x: Var<'t, T>, y_hat: Var<'t, T>) -> Var<'t, T> {
    (x - y_hat).square().sum_cols().scale(tau)
}

/// Mean squared input-gradient norm of `v` at `y` (R₁).
pub fn r1_tape<'t, T: Scalar>(arch: &ArchConfig, pot: &[Var<'t, T>], y: Var<'t, T>) -> Var<'t, T> {
    let tape = y.tape();
    let v = potential_tape(arch, pot, y);
    let g = tape.grad(v.sum(), &[y]).remove(0);
    g.square().sum_cols().mean()
}

/// `mean (‖∇v(ŷ)‖ − 1)²` at the given interpolates.
pub fn gradient_penalty_tape<'t, T: Scalar>(
    arch: &ArchConfig,
    pot: &[Var<'t, T>],
    interp: Var<'t, T>,
) -> Var<'t, T> {
    let tape = interp.tape();
    let v = potential_tape(arch, pot, interp);
    let g = tape.grad(v.sum(), &[interp]).remove(0);
    g.square().sum_cols().sqrt().add_scalar(-T::one()).square().mean()
}

/// `t·fake + (1 − t)·real`, row-wise.
pub fn interpolate<T: Scalar>(real: &Array2<T>, fake: &Array2<T>, t: &Array1<T>) -> Array2<T> {
    assert_eq!(real.dim(), fake.dim(), "real and fake batches differ in shape");
    assert_eq!(t.len(), real.nrows(), "one interpolation weight per row");
    let mut out = real.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let ti = t[i];
        for (j, v) in row.iter_mut().enumerate() {
            *v = ti * fake[[i, j]] + (T::one() - ti) * *v;
        }
    }
    out
}

/// R₁ value of the potential in `params`; 0 on an empty batch.
pub fn r1_regularizer<T: Scalar>(params: &NetworkParams<T>, real: &Array2<T>) -> T {
    if real.nrows() == 0 {
        return T::zero();
    }
    let tape = Tape::new();
    let pot = params.potential.bind(&tape);
    r1_tape(&params.arch, &pot, tape.leaf(real.clone())).item()
}

/// Gradient-penalty value of the potential in `params`.
pub fn gradient_penalty<T: Scalar>(
    params: &NetworkParams<T>,
    real: &Array2<T>,
    fake: &Array2<T>,
    t: &Array1<T>,
) -> T {
    if real.nrows() == 0 {
        return T::zero();
    }
    let tape = Tape::new();
    let pot = params.potential.bind(&tape);
    let interp = tape.leaf(interpolate(real, fake, t));
    gradient_penalty_tape(&params.arch, &pot, interp).item()
}

/// Clamps every potential parameter into `[−bound, bound]`.
pub fn weight_clip<T: Scalar>(params: &NetworkParams<T>, bound: T) -> NetworkParams<T> {
    let mut out = params.clone();
    weight_clip_in_place(&mut out, bound);
    out
}

pub(crate) fn weight_clip_in_place<T: Scalar>(params: &mut NetworkParams<T>, bound: T) {
    for t in &mut params.potential.tensors {
        t.mapv_inplace(|v| v.max(-bound).min(bound));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ArchConfig;
    use crate::trainer::preset::PresetName;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn preset(name: PresetName) -> ModelPreset {
        ModelPreset::toy(name, 1000)
    }

    #[test]
    fn softplus_pair_example() {
        let mut p = preset(PresetName::UotmSp);
        p.reg_lambda = 0.0;
        // One fake with −c + v = 0.3 and one real with −v = −0.3.
        let l = potential_loss(&p, 1.0f64, &[0.3], &[0.3], &[0.0], 0.0).unwrap();
        assert!((l - 0.044_832_255_6).abs() < 1e-9, "{l}");
    }

    #[test]
    fn zero_potential_zero_loss() {
        for name in PresetName::ALL {
            let mut p = preset(name);
            p.reg_lambda = 0.0;
            let z = [0.0f64; 4];
            assert_eq!(potential_loss(&p, 1.0, &z, &z, &z, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn identity_reduces_to_wgan_dual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = preset(PresetName::WganGp);
        let mut p = p;
        p.reg_lambda = 0.0;
        for _ in 0..20 {
            let vf: Vec<f64> = (0..16).map(|_| rng.random_range(-3.0..3.0)).collect();
            let vr: Vec<f64> = (0..16).map(|_| rng.random_range(-3.0..3.0)).collect();
            let c = vec![0.0; 16];
            let ours = potential_loss(&p, 1.0, &vf, &vr, &c, 0.0).unwrap();
            let wgan = vf.iter().sum::<f64>() / 16.0 - vr.iter().sum::<f64>() / 16.0;
            assert!((ours - wgan).abs() <= 1e-14 * (1.0 + wgan.abs()));
            let g = generator_loss(&c, &vf).unwrap();
            assert_eq!(g, -vf.iter().sum::<f64>() / 16.0);
        }
    }

    #[test]
    fn large_alpha_softplus_matches_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sp = preset(PresetName::UotmSp);
        let id = preset(PresetName::Otm);
        let (mut sp, mut id) = (sp, id);
        sp.reg_lambda = 0.0;
        id.reg_lambda = 0.0;
        let vf: Vec<f64> = (0..32).map(|_| rng.random_range(-5.0..5.0)).collect();
        let vr: Vec<f64> = (0..32).map(|_| rng.random_range(-5.0..5.0)).collect();
        let c: Vec<f64> = (0..32).map(|_| rng.random_range(0.0..5.0)).collect();
        let a = potential_loss(&sp, 1e6, &vf, &vr, &c, 0.0).unwrap();
        let b = potential_loss(&id, 1e6, &vf, &vr, &c, 0.0).unwrap();
        assert!((a - b).abs() <= 1e-3);
    }

    #[test]
    fn nan_is_reported_with_term() {
        let p = preset(PresetName::UotmSp);
        let err = potential_loss(&p, 1.0f64, &[f64::NAN], &[0.0], &[0.0], 0.0).unwrap_err();
        assert!(err.to_string().contains("v_of_fake"), "{err}");
        let p = preset(PresetName::UotmKl);
        let err = potential_loss(&p, 1.0f64, &[1e4], &[0.0], &[0.0], 0.0).unwrap_err();
        assert!(err.to_string().contains("g1_term"), "{err}");
    }

    #[test]
    fn generator_loss_mean() {
        assert!((generator_loss(&[0.5f64; 3], &[0.2; 3]).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn weights() {
        let id = preset(PresetName::Wgan);
        let (a, b) = sample_weights(&id, 1.0f64, &[1.0, -2.0], &[3.0]).unwrap();
        assert!(a.iter().chain(&b).all(|&w| w == 1.0));
        let sp = preset(PresetName::UotmSp);
        let (a, _) = sample_weights(&sp, 1.0f64, &[0.0, -2.0], &[]).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-15);
        assert!((a[1] - 1.761_594_155_955_764_9).abs() < 1e-12);
    }

    #[test]
    fn weights_positive_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for name in [PresetName::UotmSp, PresetName::UotmKl] {
            let p = preset(name);
            let mut l: Vec<f64> = (0..64).map(|_| rng.random_range(-5.0..5.0)).collect();
            l.sort_by(f64::total_cmp);
            let (wh, w) = sample_weights(&p, 1.0, &l, &l).unwrap();
            for ws in [&wh, &w] {
                assert!(ws.iter().all(|&x| x > 0.0));
                assert!(ws.windows(2).all(|p| p[1] <= p[0]));
            }
        }
    }

    #[test]
    fn scaled_conj_tape_matches_scalar() {
        let tape = Tape::new();
        let xs = Array2::from_shape_vec((4, 1), vec![-3.0f64, -0.2, 0.0, 2.5]).unwrap();
        for pair in ConjugatePair::ALL {
            for alpha in [0.2, 1.0, 5.0] {
                let out = scaled_conj_tape(pair, alpha, tape.leaf(xs.clone())).value();
                for (i, &x) in xs.iter().enumerate() {
                    let want = alpha_scaled_conj(pair, alpha, x).unwrap();
                    assert!((out[[i, 0]] - want).abs() < 1e-12);
                }
            }
        }
    }

    fn zero_potential() -> NetworkParams<f64> {
        let arch = ArchConfig {
            data_dim: 2,
            noise_dim: 2,
            hidden: 2,
            blocks: 0,
        };
        let mut p: NetworkParams<f64> = NetworkParams::init(arch, &mut ChaCha8Rng::seed_from_u64(0));
        for t in &mut p.potential.tensors {
            t.fill(0.0);
        }
        p
    }

    #[test]
    fn constant_potential_regularizers() {
        let p = zero_potential();
        let y = Array2::from_shape_vec((3, 2), vec![1.0, 2.0, -1.0, 0.5, 3.0, 3.0]).unwrap();
        assert_eq!(r1_regularizer(&p, &y), 0.0);
        let t = Array1::from(vec![0.1, 0.5, 0.9]);
        let gp = gradient_penalty(&p, &y, &(y.clone() * 2.0), &t);
        assert!((gp - 1.0).abs() < 1e-15);
        assert_eq!(r1_regularizer(&p, &Array2::zeros((0, 2))), 0.0);
    }

    #[test]
    fn affine_and_quadratic_gradients() {
        // v(y) = ⟨u, y⟩ via the tape primitives used by the regularizers.
        let tape = Tape::new();
        let y = tape.leaf(Array2::from_shape_vec((2, 2), vec![1.0f64, -2.0, 0.3, 4.0]).unwrap());
        let u = tape.leaf(Array2::from_shape_vec((2, 1), vec![3.0, 4.0]).unwrap());
        let v = y.matmul(u);
        let g = tape.grad(v.sum(), &[y]).remove(0);
        let r1 = g.square().sum_cols().mean().item();
        assert!((r1 - 25.0).abs() < 1e-12);
        let unit = tape.leaf(Array2::from_shape_vec((2, 1), vec![0.6, 0.8]).unwrap());
        let g = tape.grad(y.matmul(unit).sum(), &[y]).remove(0);
        let gp = g.square().sum_cols().sqrt().add_scalar(-1.0).square().mean().item();
        assert!(gp.abs() < 1e-15);

        // Quadratic v(y) = ½ yᵀAy + bᵀy: ∇v = Ay + b.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = [[2.0, 0.5], [0.5, 1.0]];
        let b = [0.3, -0.7];
        let pts: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
        let tape = Tape::new();
        let yv = tape.leaf(Array2::from_shape_vec((10, 2), pts.clone()).unwrap());
        let am = tape.leaf(Array2::from_shape_vec((2, 2), a.concat()).unwrap());
        let bm = tape.leaf(Array2::from_shape_vec((1, 2), b.to_vec()).unwrap());
        let quad = (yv.matmul(am) * yv).sum_cols().scale(0.5) + yv.matmul_t(bm, false, true);
        let g = tape.grad(quad.sum(), &[yv]).remove(0);
        let r1 = g.square().sum_cols().mean().item();
        let gp = g.square().sum_cols().sqrt().add_scalar(-1.0).square().mean().item();
        let (mut r1_want, mut gp_want) = (0.0, 0.0);
        for r in pts.chunks(2) {
            let gx = a[0][0] * r[0] + a[0][1] * r[1] + b[0];
            let gy = a[1][0] * r[0] + a[1][1] * r[1] + b[1];
            let n2 = gx * gx + gy * gy;
            r1_want += n2 / 10.0;
            gp_want += (n2.sqrt() - 1.0).powi(2) / 10.0;
        }
        assert!((r1 - r1_want).abs() <= 1e-5);
        assert!((gp - gp_want).abs() <= 1e-5);
    }

    #[test]
    fn clipping() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p: NetworkParams<f64> = NetworkParams::init(ArchConfig::default(), &mut rng);
        p.potential.tensors[0][[0, 0]] = 0.5;
        let once = weight_clip(&p, 0.1);
        assert_eq!(once.potential.tensors[0][[0, 0]], 0.1);
        assert_eq!(weight_clip(&once, 0.1), once);
        assert_eq!(once.generator, p.generator);
        assert!(once.potential.flatten().iter().all(|v| v.abs() <= 0.1));
        let small = weight_clip(&p, 10.0);
        assert_eq!(small, p);
    }
}

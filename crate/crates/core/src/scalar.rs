//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point element type usable by the networks, the solvers and the
/// conjugate kernel.
///
/// Implemented for `f32` (fast training) and `f64` (oracles and gradient
/// checks).
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Short dtype tag written into checkpoints.
    const DTYPE: &'static str;

    fn from_f64_lossy(x: f64) -> Self;

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Little-endian byte encoding used by the checkpoint container.
    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Option<Self>;

    /// Elementwise logistic function, in place.
    fn sigmoid_slice(xs: &mut [Self]) {
        for x in xs {
            *x = crate::conjugate::sigmoid(*x);
        }
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    /// Branch-free form that the compiler vectorizes; relative error is a
    /// few ulps. Results below [`SIGMOID_FLUSH_F32`] flush to zero: tiny
    /// activations otherwise underflow into subnormals in the backward
    /// products, which slows f32 arithmetic several-fold.
    fn sigmoid_slice(xs: &mut [Self]) {
        for x in xs {
            let s = 1.0 / (1.0 + fast_exp_f32(-*x));
            *x = if s < SIGMOID_FLUSH_F32 { 0.0 } else { s };
        }
    }

    fn from_f64_lossy(x: f64) -> Self {
        x as f32
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Option<Self> {
        Some(f32::from_le_bytes(bytes.get(..4)?.try_into().ok()?))
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    fn from_f64_lossy(x: f64) -> Self {
        x
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Option<Self> {
        Some(f64::from_le_bytes(bytes.get(..8)?.try_into().ok()?))
    }
}

/// Smallest nonzero `f32` sigmoid output (2⁻⁶⁴, reached near x = −44.4).
pub const SIGMOID_FLUSH_F32: f32 = 5.421_011e-20;

/// `eˣ` via range reduction by ln 2 and a degree-6 polynomial; saturates to
/// 0 / +∞-like values outside `[−87, 88]`.
#[inline(always)]
fn fast_exp_f32(x: f32) -> f32 {
    const ROUND: f32 = 12_582_912.0; // 1.5·2²³
    let x = x.clamp(-87.0, 88.0);
    let k = (x * std::f32::consts::LOG2_E + ROUND) - ROUND;
    let r = x - k * 0.693_145_75 - k * 1.428_606_8e-6;
    let p = 1.0
        + r * (1.0
            + r * (0.5
                + r * (0.166_666_67 + r * (0.041_666_668 + r * (0.008_333_334 + r * 0.001_388_889)))));
    p * f32::from_bits(((k as i32 + 127) as u32) << 23)
}

/// Shorthand for converting a literal into `T`.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64_lossy(x)
}

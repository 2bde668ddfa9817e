//! Floating-point abstraction shared by every numerical module.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the kernels, samplers and the model are generic over.
///
/// `f64` is the working precision. `f32` is supported for memory-bound
/// experiments, and with the `quad` feature `f128` serves as a
/// high-precision reference for finite-difference gradient checks.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + NumAssign + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` constant.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 constant is representable")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("count is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(feature = "quad")]
impl Scalar for f128::f128 {}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus<S: Scalar>(x: S) -> S {
    if x > S::lit(30.0) {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv<S: Scalar>(y: S) -> S {
    if y > S::lit(30.0) {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

/// Logistic function, the derivative of [`softplus`].
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Larger of two values by `>`. Used instead of `Float::max`, which the
/// quad-precision type gets wrong for negative operands.
#[inline]
pub fn max_of<S: Scalar>(a: S, b: S) -> S {
    if b > a {
        b
    } else {
        a
    }
}

/// Smaller of two values by `<`.
#[inline]
pub fn min_of<S: Scalar>(a: S, b: S) -> S {
    if b < a {
        b
    } else {
        a
    }
}

/// `ln Σ exp(x_i)` with max subtraction.
pub fn log_sum_exp<S: Scalar>(xs: &[S]) -> S {
    let max = xs.iter().copied().fold(S::neg_infinity(), max_of);
    if !max.is_finite() {
        return max;
    }
    let mut acc = S::zero();
    for &x in xs {
        acc += (x - max).exp();
    }
    max + acc.ln()
}

pub(crate) fn cast_slice<S: Scalar, T: Scalar>(xs: &[S]) -> Vec<T> {
    xs.iter().map(|&x| T::lit(x.as_f64())).collect()
}

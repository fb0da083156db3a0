//! Scalar abstraction shared by every numerical routine in the crate.
//!
//! All of the math (kernels, Cholesky, divergences, expected losses, the deep
//! GP objective) is written against [`Scalar`], so the same code runs on plain
//! `f64`/`f32` and on the reverse-mode [`Var`](crate::autodiff::Var) used for
//! gradients.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    /// Lossy constant conversion; never fails for finite input.
    #[inline]
    fn cst(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant is representable")
    }

    /// Primal value as `f64`.
    #[inline]
    fn val(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    if x.val() > 30.0 {
        x
    } else if x.val() < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for positive `y`.
pub fn softplus_inv(y: f64) -> f64 {
    assert!(y > 0.0, "softplus_inv needs a positive argument, got {y}");
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Numerically stable `log(sum(exp(xs)))`.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    if !max.is_finite() {
        return max;
    }
    let sum: T = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

//! Minimal reverse-mode automatic differentiation over a thread-local tape.
//!
//! [`Var`] implements [`Scalar`], so any routine generic over the scalar type
//! can be differentiated by calling it with `Var` inputs inside
//! [`gradient`]. Constants never touch the tape; an operation whose operands
//! are all constants yields another constant.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::num::FpCategory;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, Sub, SubAssign};

use num_traits::{Float, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};

use crate::scalar::Scalar;

const CONST: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
}

thread_local! {
    static TAPE: RefCell<Tape> = RefCell::new(Tape::default());
}

#[derive(Default)]
struct Tape {
    nodes: Vec<Node>,
    active: bool,
}

impl Tape {
    fn push(&mut self, node: Node) -> u32 {
        let idx = self.nodes.len();
        assert!(idx < CONST as usize, "autodiff tape overflow");
        self.nodes.push(node);
        idx as u32
    }
}

/// A scalar tracked on the reverse-mode tape.
#[derive(Clone, Copy)]
pub struct Var {
    value: f64,
    index: u32,
}

impl Var {
    /// An untracked constant.
    #[inline]
    pub const fn constant(value: f64) -> Self {
        Var {
            value,
            index: CONST,
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.value
    }

    #[inline]
    pub fn is_constant(self) -> bool {
        self.index == CONST
    }

    fn leaf(value: f64) -> Self {
        let index = TAPE.with(|t| {
            let mut t = t.borrow_mut();
            t.push(Node {
                parents: [CONST, CONST],
                partials: [0.0, 0.0],
            })
        });
        Var { value, index }
    }

    #[inline]
    fn unary(self, value: f64, d: f64) -> Var {
        if self.index == CONST {
            return Var::constant(value);
        }
        let index = TAPE.with(|t| {
            t.borrow_mut().push(Node {
                parents: [self.index, CONST],
                partials: [d, 0.0],
            })
        });
        Var { value, index }
    }

    #[inline]
    fn binary(self, other: Var, value: f64, da: f64, db: f64) -> Var {
        match (self.index == CONST, other.index == CONST) {
            (true, true) => Var::constant(value),
            (false, true) => self.unary(value, da),
            (true, false) => other.unary(value, db),
            (false, false) => {
                let index = TAPE.with(|t| {
                    t.borrow_mut().push(Node {
                        parents: [self.index, other.index],
                        partials: [da, db],
                    })
                });
                Var { value, index }
            }
        }
    }
}

/// Evaluates `f` at `x` and returns its value and gradient.
///
/// Panics if called re-entrantly on the same thread.
pub fn gradient<F>(f: F, x: &[f64]) -> (f64, Vec<f64>)
where
    F: FnOnce(&[Var]) -> Var,
{
    TAPE.with(|t| {
        let mut t = t.borrow_mut();
        assert!(!t.active, "nested autodiff::gradient calls are not supported");
        t.active = true;
        t.nodes.clear();
    });
    struct Reset;
    impl Drop for Reset {
        fn drop(&mut self) {
            TAPE.with(|t| {
                let mut t = t.borrow_mut();
                t.active = false;
                t.nodes.clear();
                t.nodes.shrink_to(1 << 20);
            });
        }
    }
    let _reset = Reset;

    let inputs: Vec<Var> = x.iter().map(|&v| Var::leaf(v)).collect();
    let out = f(&inputs);
    let mut grad = vec![0.0; x.len()];
    if out.index == CONST {
        return (out.value, grad);
    }
    TAPE.with(|t| {
        let t = t.borrow();
        let mut adj = vec![0.0f64; t.nodes.len()];
        adj[out.index as usize] = 1.0;
        for i in (0..=out.index as usize).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = t.nodes[i];
            for k in 0..2 {
                let p = node.parents[k];
                if p != CONST {
                    adj[p as usize] += a * node.partials[k];
                }
            }
        }
        for (g, v) in grad.iter_mut().zip(&inputs) {
            *g = adj[v.index as usize];
        }
    });
    (out.value, grad)
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({})", self.value)
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.value, f)
    }
}

impl Default for Var {
    fn default() -> Self {
        Var::constant(0.0)
    }
}

impl PartialEq for Var {
    fn eq(&self, other: &Self) -> bool {
        self.value == other.value
    }
}

impl PartialOrd for Var {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.value.partial_cmp(&other.value)
    }
}

impl Add for Var {
    type Output = Var;
    #[inline]
    fn add(self, rhs: Var) -> Var {
        self.binary(rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl Sub for Var {
    type Output = Var;
    #[inline]
    fn sub(self, rhs: Var) -> Var {
        self.binary(rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl Mul for Var {
    type Output = Var;
    #[inline]
    fn mul(self, rhs: Var) -> Var {
        self.binary(rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl Div for Var {
    type Output = Var;
    #[inline]
    fn div(self, rhs: Var) -> Var {
        let q = self.value / rhs.value;
        self.binary(rhs, q, 1.0 / rhs.value, -q / rhs.value)
    }
}

impl Rem for Var {
    type Output = Var;
    fn rem(self, rhs: Var) -> Var {
        let r = self.value % rhs.value;
        let n = (self.value / rhs.value).trunc();
        self.binary(rhs, r, 1.0, -n)
    }
}

impl Neg for Var {
    type Output = Var;
    #[inline]
    fn neg(self) -> Var {
        self.unary(-self.value, -1.0)
    }
}

macro_rules! assign_op {
    ($tr:ident, $m:ident, $op:tt) => {
        impl $tr for Var {
            #[inline]
            fn $m(&mut self, rhs: Var) {
                *self = *self $op rhs;
            }
        }
    };
}
assign_op!(AddAssign, add_assign, +);
assign_op!(SubAssign, sub_assign, -);
assign_op!(MulAssign, mul_assign, *);
assign_op!(DivAssign, div_assign, /);

impl Sum for Var {
    fn sum<I: Iterator<Item = Var>>(iter: I) -> Var {
        iter.fold(Var::constant(0.0), |a, b| a + b)
    }
}

impl Zero for Var {
    fn zero() -> Self {
        Var::constant(0.0)
    }
    fn is_zero(&self) -> bool {
        self.value == 0.0
    }
}

impl One for Var {
    fn one() -> Self {
        Var::constant(1.0)
    }
}

impl Num for Var {
    type FromStrRadixErr = num_traits::ParseFloatError;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        f64::from_str_radix(s, radix).map(Var::constant)
    }
}

impl ToPrimitive for Var {
    fn to_i64(&self) -> Option<i64> {
        self.value.to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        self.value.to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        Some(self.value)
    }
}

impl NumCast for Var {
    fn from<N: ToPrimitive>(n: N) -> Option<Self> {
        n.to_f64().map(Var::constant)
    }
}

impl FromPrimitive for Var {
    fn from_i64(n: i64) -> Option<Self> {
        Some(Var::constant(n as f64))
    }
    fn from_u64(n: u64) -> Option<Self> {
        Some(Var::constant(n as f64))
    }
    fn from_f64(n: f64) -> Option<Self> {
        Some(Var::constant(n))
    }
}

impl Float for Var {
    fn nan() -> Self {
        Var::constant(f64::NAN)
    }
    fn infinity() -> Self {
        Var::constant(f64::INFINITY)
    }
    fn neg_infinity() -> Self {
        Var::constant(f64::NEG_INFINITY)
    }
    fn neg_zero() -> Self {
        Var::constant(-0.0)
    }
    fn min_value() -> Self {
        Var::constant(f64::MIN)
    }
    fn min_positive_value() -> Self {
        Var::constant(f64::MIN_POSITIVE)
    }
    fn epsilon() -> Self {
        Var::constant(f64::EPSILON)
    }
    fn max_value() -> Self {
        Var::constant(f64::MAX)
    }
    fn is_nan(self) -> bool {
        self.value.is_nan()
    }
    fn is_infinite(self) -> bool {
        self.value.is_infinite()
    }
    fn is_finite(self) -> bool {
        self.value.is_finite()
    }
    fn is_normal(self) -> bool {
        self.value.is_normal()
    }
    fn classify(self) -> FpCategory {
        self.value.classify()
    }
    fn floor(self) -> Self {
        self.unary(self.value.floor(), 0.0)
    }
    fn ceil(self) -> Self {
        self.unary(self.value.ceil(), 0.0)
    }
    fn round(self) -> Self {
        self.unary(self.value.round(), 0.0)
    }
    fn trunc(self) -> Self {
        self.unary(self.value.trunc(), 0.0)
    }
    fn fract(self) -> Self {
        self.unary(self.value.fract(), 1.0)
    }
    fn abs(self) -> Self {
        let s = if self.value < 0.0 { -1.0 } else { 1.0 };
        self.unary(self.value.abs(), s)
    }
    fn signum(self) -> Self {
        self.unary(self.value.signum(), 0.0)
    }
    fn is_sign_positive(self) -> bool {
        self.value.is_sign_positive()
    }
    fn is_sign_negative(self) -> bool {
        self.value.is_sign_negative()
    }
    fn mul_add(self, a: Self, b: Self) -> Self {
        self * a + b
    }
    fn recip(self) -> Self {
        let r = 1.0 / self.value;
        self.unary(r, -r * r)
    }
    fn powi(self, n: i32) -> Self {
        let d = if n == 0 {
            0.0
        } else {
            n as f64 * self.value.powi(n - 1)
        };
        self.unary(self.value.powi(n), d)
    }
    fn powf(self, n: Self) -> Self {
        let v = self.value.powf(n.value);
        let da = if n.value == 0.0 {
            0.0
        } else {
            n.value * self.value.powf(n.value - 1.0)
        };
        let db = if self.value > 0.0 {
            v * self.value.ln()
        } else {
            0.0
        };
        self.binary(n, v, da, db)
    }
    fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        self.unary(s, 0.5 / s)
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.unary(e, e)
    }
    fn exp2(self) -> Self {
        let e = self.value.exp2();
        self.unary(e, e * std::f64::consts::LN_2)
    }
    fn ln(self) -> Self {
        self.unary(self.value.ln(), 1.0 / self.value)
    }
    fn log(self, base: Self) -> Self {
        self.ln() / base.ln()
    }
    fn log2(self) -> Self {
        self.unary(self.value.log2(), 1.0 / (self.value * std::f64::consts::LN_2))
    }
    fn log10(self) -> Self {
        self.unary(
            self.value.log10(),
            1.0 / (self.value * std::f64::consts::LN_10),
        )
    }
    fn max(self, other: Self) -> Self {
        if other.value > self.value || self.value.is_nan() {
            other
        } else {
            self
        }
    }
    fn min(self, other: Self) -> Self {
        if other.value < self.value || self.value.is_nan() {
            other
        } else {
            self
        }
    }
    #[allow(deprecated)]
    fn abs_sub(self, other: Self) -> Self {
        if self.value <= other.value {
            Var::constant(0.0)
        } else {
            self - other
        }
    }
    fn cbrt(self) -> Self {
        let c = self.value.cbrt();
        self.unary(c, 1.0 / (3.0 * c * c))
    }
    fn hypot(self, other: Self) -> Self {
        (self * self + other * other).sqrt()
    }
    fn sin(self) -> Self {
        self.unary(self.value.sin(), self.value.cos())
    }
    fn cos(self) -> Self {
        self.unary(self.value.cos(), -self.value.sin())
    }
    fn tan(self) -> Self {
        let t = self.value.tan();
        self.unary(t, 1.0 + t * t)
    }
    fn asin(self) -> Self {
        self.unary(
            self.value.asin(),
            1.0 / (1.0 - self.value * self.value).sqrt(),
        )
    }
    fn acos(self) -> Self {
        self.unary(
            self.value.acos(),
            -1.0 / (1.0 - self.value * self.value).sqrt(),
        )
    }
    fn atan(self) -> Self {
        self.unary(self.value.atan(), 1.0 / (1.0 + self.value * self.value))
    }
    fn atan2(self, other: Self) -> Self {
        let (y, x) = (self.value, other.value);
        let r2 = x * x + y * y;
        self.binary(other, y.atan2(x), x / r2, -y / r2)
    }
    fn sin_cos(self) -> (Self, Self) {
        (self.sin(), self.cos())
    }
    fn exp_m1(self) -> Self {
        self.unary(self.value.exp_m1(), self.value.exp())
    }
    fn ln_1p(self) -> Self {
        self.unary(self.value.ln_1p(), 1.0 / (1.0 + self.value))
    }
    fn sinh(self) -> Self {
        self.unary(self.value.sinh(), self.value.cosh())
    }
    fn cosh(self) -> Self {
        self.unary(self.value.cosh(), self.value.sinh())
    }
    fn tanh(self) -> Self {
        let t = self.value.tanh();
        self.unary(t, 1.0 - t * t)
    }
    fn asinh(self) -> Self {
        self.unary(
            self.value.asinh(),
            1.0 / (self.value * self.value + 1.0).sqrt(),
        )
    }
    fn acosh(self) -> Self {
        self.unary(
            self.value.acosh(),
            1.0 / (self.value * self.value - 1.0).sqrt(),
        )
    }
    fn atanh(self) -> Self {
        self.unary(self.value.atanh(), 1.0 / (1.0 - self.value * self.value))
    }
    fn integer_decode(self) -> (u64, i16, i8) {
        self.value.integer_decode()
    }
}

impl Scalar for Var {}

//! Scalar abstraction and forward-mode dual numbers.
//!
//! Every numerical kernel in the crate is written against [`Real`], which is
//! satisfied by `f32`, `f64` and by [`Dual<T>`] for any `T: Real`. Nesting
//! (`Dual<Dual<f64>>`) yields exact second derivatives, which the collocation
//! solver uses to differentiate the costate dynamics.

use std::cmp::Ordering;
use std::fmt;
use std::num::FpCategory;
use std::ops::{
    Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, RemAssign, Sub, SubAssign,
};

use num_traits::{Float, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};

use crate::error::{HjbError, Result};

/// Floating-point scalar accepted by all generic kernels.
pub trait Real:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + fmt::Debug
    + Default
    + Send
    + Sync
    + 'static
{
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + AddAssign
        + SubAssign
        + MulAssign
        + DivAssign
        + fmt::Debug
        + Default
        + Send
        + Sync
        + 'static
{
}

/// Converts an `f64` literal into any [`Real`].
#[inline(always)]
pub fn cst<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("f64 literal representable")
}

/// Primal `f64` value of a (possibly nested dual) scalar.
#[inline(always)]
pub fn val<T: Real>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// First-order dual number `re + eps·ε`, ε² = 0.
#[derive(Clone, Copy, Default)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Real> Dual<T> {
    #[inline(always)]
    pub fn new(re: T, eps: T) -> Self {
        Dual { re, eps }
    }

    #[inline(always)]
    pub fn constant(re: T) -> Self {
        Dual { re, eps: T::zero() }
    }

    #[inline(always)]
    pub fn variable(re: T) -> Self {
        Dual { re, eps: T::one() }
    }

    #[inline(always)]
    fn chain(self, re: T, dre: T) -> Self {
        Dual { re, eps: self.eps * dre }
    }
}

impl<T: fmt::Debug> fmt::Debug for Dual<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}+{:?}ε", self.re, self.eps)
    }
}

impl<T: fmt::Display> fmt::Display for Dual<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}ε", self.re, self.eps)
    }
}

impl<T: Real> PartialEq for Dual<T> {
    fn eq(&self, other: &Self) -> bool {
        self.re == other.re
    }
}

impl<T: Real> PartialOrd for Dual<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.re.partial_cmp(&other.re)
    }
}

impl<T: Real> Add for Dual<T> {
    type Output = Self;
    #[inline(always)]
    fn add(self, o: Self) -> Self {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl<T: Real> Sub for Dual<T> {
    type Output = Self;
    #[inline(always)]
    fn sub(self, o: Self) -> Self {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl<T: Real> Mul for Dual<T> {
    type Output = Self;
    #[inline(always)]
    fn mul(self, o: Self) -> Self {
        Dual::new(self.re * o.re, self.eps * o.re + self.re * o.eps)
    }
}

impl<T: Real> Div for Dual<T> {
    type Output = Self;
    #[inline(always)]
    fn div(self, o: Self) -> Self {
        let inv = T::one() / o.re;
        let q = self.re * inv;
        Dual::new(q, (self.eps - q * o.eps) * inv)
    }
}

impl<T: Real> Rem for Dual<T> {
    type Output = Self;
    fn rem(self, o: Self) -> Self {
        let k = (self.re / o.re).trunc();
        Dual::new(self.re % o.re, self.eps - k * o.eps)
    }
}

impl<T: Real> Neg for Dual<T> {
    type Output = Self;
    #[inline(always)]
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.eps)
    }
}

macro_rules! assign_op {
    ($tr:ident, $m:ident, $op:tt) => {
        impl<T: Real> $tr for Dual<T> {
            #[inline(always)]
            fn $m(&mut self, o: Self) {
                *self = *self $op o;
            }
        }
    };
}

assign_op!(AddAssign, add_assign, +);
assign_op!(SubAssign, sub_assign, -);
assign_op!(MulAssign, mul_assign, *);
assign_op!(DivAssign, div_assign, /);
assign_op!(RemAssign, rem_assign, %);

impl<T: Real> Zero for Dual<T> {
    fn zero() -> Self {
        Dual::constant(T::zero())
    }
    fn is_zero(&self) -> bool {
        self.re.is_zero() && self.eps.is_zero()
    }
}

impl<T: Real> One for Dual<T> {
    fn one() -> Self {
        Dual::constant(T::one())
    }
}

impl<T: Real> Num for Dual<T> {
    type FromStrRadixErr = T::FromStrRadixErr;
    fn from_str_radix(s: &str, radix: u32) -> std::result::Result<Self, Self::FromStrRadixErr> {
        T::from_str_radix(s, radix).map(Dual::constant)
    }
}

impl<T: Real> ToPrimitive for Dual<T> {
    fn to_i64(&self) -> Option<i64> {
        self.re.to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        self.re.to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        self.re.to_f64()
    }
}

impl<T: Real> NumCast for Dual<T> {
    fn from<N: ToPrimitive>(n: N) -> Option<Self> {
        <T as NumCast>::from(n).map(Dual::constant)
    }
}

impl<T: Real> FromPrimitive for Dual<T> {
    fn from_i64(n: i64) -> Option<Self> {
        T::from_i64(n).map(Dual::constant)
    }
    fn from_u64(n: u64) -> Option<Self> {
        T::from_u64(n).map(Dual::constant)
    }
    fn from_f64(n: f64) -> Option<Self> {
        T::from_f64(n).map(Dual::constant)
    }
}

impl<T: Real> Float for Dual<T> {
    fn nan() -> Self {
        Dual::constant(T::nan())
    }
    fn infinity() -> Self {
        Dual::constant(T::infinity())
    }
    fn neg_infinity() -> Self {
        Dual::constant(T::neg_infinity())
    }
    fn neg_zero() -> Self {
        Dual::constant(T::neg_zero())
    }
    fn min_value() -> Self {
        Dual::constant(T::min_value())
    }
    fn min_positive_value() -> Self {
        Dual::constant(T::min_positive_value())
    }
    fn max_value() -> Self {
        Dual::constant(T::max_value())
    }
    fn epsilon() -> Self {
        Dual::constant(T::epsilon())
    }
    fn is_nan(self) -> bool {
        self.re.is_nan() || self.eps.is_nan()
    }
    fn is_infinite(self) -> bool {
        self.re.is_infinite() || self.eps.is_infinite()
    }
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.eps.is_finite()
    }
    fn is_normal(self) -> bool {
        self.re.is_normal()
    }
    fn classify(self) -> FpCategory {
        self.re.classify()
    }
    fn floor(self) -> Self {
        Dual::constant(self.re.floor())
    }
    fn ceil(self) -> Self {
        Dual::constant(self.re.ceil())
    }
    fn round(self) -> Self {
        Dual::constant(self.re.round())
    }
    fn trunc(self) -> Self {
        Dual::constant(self.re.trunc())
    }
    fn fract(self) -> Self {
        Dual::new(self.re.fract(), self.eps)
    }
    fn abs(self) -> Self {
        if self.re < T::zero() {
            -self
        } else {
            self
        }
    }
    fn signum(self) -> Self {
        Dual::constant(self.re.signum())
    }
    fn is_sign_positive(self) -> bool {
        self.re.is_sign_positive()
    }
    fn is_sign_negative(self) -> bool {
        self.re.is_sign_negative()
    }
    fn mul_add(self, a: Self, b: Self) -> Self {
        self * a + b
    }
    fn recip(self) -> Self {
        let r = self.re.recip();
        self.chain(r, -r * r)
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Dual::one();
        }
        let p = self.re.powi(n - 1);
        self.chain(p * self.re, T::from_i32(n).unwrap() * p)
    }
    fn powf(self, n: Self) -> Self {
        let v = self.re.powf(n.re);
        let da = if self.eps.is_zero() {
            T::zero()
        } else {
            self.eps * n.re * self.re.powf(n.re - T::one())
        };
        let db = if n.eps.is_zero() {
            T::zero()
        } else {
            n.eps * v * self.re.ln()
        };
        Dual::new(v, da + db)
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, T::one() / (s + s))
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    fn exp2(self) -> Self {
        let e = self.re.exp2();
        self.chain(e, e * T::from_f64(std::f64::consts::LN_2).unwrap())
    }
    fn ln(self) -> Self {
        self.chain(self.re.ln(), self.re.recip())
    }
    fn log(self, base: Self) -> Self {
        self.ln() / base.ln()
    }
    fn log2(self) -> Self {
        self.ln() / Dual::constant(T::from_f64(std::f64::consts::LN_2).unwrap())
    }
    fn log10(self) -> Self {
        self.ln() / Dual::constant(T::from_f64(std::f64::consts::LN_10).unwrap())
    }
    fn max(self, o: Self) -> Self {
        if o.re > self.re {
            o
        } else {
            self
        }
    }
    fn min(self, o: Self) -> Self {
        if o.re < self.re {
            o
        } else {
            self
        }
    }
    fn abs_sub(self, o: Self) -> Self {
        if self.re > o.re {
            self - o
        } else {
            Dual::zero()
        }
    }
    fn cbrt(self) -> Self {
        let c = self.re.cbrt();
        self.chain(c, T::one() / (T::from_f64(3.0).unwrap() * c * c))
    }
    fn hypot(self, o: Self) -> Self {
        (self * self + o * o).sqrt()
    }
    fn sin(self) -> Self {
        let (s, c) = self.re.sin_cos();
        self.chain(s, c)
    }
    fn cos(self) -> Self {
        let (s, c) = self.re.sin_cos();
        self.chain(c, -s)
    }
    fn tan(self) -> Self {
        let t = self.re.tan();
        self.chain(t, T::one() + t * t)
    }
    fn asin(self) -> Self {
        self.chain(self.re.asin(), (T::one() - self.re * self.re).sqrt().recip())
    }
    fn acos(self) -> Self {
        self.chain(self.re.acos(), -(T::one() - self.re * self.re).sqrt().recip())
    }
    fn atan(self) -> Self {
        self.chain(self.re.atan(), (T::one() + self.re * self.re).recip())
    }
    fn atan2(self, x: Self) -> Self {
        let r2 = x.re * x.re + self.re * self.re;
        Dual::new(
            self.re.atan2(x.re),
            (x.re * self.eps - self.re * x.eps) / r2,
        )
    }
    fn sin_cos(self) -> (Self, Self) {
        let (s, c) = self.re.sin_cos();
        (self.chain(s, c), self.chain(c, -s))
    }
    fn exp_m1(self) -> Self {
        self.chain(self.re.exp_m1(), self.re.exp())
    }
    fn ln_1p(self) -> Self {
        self.chain(self.re.ln_1p(), (T::one() + self.re).recip())
    }
    fn sinh(self) -> Self {
        self.chain(self.re.sinh(), self.re.cosh())
    }
    fn cosh(self) -> Self {
        self.chain(self.re.cosh(), self.re.sinh())
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        self.chain(t, T::one() - t * t)
    }
    fn asinh(self) -> Self {
        self.chain(self.re.asinh(), (self.re * self.re + T::one()).sqrt().recip())
    }
    fn acosh(self) -> Self {
        self.chain(self.re.acosh(), (self.re * self.re - T::one()).sqrt().recip())
    }
    fn atanh(self) -> Self {
        self.chain(self.re.atanh(), (T::one() - self.re * self.re).recip())
    }
    fn integer_decode(self) -> (u64, i16, i8) {
        self.re.integer_decode()
    }
}

/// Value and exact gradient of `g` at `x` by one forward-mode pass per
/// coordinate.
pub fn dual_diff<T, G>(g: G, x: &[T]) -> Result<(T, Vec<T>)>
where
    T: Real,
    G: Fn(&[Dual<T>]) -> Dual<T>,
{
    let mut seeded: Vec<Dual<T>> = x.iter().map(|&v| Dual::constant(v)).collect();
    let mut grad = Vec::with_capacity(x.len());
    let mut value = if x.is_empty() { g(&seeded).re } else { T::zero() };
    for i in 0..x.len() {
        seeded[i].eps = T::one();
        let out = g(&seeded);
        seeded[i].eps = T::zero();
        if !out.is_finite() {
            return Err(HjbError::NonFiniteValue {
                context: "dual_diff",
                at: f64::NAN,
            });
        }
        value = out.re;
        grad.push(out.eps);
    }
    if !value.is_finite() {
        return Err(HjbError::NonFiniteValue {
            context: "dual_diff",
            at: f64::NAN,
        });
    }
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sine_at_zero() {
        let (v, g) = dual_diff(|x| x[0].sin(), &[0.0_f64]).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g, vec![1.0]);
    }

    #[test]
    fn half_squared_norm() {
        let (v, g) = dual_diff(
            |x| (x[0] * x[0] + x[1] * x[1]) * Dual::constant(0.5),
            &[1.0_f64, 2.0],
        )
        .unwrap();
        assert_eq!(v, 2.5);
        assert_eq!(g, vec![1.0, 2.0]);
    }

    #[test]
    fn scalar_lqr_hamiltonian_state_derivative() {
        // H = (x² + u²)/2 + λu at (x, λ, u) = (3, 0.7, -0.2)
        let h = |z: &[Dual<f64>]| {
            let half = Dual::constant(0.5);
            half * (z[0] * z[0] + z[2] * z[2]) + z[1] * z[2]
        };
        let (_, g) = dual_diff(h, &[3.0, 0.7, -0.2]).unwrap();
        assert_relative_eq!(g[0], 3.0);
    }

    #[test]
    fn non_finite_is_reported() {
        let r = dual_diff(|x| x[0].ln(), &[0.0_f64]);
        assert!(matches!(r, Err(HjbError::NonFiniteValue { .. })));
    }

    #[test]
    fn nested_duals_give_second_derivatives() {
        // d²/dx² sin(x)·x at x = 0.3
        let x = Dual::new(Dual::new(0.3_f64, 1.0), Dual::new(1.0, 0.0));
        let y = x.sin() * x;
        let exact = 2.0 * 0.3_f64.cos() - 0.3 * 0.3_f64.sin();
        assert_relative_eq!(y.eps.eps, exact, epsilon = 1e-14);
    }

    #[test]
    fn transcendental_derivatives_match_finite_differences() {
        let fns: Vec<(&str, fn(Dual<f64>) -> Dual<f64>, fn(f64) -> f64)> = vec![
            ("tan", |x| x.tan(), |x| x.tan()),
            ("tanh", |x| x.tanh(), |x| x.tanh()),
            ("exp", |x| x.exp(), |x| x.exp()),
            ("sqrt", |x| x.sqrt(), |x| x.sqrt()),
            ("atan", |x| x.atan(), |x| x.atan()),
            ("powi", |x| x.powi(3), |x| x.powi(3)),
            ("recip", |x| x.recip(), |x| x.recip()),
            ("powf", |x| x.powf(Dual::constant(2.5)), |x| x.powf(2.5)),
        ];
        for (name, fd, ff) in fns {
            let x = 0.7;
            let h = 1e-6;
            let fdiff = (ff(x + h) - ff(x - h)) / (2.0 * h);
            let d = fd(Dual::variable(x)).eps;
            assert!((d - fdiff).abs() < 1e-7 * (1.0 + d.abs()), "{name}: {d} vs {fdiff}");
        }
    }
}

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar arithmetic shared by plain floats and (nested) dual numbers.
///
/// Every structural expression is evaluated generically over `Real`, so the
/// same code path yields values, first derivatives (`Dual<f64>`), and second
/// derivatives (`Dual<Dual<f64>>`).
pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Send
    + Sync
    + 'static
{
    fn cst(c: f64) -> Self;
    /// Innermost real part.
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sigmoid(self) -> Self;
    /// `self` raised to a constant power.
    fn powc(self, p: f64) -> Self;

    fn powr(self, p: Self) -> Self {
        (p * self.ln()).exp()
    }

    fn scale(self, c: f64) -> Self {
        self * Self::cst(c)
    }

    fn shift(self, c: f64) -> Self {
        self + Self::cst(c)
    }

    fn square(self) -> Self {
        self * self
    }

    fn recip(self) -> Self {
        Self::cst(1.0) / self
    }

    fn abs(self) -> Self {
        if self.value() < 0.0 {
            -self
        } else {
            self
        }
    }

    fn is_finite(&self) -> bool;
}

#[inline]
pub(crate) fn sigmoid_f64(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Real for f64 {
    #[inline]
    fn cst(c: f64) -> Self {
        c
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn sigmoid(self) -> Self {
        sigmoid_f64(self)
    }
    #[inline]
    fn powc(self, p: f64) -> Self {
        if p == 2.0 {
            self * self
        } else if p.fract() == 0.0 && p.abs() < 64.0 {
            self.powi(p as i32)
        } else {
            self.powf(p)
        }
    }
    #[inline]
    fn powr(self, p: Self) -> Self {
        self.powf(p)
    }
    #[inline]
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::real::Real;

/// Forward-mode dual number `re + eps·ε` with `ε² = 0`.
///
/// The tangent part carries a single seed direction; several directions are
/// obtained by repeated passes, and higher derivatives by nesting
/// (`Dual<Dual<f64>>` for forward-over-forward Hessians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Real> Dual<T> {
    pub fn new(re: T, eps: T) -> Self {
        Dual { re, eps }
    }

    /// A variable seeded along the differentiation direction.
    pub fn variable(re: T) -> Self {
        Dual {
            re,
            eps: T::cst(1.0),
        }
    }

    pub fn constant(re: T) -> Self {
        Dual {
            re,
            eps: T::cst(0.0),
        }
    }
}

impl<T: Real> Add for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl<T: Real> Sub for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl<T: Real> Mul for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Dual::new(self.re * o.re, self.eps * o.re + self.re * o.eps)
    }
}

impl<T: Real> Div for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re;
        Dual::new(q, (self.eps - q * o.eps) / o.re)
    }
}

impl<T: Real> Neg for Dual<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.eps)
    }
}

impl<T: Real> Real for Dual<T> {
    #[inline]
    fn cst(c: f64) -> Self {
        Dual::constant(T::cst(c))
    }
    #[inline]
    fn value(&self) -> f64 {
        self.re.value()
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, self.eps * e)
    }
    #[inline]
    fn ln(self) -> Self {
        Dual::new(self.re.ln(), self.eps / self.re)
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Dual::new(s, self.eps / s.scale(2.0))
    }
    #[inline]
    fn sigmoid(self) -> Self {
        let s = self.re.sigmoid();
        Dual::new(s, self.eps * s * (T::cst(1.0) - s))
    }
    #[inline]
    fn powc(self, p: f64) -> Self {
        if p == 0.0 {
            return Self::cst(1.0);
        }
        let d = self.re.powc(p - 1.0);
        Dual::new(d * self.re, self.eps * d.scale(p))
    }
    #[inline]
    fn scale(self, c: f64) -> Self {
        Dual::new(self.re.scale(c), self.eps.scale(c))
    }
    #[inline]
    fn shift(self, c: f64) -> Self {
        Dual::new(self.re.shift(c), self.eps)
    }
    #[inline]
    fn is_finite(&self) -> bool {
        self.re.is_finite() && self.eps.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_quotient_rules() {
        let x = Dual::variable(3.0);
        let y = x * x / (x + Dual::cst(1.0));
        // d/dx x^2/(x+1) = (x^2 + 2x)/(x+1)^2
        assert!((y.eps - 15.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let z = Dual::variable(0.0).sigmoid();
        assert_eq!(z.re, 0.5);
        assert_eq!(z.eps, 0.25);
    }

    #[test]
    fn nested_second_derivative() {
        // f(x) = exp(2x), f'' = 4 exp(2x)
        let x = Dual::new(Dual::variable(0.3), Dual::cst(1.0));
        let f = x.scale(2.0).exp();
        assert!((f.eps.eps - 4.0 * (0.6f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn constant_has_zero_tangent() {
        let c: Dual<f64> = Dual::cst(2.5);
        assert_eq!(c.exp().eps, 0.0);
        assert_eq!(c.powc(3.0).eps, 0.0);
    }

    #[test]
    fn integer_power_of_negative_base() {
        let x = Dual::variable(-2.0);
        let y = x.powc(3.0);
        assert_eq!(y.re, -8.0);
        assert_eq!(y.eps, 12.0);
    }
}

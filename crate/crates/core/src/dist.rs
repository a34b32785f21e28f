//! Exogenous noise distributions.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum NoiseDistribution {
    StandardGaussian,
    /// Trapezoid with support `[a, d]`, flat top on `[b, c]`.
    Trapezoidal(f64, f64, f64, f64),
}

impl NoiseDistribution {
    pub fn trapezoidal(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        let t = NoiseDistribution::Trapezoidal(a, b, c, d);
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseDistribution::StandardGaussian => Ok(()),
            NoiseDistribution::Trapezoidal(a, b, c, d) => {
                let finite = [a, b, c, d].iter().all(|v| v.is_finite());
                if finite && a <= b && b <= c && c <= d && a < d {
                    Ok(())
                } else {
                    Err(Error::InvalidDistribution(format!(
                        "trapezoid knots must satisfy a <= b <= c <= d and a < d, got ({a}, {b}, {c}, {d})"
                    )))
                }
            }
        }
    }

    /// Height of the flat top.
    fn height(a: f64, b: f64, c: f64, d: f64) -> f64 {
        2.0 / ((d - a) + (c - b))
    }

    pub fn pdf(&self, u: f64) -> f64 {
        match *self {
            NoiseDistribution::StandardGaussian => (-0.5 * u * u - LN_SQRT_2PI).exp(),
            NoiseDistribution::Trapezoidal(a, b, c, d) => {
                let h = Self::height(a, b, c, d);
                if u < a || u > d {
                    0.0
                } else if u < b {
                    h * (u - a) / (b - a)
                } else if u <= c {
                    h
                } else {
                    h * (d - u) / (d - c)
                }
            }
        }
    }

    /// Log-density, generic so that it can be differentiated. Outside the
    /// support this is `-inf`.
    pub fn log_pdf<T: Real>(&self, u: T) -> T {
        match *self {
            NoiseDistribution::StandardGaussian => (u * u).scale(-0.5).shift(-LN_SQRT_2PI),
            NoiseDistribution::Trapezoidal(a, b, c, d) => {
                let h = Self::height(a, b, c, d).ln();
                let v = u.value();
                if v < a || v > d {
                    T::cst(f64::NEG_INFINITY)
                } else if v < b {
                    u.shift(-a).ln().shift(h - (b - a).ln())
                } else if v <= c {
                    T::cst(h)
                } else {
                    (-u).shift(d).ln().shift(h - (d - c).ln())
                }
            }
        }
    }

    /// Derivative of the log-density. Zero at the trapezoid knots and outside
    /// the support.
    pub fn d_log_pdf(&self, u: f64) -> f64 {
        match *self {
            NoiseDistribution::StandardGaussian => -u,
            NoiseDistribution::Trapezoidal(a, b, c, d) => {
                if u > a && u < b {
                    1.0 / (u - a)
                } else if u > c && u < d {
                    -1.0 / (d - u)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            NoiseDistribution::StandardGaussian => 0.0,
            NoiseDistribution::Trapezoidal(a, b, c, d) => {
                let h = Self::height(a, b, c, d);
                h * ((b - a) * (2.0 * b + a) / 6.0
                    + (c * c - b * b) / 2.0
                    + (d - c) * (2.0 * c + d) / 6.0)
            }
        }
    }

    /// Inverse CDF of the trapezoid; `None` for the Gaussian.
    pub fn quantile(&self, p: f64) -> Option<f64> {
        match *self {
            NoiseDistribution::StandardGaussian => None,
            NoiseDistribution::Trapezoidal(a, b, c, d) => {
                let h = Self::height(a, b, c, d);
                let left = 0.5 * h * (b - a);
                let mid = h * (c - b);
                Some(if p < left {
                    a + (2.0 * p * (b - a) / h).sqrt()
                } else if p < left + mid {
                    b + (p - left) / h
                } else {
                    let q = (1.0 - p).max(0.0);
                    d - (2.0 * q * (d - c) / h).sqrt()
                })
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            NoiseDistribution::StandardGaussian => rng.sample(StandardNormal),
            NoiseDistribution::Trapezoidal(..) => self.quantile(rng.random::<f64>()).unwrap(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Dual;

    const ASCVD_AGE: NoiseDistribution = NoiseDistribution::Trapezoidal(40.0, 40.0, 60.0, 75.0);

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    /// Integrate piecewise between knots so Simpson is exact on each linear piece.
    fn integrate(t: &NoiseDistribution, g: impl Fn(f64) -> f64 + Copy) -> f64 {
        let NoiseDistribution::Trapezoidal(a, b, c, d) = *t else {
            unreachable!()
        };
        let pieces = [(a, b), (b, c), (c, d)];
        pieces
            .iter()
            .filter(|(l, r)| r > l)
            .map(|&(l, r)| simpson(|u| t.pdf(u) * g(u), l, r, 2000))
            .sum()
    }

    #[test]
    fn trapezoid_integrates_to_one() {
        for t in [
            ASCVD_AGE,
            NoiseDistribution::Trapezoidal(0.0, 1.0, 2.0, 3.0),
            NoiseDistribution::Trapezoidal(-1.0, 0.5, 0.5, 4.0),
            NoiseDistribution::Trapezoidal(2.0, 2.0, 5.0, 5.0),
        ] {
            assert!((integrate(&t, |_| 1.0) - 1.0).abs() < 1e-9, "{t:?}");
        }
    }

    #[test]
    fn trapezoid_mean_matches_quadrature() {
        let m = integrate(&ASCVD_AGE, |u| u);
        assert!((ASCVD_AGE.mean() - m).abs() < 1e-9);
        assert!((ASCVD_AGE.mean() - 2975.0 / 55.0).abs() < 1e-12);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let t = NoiseDistribution::Trapezoidal(0.0, 1.0, 2.0, 4.0);
        for &p in &[0.01, 0.2, 0.3, 0.5, 0.74, 0.9, 0.999] {
            let x = t.quantile(p).unwrap();
            let cdf = simpson(|u| t.pdf(u), 0.0, x.min(1.0), 200)
                + if x > 1.0 { simpson(|u| t.pdf(u), 1.0, x.min(2.0), 200) } else { 0.0 }
                + if x > 2.0 { simpson(|u| t.pdf(u), 2.0, x, 200) } else { 0.0 };
            assert!((cdf - p).abs() < 1e-9, "p={p} cdf={cdf}");
        }
    }

    #[test]
    fn log_pdf_derivative_matches_closed_form() {
        let t = NoiseDistribution::Trapezoidal(0.0, 1.0, 2.0, 4.0);
        for &u in &[0.3, 1.5, 3.1] {
            let g = t.log_pdf(Dual::variable(u)).eps;
            assert!((g - t.d_log_pdf(u)).abs() < 1e-12);
            assert!((t.log_pdf(u).exp() - t.pdf(u)).abs() < 1e-12);
        }
        assert_eq!(t.d_log_pdf(1.0), 0.0);
        assert_eq!(t.d_log_pdf(2.0), 0.0);
        assert_eq!(t.log_pdf(-0.1), f64::NEG_INFINITY);
        let g = NoiseDistribution::StandardGaussian;
        assert_eq!(g.log_pdf(Dual::variable(1.5)).eps, -1.5);
    }

    #[test]
    fn degenerate_left_ramp() {
        assert_eq!(ASCVD_AGE.d_log_pdf(40.0), 0.0);
        assert!((ASCVD_AGE.pdf(40.0) - 2.0 / 55.0).abs() < 1e-15);
        assert!(ASCVD_AGE.log_pdf(40.0).is_finite());
        assert_eq!(ASCVD_AGE.quantile(0.0), Some(40.0));
    }

    #[test]
    fn rejects_bad_knots() {
        assert!(NoiseDistribution::trapezoidal(1.0, 0.0, 2.0, 3.0).is_err());
        assert!(NoiseDistribution::trapezoidal(1.0, 1.0, 1.0, 1.0).is_err());
        assert!(NoiseDistribution::trapezoidal(0.0, 0.0, 0.0, 1.0).is_ok());
    }

    #[test]
    fn serde_shape() {
        let s = serde_json::to_string(&ASCVD_AGE).unwrap();
        assert_eq!(s, r#"{"kind":"trapezoidal","params":[40.0,40.0,60.0,75.0]}"#);
        let g: NoiseDistribution = serde_json::from_str(r#"{"kind":"standard_gaussian"}"#).unwrap();
        assert_eq!(g, NoiseDistribution::StandardGaussian);
    }
}

//! Dense polynomials in two actions and the perturbation parameter.
//!
//! Coefficients are complex and stored in a dense table indexed by the
//! exponents `(a, b, c)` of `I₁^a I₂^b t^c`, with `a + b ≤ deg_i` and
//! `c ≤ deg_t`. Differentiation is exact, so gradients and Hessians built
//! from these tables carry no discretisation error.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Largest supported power of `t`.
pub const MAX_DEG_T: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    deg_i: usize,
    deg_t: usize,
    coeffs: Vec<Complex64>,
}

/// One monomial coefficient: exponents of `I₁`, `I₂`, `t` and the complex value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Monomial(pub usize, pub usize, pub usize, pub f64, pub f64);

impl Poly {
    pub fn zeros(deg_i: usize, deg_t: usize) -> Self {
        let n = (deg_i + 1) * (deg_i + 1) * (deg_t + 1);
        Poly {
            deg_i,
            deg_t,
            coeffs: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    /// Builds a polynomial from monomials, sizing the table to fit them.
    pub fn from_monomials(monomials: &[Monomial]) -> Self {
        let deg_i = monomials.iter().map(|m| m.0 + m.1).max().unwrap_or(0);
        let deg_t = monomials.iter().map(|m| m.2).max().unwrap_or(0);
        let mut p = Poly::zeros(deg_i, deg_t);
        for m in monomials {
            *p.coeff_mut(m.0, m.1, m.2) += Complex64::new(m.3, m.4);
        }
        p
    }

    pub fn deg_i(&self) -> usize {
        self.deg_i
    }

    pub fn deg_t(&self) -> usize {
        self.deg_t
    }

    #[inline]
    fn index(&self, a: usize, b: usize, c: usize) -> usize {
        (a * (self.deg_i + 1) + b) * (self.deg_t + 1) + c
    }

    pub fn coeff(&self, a: usize, b: usize, c: usize) -> Complex64 {
        if a + b > self.deg_i || c > self.deg_t {
            return Complex64::new(0.0, 0.0);
        }
        self.coeffs[self.index(a, b, c)]
    }

    pub fn coeff_mut(&mut self, a: usize, b: usize, c: usize) -> &mut Complex64 {
        assert!(a + b <= self.deg_i && c <= self.deg_t, "exponent out of table");
        let i = self.index(a, b, c);
        &mut self.coeffs[i]
    }

    /// Nonzero monomials in `(a, b, c)` lexicographic order.
    pub fn monomials(&self) -> Vec<Monomial> {
        let mut out = Vec::new();
        for a in 0..=self.deg_i {
            for b in 0..=(self.deg_i - a) {
                for c in 0..=self.deg_t {
                    let z = self.coeff(a, b, c);
                    if z.re != 0.0 || z.im != 0.0 {
                        out.push(Monomial(a, b, c, z.re, z.im));
                    }
                }
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|z| z.re == 0.0 && z.im == 0.0)
    }

    pub fn eval(&self, action: [f64; 2], t: f64) -> Complex64 {
        let mut p1 = [1.0f64; 16];
        let mut p2 = [1.0f64; 16];
        let mut pt = [1.0f64; MAX_DEG_T + 1];
        let d = self.deg_i.min(15);
        for j in 1..=d {
            p1[j] = p1[j - 1] * action[0];
            p2[j] = p2[j - 1] * action[1];
        }
        for j in 1..=self.deg_t.min(MAX_DEG_T) {
            pt[j] = pt[j - 1] * t;
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for a in 0..=self.deg_i {
            for b in 0..=(self.deg_i - a) {
                let w = p1[a] * p2[b];
                let base = self.index(a, b, 0);
                for c in 0..=self.deg_t {
                    let z = self.coeffs[base + c];
                    if z.re != 0.0 || z.im != 0.0 {
                        acc += z * (w * pt[c]);
                    }
                }
            }
        }
        acc
    }

    /// Real part of [`Poly::eval`].
    pub fn eval_re(&self, action: [f64; 2], t: f64) -> f64 {
        self.eval(action, t).re
    }

    pub fn d_i1(&self) -> Poly {
        let mut out = Poly::zeros(self.deg_i.saturating_sub(1), self.deg_t);
        for a in 1..=self.deg_i {
            for b in 0..=(self.deg_i - a) {
                for c in 0..=self.deg_t {
                    *out.coeff_mut(a - 1, b, c) = self.coeff(a, b, c) * a as f64;
                }
            }
        }
        out
    }

    pub fn d_i2(&self) -> Poly {
        let mut out = Poly::zeros(self.deg_i.saturating_sub(1), self.deg_t);
        for a in 0..self.deg_i {
            for b in 1..=(self.deg_i - a) {
                for c in 0..=self.deg_t {
                    *out.coeff_mut(a, b - 1, c) = self.coeff(a, b, c) * b as f64;
                }
            }
        }
        out
    }

    pub fn d_t(&self) -> Poly {
        let mut out = Poly::zeros(self.deg_i, self.deg_t.saturating_sub(1));
        for a in 0..=self.deg_i {
            for b in 0..=(self.deg_i - a) {
                for c in 1..=self.deg_t {
                    *out.coeff_mut(a, b, c - 1) = self.coeff(a, b, c) * c as f64;
                }
            }
        }
        out
    }

    /// The coefficient of `t^j` as a polynomial in the actions alone.
    pub fn t_coefficient(&self, j: usize) -> Poly {
        let mut out = Poly::zeros(self.deg_i, 0);
        if j > self.deg_t {
            return out;
        }
        for a in 0..=self.deg_i {
            for b in 0..=(self.deg_i - a) {
                *out.coeff_mut(a, b, 0) = self.coeff(a, b, j);
            }
        }
        out
    }

    pub fn conj(&self) -> Poly {
        Poly {
            deg_i: self.deg_i,
            deg_t: self.deg_t,
            coeffs: self.coeffs.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn scale(&self, s: Complex64) -> Poly {
        Poly {
            deg_i: self.deg_i,
            deg_t: self.deg_t,
            coeffs: self.coeffs.iter().map(|z| z * s).collect(),
        }
    }

    /// Largest coefficient modulus; used as a scale for relative tolerances.
    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `max |self - other|` over coefficients.
    pub fn distance(&self, other: &Poly) -> f64 {
        let deg_i = self.deg_i.max(other.deg_i);
        let deg_t = self.deg_t.max(other.deg_t);
        let mut worst = 0.0f64;
        for a in 0..=deg_i {
            for b in 0..=(deg_i - a) {
                for c in 0..=deg_t {
                    worst = worst.max((self.coeff(a, b, c) - other.coeff(a, b, c)).norm());
                }
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Poly {
        // I1^2 + I2^2 + 0.5 t I1 I2 + i t^2 I2
        Poly::from_monomials(&[
            Monomial(2, 0, 0, 1.0, 0.0),
            Monomial(0, 2, 0, 1.0, 0.0),
            Monomial(1, 1, 1, 0.5, 0.0),
            Monomial(0, 1, 2, 0.0, 1.0),
        ])
    }

    #[test]
    fn evaluates_monomials() {
        let p = sample();
        let z = p.eval([0.3, 0.4], 0.1);
        assert!((z.re - (0.25 + 0.5 * 0.1 * 0.12)).abs() < 1e-15);
        assert!((z.im - 0.01 * 0.4).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let p = sample();
        let (x, t, e) = ([0.37, -0.21], 0.13, 1e-6);
        let fd1 = (p.eval([x[0] + e, x[1]], t) - p.eval([x[0] - e, x[1]], t)) / (2.0 * e);
        let fd2 = (p.eval([x[0], x[1] + e], t) - p.eval([x[0], x[1] - e], t)) / (2.0 * e);
        let fdt = (p.eval(x, t + e) - p.eval(x, t - e)) / (2.0 * e);
        assert!((p.d_i1().eval(x, t) - fd1).norm() < 1e-9);
        assert!((p.d_i2().eval(x, t) - fd2).norm() < 1e-9);
        assert!((p.d_t().eval(x, t) - fdt).norm() < 1e-9);
    }

    #[test]
    fn t_coefficient_extracts_slices() {
        let p = sample();
        let c1 = p.t_coefficient(1);
        assert_eq!(c1.monomials(), vec![Monomial(1, 1, 0, 0.5, 0.0)]);
        assert!(p.t_coefficient(7).is_zero());
    }

    #[test]
    fn monomials_round_trip() {
        let p = sample();
        let q = Poly::from_monomials(&p.monomials());
        assert_eq!(p.distance(&q), 0.0);
    }
}

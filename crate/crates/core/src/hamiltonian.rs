//! Perturbed integrable Hamiltonians in action-angle form.
//!
//! A symbol is a finite Fourier series in the angles whose coefficients are
//! polynomials in the actions and the perturbation parameter:
//!
//! ```text
//! H(θ, I; t) = Σ_k c_k(I, t) · exp(i k·θ)
//! ```
//!
//! Real-valuedness is the Hermitian symmetry `c_{-k} = conj(c_k)`, and the
//! system is integrable at `t = 0` when only `c_0` survives there.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{Monomial, Poly, MAX_DEG_T};

/// Integer wave vector / lattice index.
pub type Wave = [i64; 2];

const HERMITIAN_TOL: f64 = 1e-12;

pub fn wave_norm(k: Wave) -> f64 {
    ((k[0] * k[0] + k[1] * k[1]) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionRect {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl ActionRect {
    pub fn new(lo: [f64; 2], hi: [f64; 2]) -> Result<Self> {
        let r = ActionRect { lo, hi };
        r.validate()?;
        Ok(r)
    }

    /// `[-r, r]²`.
    pub fn centered(r: f64) -> Self {
        ActionRect {
            lo: [-r, -r],
            hi: [r, r],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0..2).all(|i| self.lo[i].is_finite() && self.hi[i].is_finite() && self.lo[i] < self.hi[i]);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("empty action rectangle {:?}..{:?}", self.lo, self.hi)))
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|i| p[i] >= self.lo[i] && p[i] <= self.hi[i])
    }

    pub fn width(&self) -> [f64; 2] {
        [self.hi[0] - self.lo[0], self.hi[1] - self.lo[1]]
    }

    pub fn area(&self) -> f64 {
        let w = self.width();
        w[0] * w[1]
    }
}

/// The constraint `normal · I ≤ offset` (or `<` when strict).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfPlane {
    pub normal: [f64; 2],
    pub offset: f64,
    #[serde(default)]
    pub strict: bool,
}

impl HalfPlane {
    pub fn value(&self, p: [f64; 2]) -> f64 {
        self.normal[0] * p[0] + self.normal[1] * p[1] - self.offset
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let v = self.value(p);
        if self.strict {
            v < 0.0
        } else {
            v <= 0.0
        }
    }

    fn unit_distance(&self, p: [f64; 2]) -> f64 {
        -self.value(p) / (self.normal[0].hypot(self.normal[1]))
    }
}

/// Convex action domain: a rectangle cut by half-planes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub rect: ActionRect,
    #[serde(default)]
    pub cuts: Vec<HalfPlane>,
}

impl Domain {
    pub fn from_rect(rect: ActionRect) -> Self {
        Domain { rect, cuts: Vec::new() }
    }

    pub fn with_cut(mut self, cut: HalfPlane) -> Self {
        self.cuts.push(cut);
        self
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.rect.contains(p) && self.cuts.iter().all(|c| c.contains(p))
    }

    /// Euclidean distance from an interior point to the boundary (0 outside).
    pub fn distance_to_boundary(&self, p: [f64; 2]) -> f64 {
        if !self.contains(p) {
            return 0.0;
        }
        let r = &self.rect;
        let mut d = (p[0] - r.lo[0])
            .min(r.hi[0] - p[0])
            .min(p[1] - r.lo[1])
            .min(r.hi[1] - p[1]);
        for c in &self.cuts {
            d = d.min(c.unit_distance(p));
        }
        d.max(0.0)
    }

    /// Vertices of the domain polygon, counter-clockwise.
    pub fn polygon(&self) -> Vec<[f64; 2]> {
        let r = &self.rect;
        let mut poly = vec![[r.lo[0], r.lo[1]], [r.hi[0], r.lo[1]], [r.hi[0], r.hi[1]], [r.lo[0], r.hi[1]]];
        for cut in &self.cuts {
            let mut next = Vec::with_capacity(poly.len() + 1);
            for i in 0..poly.len() {
                let a = poly[i];
                let b = poly[(i + 1) % poly.len()];
                let (va, vb) = (cut.value(a), cut.value(b));
                if va <= 0.0 {
                    next.push(a);
                }
                if (va < 0.0 && vb > 0.0) || (va > 0.0 && vb < 0.0) {
                    let s = va / (va - vb);
                    next.push([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]);
                }
            }
            poly = next;
            if poly.is_empty() {
                break;
            }
        }
        poly
    }

    pub fn area(&self) -> f64 {
        let p = self.polygon();
        let n = p.len();
        if n < 3 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..n {
            let a = p[i];
            let b = p[(i + 1) % n];
            s += a[0] * b[1] - a[1] * b[0];
        }
        0.5 * s.abs()
    }
}

/// A finite Fourier-polynomial symbol on `T² × ℝ²`, possibly depending on `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierPolySymbol {
    pub label: String,
    terms: BTreeMap<Wave, Poly>,
}

impl FourierPolySymbol {
    pub fn new(label: impl Into<String>) -> Self {
        FourierPolySymbol {
            label: label.into(),
            terms: BTreeMap::new(),
        }
    }

    /// Adds `poly · exp(i k·θ)` to the symbol (summing with an existing term).
    pub fn with_term(mut self, k: Wave, poly: Poly) -> Self {
        self.add_term(k, poly);
        self
    }

    pub fn add_term(&mut self, k: Wave, poly: Poly) {
        let merged = match self.terms.remove(&k) {
            Some(old) => {
                let mut ms = old.monomials();
                ms.extend(poly.monomials());
                Poly::from_monomials(&ms)
            }
            None => poly,
        };
        if !merged.is_zero() {
            self.terms.insert(k, merged);
        }
    }

    pub fn terms(&self) -> &BTreeMap<Wave, Poly> {
        &self.terms
    }

    pub fn term(&self, k: Wave) -> Option<&Poly> {
        self.terms.get(&k)
    }

    pub fn support(&self) -> impl Iterator<Item = Wave> + '_ {
        self.terms.keys().copied()
    }

    /// Largest Euclidean `|k|` over the term support.
    pub fn bandwidth(&self) -> f64 {
        self.terms.keys().map(|&k| wave_norm(k)).fold(0.0, f64::max)
    }

    /// `c_k(I, t)`, zero off the support.
    pub fn coeff(&self, k: Wave, action: [f64; 2], t: f64) -> Complex64 {
        self.terms
            .get(&k)
            .map(|p| p.eval(action, t))
            .unwrap_or_else(|| Complex64::new(0.0, 0.0))
    }

    /// Checks `c_{-k} = conj(c_k)` coefficient by coefficient.
    pub fn check_hermitian(&self) -> Result<()> {
        for (&k, p) in &self.terms {
            let neg = [-k[0], -k[1]];
            let scale = 1.0 + p.max_abs();
            let partner = self.terms.get(&neg);
            let gap = match partner {
                Some(q) => q.distance(&p.conj()),
                None => p.max_abs(),
            };
            if gap > HERMITIAN_TOL * scale {
                return Err(Error::SymmetryViolation(format!(
                    "term k = {:?} is not matched by the conjugate of k = {:?} (gap {:e})",
                    k, neg, gap
                )));
            }
        }
        Ok(())
    }

    /// Complex value of the Fourier sum; real for Hermitian symbols.
    pub fn eval_complex(&self, theta: [f64; 2], action: [f64; 2], t: f64) -> Complex64 {
        self.terms
            .iter()
            .map(|(&k, p)| {
                let phase = k[0] as f64 * theta[0] + k[1] as f64 * theta[1];
                p.eval(action, t) * Complex64::from_polar(1.0, phase)
            })
            .sum()
    }

    /// `H(θ, I; t)`. Fails if the imaginary residue exceeds round-off.
    pub fn eval(&self, theta: [f64; 2], action: [f64; 2], t: f64) -> Result<f64> {
        let mut acc = Complex64::new(0.0, 0.0);
        let mut mag = 0.0;
        for (&k, p) in &self.terms {
            let phase = k[0] as f64 * theta[0] + k[1] as f64 * theta[1];
            let z = p.eval(action, t) * Complex64::from_polar(1.0, phase);
            mag += z.norm();
            acc += z;
        }
        if acc.im.abs() > HERMITIAN_TOL * (1.0 + mag) {
            return Err(Error::SymmetryViolation(format!(
                "imaginary part {:e} at theta = {:?}, I = {:?}, t = {}",
                acc.im, theta, action, t
            )));
        }
        Ok(acc.re)
    }

    /// The symbol after the angle translation `θ ↦ θ + α`.
    pub fn shift_angles(&self, alpha: [f64; 2]) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|(&k, p)| {
                let phase = k[0] as f64 * alpha[0] + k[1] as f64 * alpha[1];
                (k, p.scale(Complex64::from_polar(1.0, phase)))
            })
            .collect();
        FourierPolySymbol {
            label: self.label.clone(),
            terms,
        }
    }
}

/// Real polynomials in `I` derived from the `k = 0` coefficient.
#[derive(Debug, Clone)]
struct IntegrableParts {
    h0: Poly,
    h0_grad: [Poly; 2],
    h0_hess: [Poly; 3],
    qbar: Poly,
    qbar_grad: [Poly; 2],
    qbar_hess: [Poly; 3],
    c0_t2: Poly,
}

impl IntegrableParts {
    fn from_c0(c0: &Poly) -> Self {
        let h0 = c0.t_coefficient(0);
        let qbar = c0.t_coefficient(1);
        let grad = |p: &Poly| [p.d_i1(), p.d_i2()];
        let hess = |p: &Poly| {
            let d1 = p.d_i1();
            [d1.d_i1(), d1.d_i2(), p.d_i2().d_i2()]
        };
        IntegrableParts {
            h0_grad: grad(&h0),
            h0_hess: hess(&h0),
            qbar_grad: grad(&qbar),
            qbar_hess: hess(&qbar),
            c0_t2: c0.t_coefficient(2),
            h0,
            qbar,
        }
    }
}

/// A perturbed integrable Hamiltonian `H(θ, I; t)` on an action domain.
#[derive(Debug, Clone)]
pub struct FourierPolyHamiltonian {
    symbol: FourierPolySymbol,
    domain: Domain,
    parts: IntegrableParts,
    /// `∂_t c_k |_{t=0}` for `k ≠ 0`.
    oscillatory: BTreeMap<Wave, Poly>,
}

impl FourierPolyHamiltonian {
    /// Validates the structural invariants and precomputes derived polynomials.
    pub fn new(symbol: FourierPolySymbol, domain: Domain) -> Result<Self> {
        domain.rect.validate()?;
        if domain.area() <= 0.0 {
            return Err(Error::InvalidHamiltonian("domain has zero area".into()));
        }
        symbol.check_hermitian()?;
        for (&k, p) in symbol.terms() {
            if p.deg_t() > MAX_DEG_T {
                return Err(Error::InvalidHamiltonian(format!(
                    "term {:?} has t-degree {} > {}",
                    k, p.deg_t(), MAX_DEG_T
                )));
            }
            if k != [0, 0] && !p.t_coefficient(0).is_zero() {
                return Err(Error::InvalidHamiltonian(format!(
                    "term {:?} survives at t = 0; the unperturbed system must be integrable",
                    k
                )));
            }
        }
        let zero = Poly::zeros(0, 0);
        let c0 = symbol.term([0, 0]).unwrap_or(&zero);
        let parts = IntegrableParts::from_c0(c0);
        let oscillatory = symbol
            .terms()
            .iter()
            .filter(|(&k, _)| k != [0, 0])
            .map(|(&k, p)| (k, p.t_coefficient(1)))
            .filter(|(_, p)| !p.is_zero())
            .collect();
        Ok(FourierPolyHamiltonian {
            symbol,
            domain,
            parts,
            oscillatory,
        })
    }

    pub fn symbol(&self) -> &FourierPolySymbol {
        &self.symbol
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn label(&self) -> &str {
        &self.symbol.label
    }

    /// Same symbol on a different domain.
    pub fn with_domain(&self, domain: Domain) -> Result<Self> {
        FourierPolyHamiltonian::new(self.symbol.clone(), domain)
    }

    pub fn eval_symbol(&self, theta: [f64; 2], action: [f64; 2], t: f64) -> Result<f64> {
        self.symbol.eval(theta, action, t)
    }

    /// `H⁰(I) = c_0(I, 0)`.
    pub fn h0(&self, action: [f64; 2]) -> f64 {
        self.parts.h0.eval_re(action, 0.0)
    }

    pub fn grad_h0(&self, action: [f64; 2]) -> [f64; 2] {
        let g = &self.parts.h0_grad;
        [g[0].eval_re(action, 0.0), g[1].eval_re(action, 0.0)]
    }

    /// `[∂₁₁, ∂₁₂, ∂₂₂]` of `H⁰`.
    pub fn hess_h0(&self, action: [f64; 2]) -> [f64; 3] {
        let h = &self.parts.h0_hess;
        [h[0].eval_re(action, 0.0), h[1].eval_re(action, 0.0), h[2].eval_re(action, 0.0)]
    }

    /// Angle average of `∂_t H(θ, I; 0)`. Only the `k = 0` term survives the
    /// average, so this is the `t¹` coefficient of `c_0`.
    pub fn angle_average_dt(&self, action: [f64; 2]) -> f64 {
        self.parts.qbar.eval_re(action, 0.0)
    }

    pub fn grad_qbar(&self, action: [f64; 2]) -> [f64; 2] {
        let g = &self.parts.qbar_grad;
        [g[0].eval_re(action, 0.0), g[1].eval_re(action, 0.0)]
    }

    pub fn hess_qbar(&self, action: [f64; 2]) -> [f64; 3] {
        let h = &self.parts.qbar_hess;
        [h[0].eval_re(action, 0.0), h[1].eval_re(action, 0.0), h[2].eval_re(action, 0.0)]
    }

    /// `t²` coefficient of `c_0`, i.e. `½ ∂²_t c_0 |_{t=0}`.
    pub fn c0_t2(&self, action: [f64; 2]) -> f64 {
        self.parts.c0_t2.eval_re(action, 0.0)
    }

    /// Whether the angle average of the perturbation vanishes identically.
    pub fn qbar_is_zero(&self) -> bool {
        self.parts.qbar.is_zero()
    }

    /// `∇_I [H⁰ + t Q̄]`.
    pub fn frequency_map(&self, action: [f64; 2], t: f64) -> [f64; 2] {
        let g0 = self.grad_h0(action);
        let g1 = self.grad_qbar(action);
        [g0[0] + t * g1[0], g0[1] + t * g1[1]]
    }

    /// Hessian `[∂₁₁, ∂₁₂, ∂₂₂]` of `H⁰ + t Q̄`, the Jacobian of the frequency map.
    pub fn frequency_jacobian(&self, action: [f64; 2], t: f64) -> [f64; 3] {
        let a = self.hess_h0(action);
        let b = self.hess_qbar(action);
        [a[0] + t * b[0], a[1] + t * b[1], a[2] + t * b[2]]
    }

    /// `det[∇H⁰; ∇Q̄]`; nonzero exactly where the two gradients are independent.
    pub fn transversality_det(&self, action: [f64; 2]) -> f64 {
        let a = self.grad_h0(action);
        let b = self.grad_qbar(action);
        a[0] * b[1] - a[1] * b[0]
    }

    pub fn hessian_det(&self, action: [f64; 2]) -> f64 {
        let h = self.hess_h0(action);
        h[0] * h[2] - h[1] * h[1]
    }

    /// Oscillatory first-order coefficients `Q̂_k = ∂_t c_k |_{t=0}`, `k ≠ 0`.
    pub fn oscillatory_terms(&self) -> &BTreeMap<Wave, Poly> {
        &self.oscillatory
    }

    pub fn to_document(&self) -> HamiltonianDocument {
        HamiltonianDocument {
            label: self.symbol.label.clone(),
            domain: self.domain.clone(),
            terms: self
                .symbol
                .terms()
                .iter()
                .map(|(&k, p)| TermDocument { k, coeffs: p.monomials() })
                .collect(),
        }
    }

    pub fn from_document(doc: &HamiltonianDocument) -> Result<Self> {
        let mut symbol = FourierPolySymbol::new(doc.label.clone());
        for term in &doc.terms {
            for m in &term.coeffs {
                if !(m.3.is_finite() && m.4.is_finite()) {
                    return Err(Error::InvalidHamiltonian(format!("non-finite coefficient in term {:?}", term.k)));
                }
            }
            symbol.add_term(term.k, Poly::from_monomials(&term.coeffs));
        }
        FourierPolyHamiltonian::new(symbol, doc.domain.clone())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("document serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: HamiltonianDocument =
            serde_json::from_str(text).map_err(|e| Error::InvalidHamiltonian(e.to_string()))?;
        Self::from_document(&doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Serialised form: a list of Fourier terms with monomial coefficient rows
/// `(deg_I₁, deg_I₂, deg_t, re, im)` plus the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianDocument {
    pub label: String,
    pub domain: Domain,
    pub terms: Vec<TermDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermDocument {
    pub k: Wave,
    pub coeffs: Vec<Monomial>,
}

/// `{0.1 ≤ I₂ < I₁ ≤ 1}`: the flat-torus example restricted below the diagonal.
pub fn flat_torus_domain() -> Domain {
    Domain::from_rect(ActionRect {
        lo: [0.1, 0.1],
        hi: [1.0, 1.0],
    })
    .with_cut(HalfPlane {
        normal: [-1.0, 1.0],
        offset: 0.0,
        strict: true,
    })
}

/// The full square `[0.1, 1]²`, diagonal included.
pub fn flat_torus_square() -> Domain {
    Domain::from_rect(ActionRect {
        lo: [0.1, 0.1],
        hi: [1.0, 1.0],
    })
}

/// `H = I₁² + I₂² + coupling · t · cos²θ₁ · I₁ I₂` on the default domain.
///
/// With `cos²θ₁ = 1/2 + e^{2iθ₁}/4 + e^{-2iθ₁}/4` the terms are
/// `c_0 = I₁² + I₂² + (coupling·t/2) I₁I₂` and
/// `c_{(±2,0)} = (coupling·t/4) I₁I₂`.
pub fn builtin_flat_torus(coupling: f64) -> FourierPolyHamiltonian {
    let c0 = Poly::from_monomials(&[
        Monomial(2, 0, 0, 1.0, 0.0),
        Monomial(0, 2, 0, 1.0, 0.0),
        Monomial(1, 1, 1, coupling / 2.0, 0.0),
    ]);
    let osc = Poly::from_monomials(&[Monomial(1, 1, 1, coupling / 4.0, 0.0)]);
    let mut symbol = FourierPolySymbol::new("flat-torus").with_term([0, 0], c0);
    if coupling != 0.0 {
        symbol = symbol.with_term([2, 0], osc.clone()).with_term([-2, 0], osc);
    }
    FourierPolyHamiltonian::new(symbol, flat_torus_domain()).expect("builtin flat torus is valid")
}

/// Numerical angle average over a uniform `n × n` grid (trapezoid rule,
/// exact for trigonometric polynomials of degree below `n`).
pub fn angle_average_quadrature<F: Fn([f64; 2]) -> f64>(f: F, n: usize) -> f64 {
    let step = 2.0 * PI / n as f64;
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += f([i as f64 * step, j as f64 * step]);
        }
    }
    acc / (n * n) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn flat() -> FourierPolyHamiltonian {
        builtin_flat_torus(1.0)
    }

    #[test]
    fn eval_symbol_examples() {
        let h = flat();
        assert!((h.eval_symbol([0.0, 0.0], [0.3, 0.4], 0.0).unwrap() - 0.25).abs() < 1e-15);
        assert!((h.eval_symbol([0.0, 0.0], [0.3, 0.4], 0.01).unwrap() - 0.2512).abs() < 1e-15);
        assert!((h.eval_symbol([FRAC_PI_2, 0.0], [0.3, 0.4], 0.01).unwrap() - 0.25).abs() < 1e-15);
        assert!((h.eval_symbol([0.0, 0.0], [1.0, 1.0], 1.0).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn flat_torus_terms() {
        let h = flat();
        let c = h.symbol().coeff([2, 0], [0.3, 0.4], 0.01);
        assert!((c.re - 0.0003).abs() < 1e-16 && c.im == 0.0);
        for &th in &[[0.0, 0.0], [0.7, 1.9], [3.0, -2.0]] {
            let v = h.eval_symbol(th, [0.45, 0.2], 0.0).unwrap();
            assert!((v - (0.45f64.powi(2) + 0.04)).abs() < 1e-15);
        }
    }

    #[test]
    fn frequency_and_average() {
        let h = flat();
        let w = h.frequency_map([0.3, 0.4], 0.0);
        assert!((w[0] - 0.6).abs() < 1e-15 && (w[1] - 0.8).abs() < 1e-15);
        let w = h.frequency_map([0.3, 0.4], 0.01);
        assert!((w[0] - 0.602).abs() < 1e-15 && (w[1] - 0.8015).abs() < 1e-15);
        assert!((h.angle_average_dt([0.3, 0.4]) - 0.06).abs() < 1e-16);
        assert_eq!(h.angle_average_dt([0.0, 0.4]), 0.0);
    }

    #[test]
    fn determinants() {
        let h = flat();
        assert_eq!(h.transversality_det([0.5, 0.5]), 0.0);
        assert!((h.transversality_det([0.6, 0.3]) - 0.27).abs() < 1e-15);
        assert!((h.transversality_det([0.3, 0.4]) + 0.07).abs() < 1e-15);
        assert!((h.hessian_det([0.2, 0.9]) - 4.0).abs() < 1e-15);

        let degenerate = FourierPolyHamiltonian::new(
            FourierPolySymbol::new("deg").with_term([0, 0], Poly::from_monomials(&[Monomial(2, 0, 0, 1.0, 0.0)])),
            flat_torus_domain(),
        )
        .unwrap();
        assert_eq!(degenerate.hessian_det([0.4, 0.2]), 0.0);

        let cubic = FourierPolyHamiltonian::new(
            FourierPolySymbol::new("cubic").with_term(
                [0, 0],
                Poly::from_monomials(&[
                    Monomial(2, 0, 0, 1.0, 0.0),
                    Monomial(0, 2, 0, 1.0, 0.0),
                    Monomial(3, 0, 0, 1.0, 0.0),
                ]),
            ),
            flat_torus_domain(),
        )
        .unwrap();
        assert!((cubic.hessian_det([0.1, 0.0]) - 5.2).abs() < 1e-14);
    }

    #[test]
    fn constant_h0_has_zero_frequency() {
        let h = FourierPolyHamiltonian::new(
            FourierPolySymbol::new("const").with_term([0, 0], Poly::from_monomials(&[Monomial(0, 0, 0, 3.0, 0.0)])),
            flat_torus_domain(),
        )
        .unwrap();
        assert_eq!(h.frequency_map([0.4, 0.2], 0.0), [0.0, 0.0]);
    }

    #[test]
    fn purely_oscillatory_perturbation_averages_to_zero() {
        let osc = Poly::from_monomials(&[Monomial(1, 0, 1, 0.3, 0.0)]);
        let h = FourierPolyHamiltonian::new(
            FourierPolySymbol::new("osc")
                .with_term([0, 0], Poly::from_monomials(&[Monomial(2, 0, 0, 1.0, 0.0), Monomial(0, 2, 0, 1.0, 0.0)]))
                .with_term([1, 1], osc.clone())
                .with_term([-1, -1], osc),
            flat_torus_domain(),
        )
        .unwrap();
        for &i in &[[0.2, 0.1], [0.9, 0.3]] {
            assert_eq!(h.angle_average_dt(i), 0.0);
        }
    }

    #[test]
    fn rejects_asymmetric_and_non_integrable_terms() {
        let p = Poly::from_monomials(&[Monomial(1, 0, 1, 1.0, 0.0)]);
        let asym = FourierPolySymbol::new("a").with_term([1, 0], p.clone());
        assert!(matches!(
            FourierPolyHamiltonian::new(asym, flat_torus_domain()),
            Err(Error::SymmetryViolation(_))
        ));
        let q = Poly::from_monomials(&[Monomial(1, 0, 0, 1.0, 0.0)]);
        let non_int = FourierPolySymbol::new("b").with_term([1, 0], q.clone()).with_term([-1, 0], q);
        assert!(matches!(
            FourierPolyHamiltonian::new(non_int, flat_torus_domain()),
            Err(Error::InvalidHamiltonian(_))
        ));
    }

    #[test]
    fn document_round_trip_and_loader_checks() {
        let h = flat();
        let back = FourierPolyHamiltonian::from_json(&h.to_json()).unwrap();
        assert_eq!(back.symbol(), h.symbol());
        assert_eq!(back.domain(), h.domain());

        let mut doc = h.to_document();
        doc.terms.retain(|t| t.k != [-2, 0]);
        let text = serde_json::to_string(&doc).unwrap();
        assert!(matches!(FourierPolyHamiltonian::from_json(&text), Err(Error::SymmetryViolation(_))));
    }

    #[test]
    fn domain_geometry() {
        let d = flat_torus_domain();
        assert!((d.area() - 0.405).abs() < 1e-12);
        assert!(d.contains([0.5, 0.2]));
        assert!(!d.contains([0.5, 0.5]));
        assert!(!d.contains([0.3, 0.4]));
        let dist = d.distance_to_boundary([0.8, 0.5]);
        assert!((dist - 0.2).abs() < 1e-12);
        assert!((flat_torus_square().area() - 0.81).abs() < 1e-12);
    }

    #[test]
    fn imaginary_residue_bound_on_grid() {
        let h = flat().with_domain(flat_torus_square()).unwrap();
        let shifted = FourierPolyHamiltonian::new(h.symbol().shift_angles([0.7, 0.0]), flat_torus_square()).unwrap();
        for sym in [h.symbol(), shifted.symbol()] {
            for i in 0..17 {
                for j in 0..17 {
                    for l in 0..17 {
                        let th = [i as f64 * 0.39, j as f64 * 0.39];
                        let act = [0.1 + 0.05 * j as f64, 0.1 + 0.05 * l as f64];
                        let t = 0.02 * l as f64;
                        let z = sym.eval_complex(th, act, t);
                        assert!(z.im.abs() <= 1e-12 * (1.0 + z.re.abs()));
                    }
                }
            }
        }
    }
}

//! Finite-order integrable normal form, quasieigenvalues, the map
//! `η(I) = (K⁰, ∂_t K⁰)` and the first-order homological equation.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diophantine::ActionLattice;
use crate::error::{Error, Result};
use crate::hamiltonian::{wave_norm, Domain, FourierPolyHamiltonian, Wave};
use crate::montecarlo;

/// Order in `t` at which `K⁰` is truncated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    /// `H⁰ + t Q̄`.
    #[default]
    First,
    /// Adds the `t²` Rayleigh–Schrödinger term at the lattice point, which
    /// depends on `h` through the shifted actions `I + h k`.
    Second,
}

/// `K⁰(I, t; h) = H⁰(I) + t Q̄(I)`.
pub fn k0_eval(ham: &FourierPolyHamiltonian, action: [f64; 2], t: f64) -> f64 {
    ham.h0(action) + t * ham.angle_average_dt(action)
}

/// `(K⁰(I, t), ∂_t K⁰(I, t))` at first order.
pub fn eta_map(ham: &FourierPolyHamiltonian, action: [f64; 2], t: f64) -> [f64; 2] {
    [k0_eval(ham, action, t), ham.angle_average_dt(action)]
}

/// The `t²` coefficient of the quasieigenvalue at `I`:
/// `c₀^{(2)}(I) + Σ_k |Q̂_k(I + hk/2)|² / (H⁰(I) − H⁰(I + hk))`.
pub fn second_order_coefficient(ham: &FourierPolyHamiltonian, action: [f64; 2], h: f64) -> Result<f64> {
    let e0 = ham.h0(action);
    let mut acc = ham.c0_t2(action);
    for (&k, q) in ham.oscillatory_terms() {
        let shift = [h * k[0] as f64, h * k[1] as f64];
        let mid = [action[0] + 0.5 * shift[0], action[1] + 0.5 * shift[1]];
        let other = [action[0] + shift[0], action[1] + shift[1]];
        let gap = e0 - ham.h0(other);
        if gap.abs() <= 1e-12 * (1.0 + e0.abs()) {
            return Err(Error::SmallDivisor { k, divisor: gap });
        }
        acc += q.eval(mid, 0.0).norm_sqr() / gap;
    }
    Ok(acc)
}

/// The integrable part of the normal form truncated at a fixed order.
#[derive(Debug, Clone, Copy)]
pub struct NormalForm<'a> {
    ham: &'a FourierPolyHamiltonian,
    order: Order,
}

impl<'a> NormalForm<'a> {
    pub fn new(ham: &'a FourierPolyHamiltonian) -> Self {
        NormalForm { ham, order: Order::First }
    }

    pub fn with_order(ham: &'a FourierPolyHamiltonian, order: Order) -> Self {
        NormalForm { ham, order }
    }

    pub fn hamiltonian(&self) -> &'a FourierPolyHamiltonian {
        self.ham
    }

    pub fn order(&self) -> Order {
        self.order
    }

    /// Coefficients `[c₀, c₁, c₂]` of `K⁰` as a polynomial in `t`.
    pub fn coefficients(&self, action: [f64; 2], h: f64) -> Result<[f64; 3]> {
        let c2 = match self.order {
            Order::First => 0.0,
            Order::Second => second_order_coefficient(self.ham, action, h)?,
        };
        Ok([self.ham.h0(action), self.ham.angle_average_dt(action), c2])
    }

    pub fn k0(&self, action: [f64; 2], t: f64, h: f64) -> Result<f64> {
        let c = self.coefficients(action, h)?;
        Ok(c[0] + t * (c[1] + t * c[2]))
    }

    pub fn quasieigenvalue(&self, lattice: &ActionLattice, m: Wave, t: f64) -> Result<QuasiEigenvalue> {
        let action = lattice.action(m);
        if !self.ham.domain().contains(action) {
            return Err(Error::OutOfDomain { action });
        }
        let coeffs = self.coefficients(action, lattice.h)?;
        Ok(QuasiEigenvalue::from_coefficients(m, action, coeffs, t, lattice.h))
    }

    /// Quasieigenvalues for every lattice point, in lattice order.
    pub fn quasispectrum(&self, lattice: &ActionLattice, t: f64) -> Result<Vec<QuasiEigenvalue>> {
        crate::exec::try_map_slice(&lattice.points, |&m| self.quasieigenvalue(lattice, m, t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuasiEigenvalue {
    pub m: Wave,
    pub action: [f64; 2],
    pub mu: f64,
    pub dmu_dt: f64,
    pub t: f64,
    pub h: f64,
    /// `μ_m` as a polynomial `c₀ + c₁ t + c₂ t²`.
    pub coeffs: [f64; 3],
}

impl QuasiEigenvalue {
    pub fn from_coefficients(m: Wave, action: [f64; 2], coeffs: [f64; 3], t: f64, h: f64) -> Self {
        QuasiEigenvalue {
            m,
            action,
            mu: coeffs[0] + t * (coeffs[1] + t * coeffs[2]),
            dmu_dt: coeffs[1] + 2.0 * t * coeffs[2],
            t,
            h,
            coeffs,
        }
    }

    /// `μ_m` at another value of `t`.
    pub fn mu_at(&self, t: f64) -> f64 {
        self.coeffs[0] + t * (self.coeffs[1] + t * self.coeffs[2])
    }
}

pub fn write_quasispectrum_csv(path: &Path, rows: &[QuasiEigenvalue]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "m1,m2,I1,I2,t,h,mu,dmu_dt")?;
    for q in rows {
        writeln!(w, "{},{},{},{},{},{},{},{}", q.m[0], q.m[1], q.action[0], q.action[1], q.t, q.h, q.mu, q.dmu_dt)?;
    }
    w.flush()?;
    Ok(())
}

/// Empirical constants with `G₁|Δη| ≤ |ΔI| ≤ G₂|Δη|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BilipschitzConstants {
    pub g1: f64,
    pub g2: f64,
    /// Pair attaining the smallest sampled ratio `|ΔI|/|Δη|`.
    pub min_pair: [[f64; 2]; 2],
    /// Pair attaining the largest sampled ratio.
    pub max_pair: [[f64; 2]; 2],
    /// Extremes of `1/σ_max` and `1/σ_min` of the Jacobian of `η` over a grid.
    pub local: [f64; 2],
    pub pairs: usize,
}

/// Singular values `(σ_min, σ_max)` of a general 2×2 matrix `[[a, b], [c, d]]`.
pub fn singular_values_2x2(a: f64, b: f64, c: f64, d: f64) -> (f64, f64) {
    let s1 = a * a + b * b + c * c + d * d;
    let det = (a * d - b * c).abs();
    let disc = (s1 * s1 - 4.0 * det * det).max(0.0).sqrt();
    let smax = (0.5 * (s1 + disc)).sqrt();
    let smin = if smax > 0.0 { det / smax } else { 0.0 };
    (smin, smax)
}

fn eta_jacobian(ham: &FourierPolyHamiltonian, action: [f64; 2], t: f64) -> (f64, f64) {
    let g0 = ham.grad_h0(action);
    let g1 = ham.grad_qbar(action);
    singular_values_2x2(g0[0] + t * g1[0], g0[1] + t * g1[1], g1[0], g1[1])
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Grid nodes `lo + i·(hi − lo)/n` inside the domain.
fn domain_nodes(domain: &Domain, n: usize) -> Vec<[f64; 2]> {
    let r = domain.rect;
    let w = r.width();
    let mut out = Vec::new();
    for i in 0..=n {
        for j in 0..=n {
            let p = [r.lo[0] + w[0] * i as f64 / n as f64, r.lo[1] + w[1] * j as f64 / n as f64];
            if domain.contains(p) {
                out.push(p);
            }
        }
    }
    out
}

/// Looks for distinct grid nodes with coincident `η`. Returns the first such
/// pair in sorted order.
pub fn find_eta_coincidence(ham: &FourierPolyHamiltonian, domain: &Domain, t: f64, n: usize) -> Option<([f64; 2], [f64; 2])> {
    let mut pts: Vec<([f64; 2], [f64; 2])> = domain_nodes(domain, n).into_iter().map(|p| (eta_map(ham, p, t), p)).collect();
    pts.sort_by(|a, b| a.0[0].total_cmp(&b.0[0]).then(a.0[1].total_cmp(&b.0[1])));
    let scale = pts.iter().map(|(e, _)| e[0].abs().max(e[1].abs())).fold(1.0, f64::max);
    let tol = 1e-12 * scale;
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            if pts[j].0[0] - pts[i].0[0] > tol {
                break;
            }
            if (pts[j].0[1] - pts[i].0[1]).abs() <= tol && dist(pts[i].1, pts[j].1) > 1e-9 {
                let (a, b) = if pts[i].1 < pts[j].1 { (pts[i].1, pts[j].1) } else { (pts[j].1, pts[i].1) };
                return Some((a, b));
            }
        }
    }
    None
}

/// Estimates `(G₁, G₂)` on `domain` from `n_pairs` random pairs combined
/// with the Jacobian singular values on a grid.
///
/// Fails with [`Error::SingularEta`] when `η` identifies two distinct points.
pub fn bilipschitz_constants(ham: &FourierPolyHamiltonian, domain: &Domain, t: f64, n_pairs: usize, seed: u64) -> Result<BilipschitzConstants> {
    if n_pairs < 1000 {
        return Err(Error::InsufficientData { needed: 1000, got: n_pairs });
    }
    if let Some((a, b)) = find_eta_coincidence(ham, domain, t, 90) {
        return Err(Error::SingularEta { a, b });
    }
    let r = domain.rect;
    let mut rng = montecarlo::stream(seed, 0);
    let mut draw = || loop {
        let p = [rng.gen_range(r.lo[0]..r.hi[0]), rng.gen_range(r.lo[1]..r.hi[1])];
        if domain.contains(p) {
            return p;
        }
    };
    let mut lo = (f64::INFINITY, [[0.0; 2]; 2]);
    let mut hi = (0.0f64, [[0.0; 2]; 2]);
    for _ in 0..n_pairs {
        let (a, b) = (draw(), draw());
        let di = dist(a, b);
        if di == 0.0 {
            continue;
        }
        let de = dist(eta_map(ham, a, t), eta_map(ham, b, t));
        if de <= 1e-14 * di {
            return Err(Error::SingularEta { a, b });
        }
        let ratio = di / de;
        if ratio < lo.0 {
            lo = (ratio, [a, b]);
        }
        if ratio > hi.0 {
            hi = (ratio, [a, b]);
        }
    }
    let mut local = [f64::INFINITY, 0.0f64];
    for p in domain_nodes(domain, 64) {
        let (smin, smax) = eta_jacobian(ham, p, t);
        if smin <= 0.0 {
            return Err(Error::SingularEta { a: p, b: p });
        }
        local[0] = local[0].min(1.0 / smax);
        local[1] = local[1].max(1.0 / smin);
    }
    Ok(BilipschitzConstants {
        g1: lo.0.min(local[0]),
        g2: hi.0.max(local[1]),
        min_pair: lo.1,
        max_pair: hi.1,
        local,
        pairs: n_pairs,
    })
}

/// First-order generating function `S(θ, I) = Σ_k s_k e^{i k·θ}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomologicalSolution {
    pub action: [f64; 2],
    pub coeffs: BTreeMap<Wave, Complex64>,
    /// Smallest `|⟨ω, k⟩|` encountered (`∞` when no term is present).
    pub min_divisor: f64,
}

impl HomologicalSolution {
    /// `ω · ∂_θ S` at `θ`.
    pub fn transport(&self, omega: [f64; 2], theta: [f64; 2]) -> f64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (&k, &s) in &self.coeffs {
            let pairing = k[0] as f64 * omega[0] + k[1] as f64 * omega[1];
            let phase = k[0] as f64 * theta[0] + k[1] as f64 * theta[1];
            acc += s * Complex64::new(0.0, pairing) * Complex64::from_polar(1.0, phase);
        }
        acc.re
    }
}

pub const DEFAULT_DIVISOR_TOL: f64 = 1e-6;

/// Solves `ω · ∂_θ S = Q − Q̄` for the Fourier modes `0 < |k| ≤ k_trunc`
/// of `Q = ∂_t H|_{t=0}` with `s_k = Q̂_k / (i⟨ω, k⟩)`, and checks the
/// identity on a 128² angle grid.
pub fn homological_solve(ham: &FourierPolyHamiltonian, action: [f64; 2], k_trunc: f64, divisor_tol: f64) -> Result<HomologicalSolution> {
    let omega = ham.frequency_map(action, 0.0);
    let mut coeffs = BTreeMap::new();
    let mut min_divisor = f64::INFINITY;
    for (&k, q) in ham.oscillatory_terms() {
        if wave_norm(k) > k_trunc {
            continue;
        }
        let divisor = k[0] as f64 * omega[0] + k[1] as f64 * omega[1];
        if divisor.abs() < divisor_tol {
            return Err(Error::SmallDivisor { k, divisor });
        }
        min_divisor = min_divisor.min(divisor.abs());
        coeffs.insert(k, q.eval(action, 0.0) / Complex64::new(0.0, divisor));
    }
    let sol = HomologicalSolution { action, coeffs, min_divisor };
    let residual = homological_residual(ham, &sol, k_trunc, 128);
    if residual > 1e-8 {
        return Err(Error::SolverFailure(format!("homological residual {residual:e} exceeds 1e-8")));
    }
    Ok(sol)
}

/// `sup_θ |ω·∂_θS − (Q − Q̄)|` over an `n × n` angle grid, where `Q` keeps
/// the modes with `|k| ≤ k_trunc`.
pub fn homological_residual(ham: &FourierPolyHamiltonian, sol: &HomologicalSolution, k_trunc: f64, n: usize) -> f64 {
    let omega = ham.frequency_map(sol.action, 0.0);
    let q: Vec<(Wave, Complex64)> = ham
        .oscillatory_terms()
        .iter()
        .filter(|(&k, _)| wave_norm(k) <= k_trunc)
        .map(|(&k, p)| (k, p.eval(sol.action, 0.0)))
        .collect();
    let step = 2.0 * PI / n as f64;
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let theta = [i as f64 * step, j as f64 * step];
            let osc: f64 = q
                .iter()
                .map(|(k, c)| (c * Complex64::from_polar(1.0, k[0] as f64 * theta[0] + k[1] as f64 * theta[1])).re)
                .sum();
            worst = worst.max((sol.transport(omega, theta) - osc).abs());
        }
    }
    worst
}

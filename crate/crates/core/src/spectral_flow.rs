//! Spectral-flow statistics of the quasieigenvalues as `t` varies: spacing
//! audits, crossing sets, the sets `A_m ⊇ B_m` and the good-parameter counts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diophantine::{index_set_mask, nonresonant_action_set, ActionLattice, DiophantineParams};
use crate::error::{Error, Result};
use crate::exec;
use crate::hamiltonian::{FourierPolyHamiltonian, Wave};
use crate::montecarlo;
use crate::normal_form::{NormalForm, Order};

/// A finite union of intervals inside a fixed range `(lo, hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TSubset {
    range: [f64; 2],
    intervals: Vec<[f64; 2]>,
}

impl TSubset {
    pub fn empty(range: [f64; 2]) -> Self {
        TSubset { range, intervals: Vec::new() }
    }

    pub fn full(range: [f64; 2]) -> Self {
        TSubset {
            range,
            intervals: vec![range],
        }
    }

    /// Clips to the range, sorts and merges overlapping or touching intervals.
    pub fn from_intervals(range: [f64; 2], raw: impl IntoIterator<Item = [f64; 2]>) -> Self {
        let mut v: Vec<[f64; 2]> = raw
            .into_iter()
            .map(|[a, b]| [a.max(range[0]), b.min(range[1])])
            .filter(|[a, b]| b > a)
            .collect();
        v.sort_by(|x, y| x[0].total_cmp(&y[0]));
        let mut out: Vec<[f64; 2]> = Vec::with_capacity(v.len());
        for iv in v {
            match out.last_mut() {
                Some(last) if iv[0] <= last[1] => last[1] = last[1].max(iv[1]),
                _ => out.push(iv),
            }
        }
        TSubset { range, intervals: out }
    }

    pub fn range(&self) -> [f64; 2] {
        self.range
    }

    pub fn intervals(&self) -> &[[f64; 2]] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|iv| iv[1] - iv[0]).sum()
    }

    pub fn contains(&self, t: f64) -> bool {
        let i = self.intervals.partition_point(|iv| iv[1] < t);
        i < self.intervals.len() && self.intervals[i][0] <= t
    }

    pub fn union(&self, other: &TSubset) -> TSubset {
        TSubset::from_intervals(self.range, self.intervals.iter().chain(&other.intervals).copied())
    }

    pub fn intersection(&self, other: &TSubset) -> TSubset {
        let (a, b) = (&self.intervals, &other.intervals);
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < a.len() && j < b.len() {
            let lo = a[i][0].max(b[j][0]);
            let hi = a[i][1].min(b[j][1]);
            if hi > lo {
                out.push([lo, hi]);
            }
            if a[i][1] < b[j][1] {
                i += 1;
            } else {
                j += 1;
            }
        }
        TSubset {
            range: self.range,
            intervals: out,
        }
    }

    pub fn complement(&self) -> TSubset {
        let mut out = Vec::with_capacity(self.intervals.len() + 1);
        let mut cursor = self.range[0];
        for iv in &self.intervals {
            if iv[0] > cursor {
                out.push([cursor, iv[0]]);
            }
            cursor = cursor.max(iv[1]);
        }
        if self.range[1] > cursor {
            out.push([cursor, self.range[1]]);
        }
        TSubset {
            range: self.range,
            intervals: out,
        }
    }

    pub fn difference(&self, other: &TSubset) -> TSubset {
        self.intersection(&other.complement())
    }

    /// The `q`-quantile point by measure, for `q ∈ [0, 1]`.
    pub fn point_at_fraction(&self, q: f64) -> Option<f64> {
        let total = self.measure();
        if total <= 0.0 {
            return None;
        }
        let mut left = q.clamp(0.0, 1.0) * total;
        for iv in &self.intervals {
            let len = iv[1] - iv[0];
            if left <= len {
                return Some(iv[0] + left);
            }
            left -= len;
        }
        self.intervals.last().map(|iv| iv[1])
    }
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    // a t² + b t + c = 0
    if a == 0.0 {
        return if b == 0.0 { Vec::new() } else { vec![-c / b] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        return vec![0.0];
    }
    vec![q / a, c / q]
}

/// `{t ∈ range : |d₀ + d₁ t + d₂ t²| < eps}` with exact root solves.
pub fn polynomial_band(diff: [f64; 3], eps: f64, range: [f64; 2]) -> TSubset {
    let p = |t: f64| diff[0] + t * (diff[1] + t * diff[2]);
    if diff[2] == 0.0 && diff[1] != 0.0 {
        let a = (-eps - diff[0]) / diff[1];
        let b = (eps - diff[0]) / diff[1];
        return TSubset::from_intervals(range, [[a.min(b), a.max(b)]]);
    }
    let mut cuts = vec![range[0], range[1]];
    for shift in [eps, -eps] {
        cuts.extend(
            quadratic_roots(diff[2], diff[1], diff[0] - shift)
                .into_iter()
                .filter(|&r| r > range[0] && r < range[1]),
        );
    }
    cuts.sort_by(f64::total_cmp);
    let pieces = cuts.windows(2).filter(|w| w[1] > w[0] && p(0.5 * (w[0] + w[1])).abs() < eps).map(|w| [w[0], w[1]]);
    TSubset::from_intervals(range, pieces.collect::<Vec<_>>())
}

fn coeff_diff(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn is_degenerate(d: [f64; 3], scale: f64) -> bool {
    let tol = 1e-14 * scale.max(1.0);
    d.iter().all(|x| x.abs() <= tol)
}

/// `C_{m,n} = {t ∈ (0, t₀) : |μ_m(t) − μ_n(t)| < h^γ}`.
pub fn crossing_set(nf: &NormalForm, lattice: &ActionLattice, m: Wave, n: Wave, gamma: f64, t0: f64) -> Result<TSubset> {
    if m == n {
        return Err(Error::Precondition(format!("crossing set needs distinct indices, got {m:?} twice")));
    }
    let a = nf.quasieigenvalue(lattice, m, 0.0)?.coeffs;
    let b = nf.quasieigenvalue(lattice, n, 0.0)?.coeffs;
    let d = coeff_diff(a, b);
    if is_degenerate(d, a[0].abs()) {
        return Err(Error::DegeneratePair { m, n });
    }
    Ok(polynomial_band(d, lattice.h.powf(gamma), [0.0, t0]))
}

/// `S = sup ‖∇²K₀(I; t)‖` over grid nodes of the domain and `t ∈ [0, t₀]`.
///
/// The Hessian is affine in `t`, so its norm is maximal at an endpoint.
pub fn hessian_sup(ham: &FourierPolyHamiltonian, t0: f64, n: usize) -> f64 {
    let d = ham.domain();
    let r = d.rect;
    let w = r.width();
    let mut sup = 0.0f64;
    for i in 0..=n {
        for j in 0..=n {
            let p = [r.lo[0] + w[0] * i as f64 / n as f64, r.lo[1] + w[1] * j as f64 / n as f64];
            if !d.contains(p) {
                continue;
            }
            for t in [0.0, t0] {
                let h = ham.frequency_jacobian(p, t);
                let mean = 0.5 * (h[0] + h[2]);
                let rad = (0.25 * (h[0] - h[2]).powi(2) + h[1] * h[1]).sqrt();
                sup = sup.max(mean.abs() + rad);
            }
        }
    }
    sup
}

/// Spacing-audit constants `C₁ = (κ/(2S))^{1/4}`, `C₂ = √(κS/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditConstants {
    pub s: f64,
    pub kappa: f64,
    pub c1: f64,
    pub c2: f64,
}

impl AuditConstants {
    pub fn derive(ham: &FourierPolyHamiltonian, kappa: f64, t0: f64) -> Self {
        Self::from_s(hessian_sup(ham, t0, 64), kappa)
    }

    pub fn from_s(s: f64, kappa: f64) -> Self {
        AuditConstants {
            s,
            kappa,
            c1: (kappa / (2.0 * s)).powf(0.25),
            c2: (kappa * s / 2.0).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpacingViolation {
    pub m: Wave,
    pub n: Wave,
    pub t: f64,
    pub h: f64,
    pub gap: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacingAudit {
    pub t: f64,
    pub h: f64,
    pub pairs: usize,
    pub violations: Vec<SpacingViolation>,
    /// `min |μ_m − μ_n| / h^{3/2}` over audited pairs (`∞` when none).
    pub min_ratio: f64,
    /// `min |∂_tμ_m − ∂_tμ_n| / h^{3/4}` over audited pairs.
    pub min_speed: f64,
}

/// Audits `|μ_m − μ_n| ≥ C₂ h^{3/2}` over ordered pairs with `n ∈ M_h(t)`,
/// `m ≠ n` in the domain and `|I_m − I_n| ≤ C₁ h^{3/4}`.
pub fn spacing_audit(nf: &NormalForm, lattice: &ActionLattice, in_mh: &[bool], t: f64, c1: f64, c2: f64) -> Result<SpacingAudit> {
    let h = lattice.h;
    let radius = c1 * h.powf(0.75);
    let threshold = c2 * h.powf(1.5);
    let reach = (radius / h).floor() as i64;
    let q = nf.quasispectrum(lattice, t)?;
    let mut pairs = 0;
    let mut violations = Vec::new();
    let (mut min_ratio, mut min_speed) = (f64::INFINITY, f64::INFINITY);
    for (ni, &n) in lattice.points.iter().enumerate() {
        if !in_mh[ni] {
            continue;
        }
        for d1 in -reach..=reach {
            for d2 in -reach..=reach {
                if (d1, d2) == (0, 0) || h * ((d1 * d1 + d2 * d2) as f64).sqrt() > radius {
                    continue;
                }
                let m = [n[0] + d1, n[1] + d2];
                let Some(mi) = lattice.position(m) else { continue };
                pairs += 1;
                let gap = (q[mi].mu - q[ni].mu).abs();
                min_ratio = min_ratio.min(gap / h.powf(1.5));
                min_speed = min_speed.min((q[mi].dmu_dt - q[ni].dmu_dt).abs() / h.powf(0.75));
                if gap < threshold {
                    violations.push(SpacingViolation { m, n, t, h, gap, threshold });
                }
            }
        }
    }
    violations.sort_by_key(|v| (v.m, v.n));
    Ok(SpacingAudit {
        t,
        h,
        pairs,
        violations,
        min_ratio,
        min_speed,
    })
}

pub fn write_violations_csv(path: &Path, audits: &[SpacingAudit]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "m1,m2,n1,n2,t,h,gap,threshold")?;
    for a in audits {
        for v in &a.violations {
            writeln!(w, "{},{},{},{},{},{},{},{}", v.m[0], v.m[1], v.n[0], v.n[1], v.t, v.h, v.gap, v.threshold)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub gamma: f64,
    pub t0: f64,
    /// Number of cells of the uniform `t` grid on `(0, t₀)`.
    pub n_t: usize,
    pub h_list: Vec<f64>,
    /// Overrides for the derived spacing constants.
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub eps_c: f64,
    /// Tube radius `L` in units of `h`.
    pub tube: f64,
    /// `E_κ` grid spacing is `L h_min / grid_factor`.
    pub grid_factor: f64,
    pub offset: [f64; 2],
    pub diophantine: DiophantineParams,
    pub triples: usize,
    pub seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            gamma: 4.0,
            t0: 0.2,
            n_t: 64,
            h_list: vec![1.0 / 16.0, 1.0 / 32.0],
            c1: None,
            c2: None,
            eps_c: 1.0,
            tube: 1.0,
            grid_factor: 4.0,
            offset: [0.0, 0.0],
            diophantine: DiophantineParams::new(0.2),
            triples: 200,
            seed: 0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        self.diophantine.validate()?;
        if !(self.gamma > 3.5) {
            return Err(Error::Config(format!("gamma must exceed 7/2, got {}", self.gamma)));
        }
        if !(self.t0 > 0.0) || self.n_t == 0 {
            return Err(Error::Config("t grid must be a nonempty subset of (0, t0] with t0 > 0".into()));
        }
        if self.h_list.is_empty() || self.h_list.iter().any(|&h| !(h > 0.0)) {
            return Err(Error::Config("h_list must hold positive values".into()));
        }
        if self.h_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("h_list must be strictly decreasing".into()));
        }
        if !(self.grid_factor >= 4.0) {
            return Err(Error::Config("grid_factor must be at least 4".into()));
        }
        if !(self.tube > 0.0 && self.eps_c > 0.0) {
            return Err(Error::Config("tube and eps_c must be positive".into()));
        }
        Ok(())
    }

    pub fn h_min(&self) -> f64 {
        self.h_list.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn dt(&self) -> f64 {
        self.t0 / self.n_t as f64
    }

    /// Membership in `M_h(t)` moves on `O(h)` scales of `t`, so the grid must
    /// resolve `h_min / 4`.
    pub fn check_t_resolution(&self) -> Result<()> {
        if self.dt() > self.h_min() / 4.0 + 1e-15 {
            return Err(Error::Precondition(format!(
                "t spacing {} exceeds h_min/4 = {}; raise n_t",
                self.dt(),
                self.h_min() / 4.0
            )));
        }
        Ok(())
    }

    /// Cell centres `(i − ½) t₀ / n_t`.
    pub fn t_grid(&self) -> Vec<f64> {
        (1..=self.n_t).map(|i| (i as f64 - 0.5) * self.dt()).collect()
    }

    pub fn epsilon(&self, h: f64) -> f64 {
        self.eps_c * h.powf(self.gamma / 2.0 - 1.75)
    }
}

/// Membership of every lattice point in `M_h(t)` along the `t` grid.
#[derive(Debug, Clone)]
pub struct FlowLevel {
    pub h: f64,
    pub lattice: ActionLattice,
    /// `μ_m` coefficients in `t`.
    pub coeffs: Vec<[f64; 3]>,
    /// `membership[i][j]`: lattice point `j` is in `M_h(t_i)`.
    pub membership: Vec<Vec<bool>>,
}

/// Builds the `M_h(t)` memberships for every `h` in the list, computing each
/// `E_κ(t)` once on the grid required by the smallest `h`.
pub fn build_levels(ham: &FourierPolyHamiltonian, cfg: &FlowConfig, order: Order) -> Result<Vec<FlowLevel>> {
    cfg.validate()?;
    let nf = NormalForm::with_order(ham, order);
    let mut levels = Vec::with_capacity(cfg.h_list.len());
    for &h in &cfg.h_list {
        let lattice = ActionLattice::new(h, cfg.offset, ham.domain())?;
        let coeffs = lattice
            .points
            .iter()
            .map(|&m| Ok(nf.quasieigenvalue(&lattice, m, 0.0)?.coeffs))
            .collect::<Result<Vec<_>>>()?;
        levels.push(FlowLevel {
            h,
            lattice,
            coeffs,
            membership: Vec::with_capacity(cfg.n_t),
        });
    }
    let spacing = cfg.tube * cfg.h_min() / cfg.grid_factor;
    for t in cfg.t_grid() {
        let set = nonresonant_action_set(ham, t, &cfg.diophantine, spacing)?;
        for level in &mut levels {
            level.membership.push(index_set_mask(&level.lattice, &set, cfg.tube)?);
        }
    }
    Ok(levels)
}

/// `A_m` and `B_m` for one lattice point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbSets {
    pub m: Wave,
    pub a: TSubset,
    pub b: TSubset,
}

impl AbSets {
    /// `meas(B) / meas(A)`, or 1 when `A` is empty.
    pub fn ratio(&self) -> f64 {
        let a = self.a.measure();
        if a > 0.0 {
            self.b.measure() / a
        } else {
            1.0
        }
    }
}

impl FlowLevel {
    /// Lattice indices `n` whose quasieigenvalue can come within `eps` of
    /// `μ_j` somewhere on `[0, t₀]`.
    fn candidates(&self, j: usize, eps: f64, t0: f64) -> impl Iterator<Item = usize> + '_ {
        let c = self.coeffs[j];
        (0..self.coeffs.len()).filter(move |&k| {
            if k == j {
                return false;
            }
            let d = coeff_diff(c, self.coeffs[k]);
            d[0].abs() < eps + t0 * d[1].abs() + t0 * t0 * d[2].abs()
        })
    }

    /// `C_{m,n}` for lattice positions `j` and `k`; degenerate pairs cover all of `(0, t₀)`.
    pub fn crossing(&self, j: usize, k: usize, gamma: f64, t0: f64) -> TSubset {
        let d = coeff_diff(self.coeffs[j], self.coeffs[k]);
        if is_degenerate(d, self.coeffs[j][0].abs()) {
            return TSubset::full([0.0, t0]);
        }
        polynomial_band(d, self.h.powf(gamma), [0.0, t0])
    }

    pub fn a_set(&self, j: usize, cfg: &FlowConfig) -> TSubset {
        let dt = cfg.dt();
        TSubset::from_intervals(
            [0.0, cfg.t0],
            self.membership
                .iter()
                .enumerate()
                .filter(|(_, row)| row[j])
                .map(|(i, _)| [i as f64 * dt, (i + 1) as f64 * dt])
                .collect::<Vec<_>>(),
        )
    }

    pub fn ab_sets(&self, j: usize, cfg: &FlowConfig) -> AbSets {
        let a = self.a_set(j, cfg);
        let eps = self.h.powf(cfg.gamma);
        let mut b = a.clone();
        if !a.is_empty() {
            for k in self.candidates(j, eps, cfg.t0) {
                b = b.difference(&self.crossing(j, k, cfg.gamma, cfg.t0));
                if b.is_empty() {
                    break;
                }
            }
        }
        AbSets {
            m: self.lattice.points[j],
            a,
            b,
        }
    }

    pub fn all_ab_sets(&self, cfg: &FlowConfig) -> Vec<AbSets> {
        exec::map_range(self.lattice.len(), |j| self.ab_sets(j, cfg))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub h: f64,
    pub epsilon: f64,
    pub t: Vec<f64>,
    pub n1: Vec<usize>,
    pub n2: Vec<usize>,
    pub good: Vec<bool>,
    pub good_fraction: f64,
    /// Lattice points with nonempty `A_m`.
    pub audited: usize,
    /// Fraction of those with `meas(B_m) ≥ (1 − ε²) meas(A_m)`.
    pub b_fraction: f64,
    pub total_a: f64,
    pub total_b: f64,
}

impl FlowReport {
    /// `sqrt(1 − Σ meas B / Σ meas A)`, a proxy for `ε(h)`.
    pub fn epsilon_proxy(&self) -> f64 {
        if self.total_a > 0.0 {
            (1.0 - self.total_b / self.total_a).max(0.0).sqrt()
        } else {
            0.0
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "t,N1,N2,good")?;
        for i in 0..self.t.len() {
            writeln!(w, "{},{},{},{}", self.t[i], self.n1[i], self.n2[i], self.good[i] as u8)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `N₁(t) = #M_h(t)` and `N₂(t) = #{m : t ∈ B_m}` on the `t` grid.
pub fn n1_n2_report(level: &FlowLevel, sets: &[AbSets], cfg: &FlowConfig) -> FlowReport {
    let epsilon = cfg.epsilon(level.h);
    let t = cfg.t_grid();
    let n1: Vec<usize> = level.membership.iter().map(|row| row.iter().filter(|&&b| b).count()).collect();
    let n2: Vec<usize> = t.iter().map(|&ti| sets.iter().filter(|s| s.b.contains(ti)).count()).collect();
    let good: Vec<bool> = n1
        .iter()
        .zip(&n2)
        .map(|(&a, &b)| a > 0 && (b as f64) / (a as f64) > 1.0 - epsilon)
        .collect();
    let good_fraction = good.iter().filter(|&&g| g).count() as f64 / good.len().max(1) as f64;
    let audited: Vec<&AbSets> = sets.iter().filter(|s| !s.a.is_empty()).collect();
    let ok = audited
        .iter()
        .filter(|s| s.b.measure() >= (1.0 - epsilon * epsilon) * s.a.measure() - 1e-15)
        .count();
    FlowReport {
        h: level.h,
        epsilon,
        t,
        n1,
        n2,
        good,
        good_fraction,
        audited: audited.len(),
        b_fraction: if audited.is_empty() { 1.0 } else { ok as f64 / audited.len() as f64 },
        total_a: sets.iter().map(|s| s.a.measure()).sum(),
        total_b: sets.iter().map(|s| s.b.measure()).sum(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowedAudit {
    pub triples: usize,
    /// Largest `meas(window ∩ C_{m,n}) / h^{3/4}`.
    pub max_fraction: f64,
    /// `max_fraction / h^{γ − 3/2}`.
    pub c2_tilde: f64,
}

/// Samples `n_triples` triples `(m, n, t*)` with `t* ∈ A_m ∩ C_{m,n}` and
/// measures the crossing set inside `[t* − C̃₁h^{3/4}, t* + C̃₁h^{3/4}]`.
pub fn windowed_crossing_audit(level: &FlowLevel, cfg: &FlowConfig, c1_tilde: f64, n_triples: usize, seed: u64) -> WindowedAudit {
    let eps = level.h.powf(cfg.gamma);
    let mut crossing_pairs: Vec<(usize, usize, TSubset)> = Vec::new();
    for j in 0..level.lattice.len() {
        let a = level.a_set(j, cfg);
        if a.is_empty() {
            continue;
        }
        for k in level.candidates(j, eps, cfg.t0) {
            let c = level.crossing(j, k, cfg.gamma, cfg.t0).intersection(&a);
            if !c.is_empty() {
                crossing_pairs.push((j, k, c));
            }
        }
    }
    if crossing_pairs.is_empty() {
        return WindowedAudit {
            triples: 0,
            max_fraction: 0.0,
            c2_tilde: 0.0,
        };
    }
    let mut rng = montecarlo::stream(seed, 0);
    let half = c1_tilde * level.h.powf(0.75);
    let mut max_fraction = 0.0f64;
    for _ in 0..n_triples {
        let (j, k, ref at) = crossing_pairs[rng.gen_range(0..crossing_pairs.len())];
        let t_star = at.point_at_fraction(rng.gen::<f64>()).expect("nonempty");
        let window = TSubset::from_intervals([0.0, cfg.t0], [[t_star - half, t_star + half]]);
        let frac = level.crossing(j, k, cfg.gamma, cfg.t0).intersection(&window).measure() / level.h.powf(0.75);
        max_fraction = max_fraction.max(frac);
    }
    WindowedAudit {
        triples: n_triples,
        max_fraction,
        c2_tilde: max_fraction / level.h.powf(cfg.gamma - 1.5),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonFit {
    pub slope: f64,
    pub intercept: f64,
    pub expected: f64,
    pub band: [f64; 2],
    pub within_band: bool,
    /// The slope differs from the expected exponent by more than 0.05.
    pub mismatch: bool,
}

/// Least-squares slope and intercept of `log y` against `log x`.
pub fn fit_power_law(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, got: pts.len() });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData { needed: 3, got: 1 });
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Fits the exponent of the `ε` proxy against `h` and compares it with `γ/2 − 7/4 ± 0.5`.
pub fn epsilon_scaling_fit(h: &[f64], proxy: &[f64], gamma: f64) -> Result<EpsilonFit> {
    let (slope, intercept) = fit_power_law(h, proxy)?;
    let expected = gamma / 2.0 - 1.75;
    let band = [expected - 0.5, expected + 0.5];
    Ok(EpsilonFit {
        slope,
        intercept,
        expected,
        band,
        within_band: slope >= band[0] && slope <= band[1],
        mismatch: (slope - expected).abs() > 0.05,
    })
}

/// Flags quasieigenvalues whose nearest neighbour in the list is at least `gap` away.
pub fn isolated_mask(mu: &[f64], gap: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..mu.len()).collect();
    order.sort_by(|&a, &b| mu[a].total_cmp(&mu[b]));
    let mut out = vec![true; mu.len()];
    for w in order.windows(2) {
        if mu[w[1]] - mu[w[0]] < gap {
            out[w[0]] = false;
            out[w[1]] = false;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::builtin_flat_torus;

    #[test]
    fn tsubset_basic_algebra() {
        let r = [0.0, 1.0];
        let a = TSubset::from_intervals(r, [[0.1, 0.3], [0.2, 0.4], [0.6, 0.7]]);
        assert_eq!(a.intervals(), &[[0.1, 0.4], [0.6, 0.7]]);
        let b = TSubset::from_intervals(r, [[0.35, 0.65]]);
        assert!((a.intersection(&b).measure() - 0.1).abs() < 1e-15);
        assert!((a.union(&b).measure() - 0.6).abs() < 1e-15);
        assert!((a.difference(&b).measure() - 0.3).abs() < 1e-15);
        assert!((a.complement().measure() - 0.6).abs() < 1e-15);
        assert!(a.contains(0.2) && !a.contains(0.5));
    }

    #[test]
    fn analytic_crossing_pair() {
        let h = builtin_flat_torus(1.0);
        let nf = NormalForm::new(&h);
        let lattice = ActionLattice::new(0.1, [0.0, 0.0], h.domain()).unwrap();
        let c = crossing_set(&nf, &lattice, [4, 3], [5, 1], 4.0, 0.3).unwrap();
        assert_eq!(c.intervals().len(), 1);
        assert!((c.measure() - 2e-4 / 0.035).abs() < 1e-10);
        assert!(crossing_set(&nf, &lattice, [4, 3], [4, 3], 4.0, 0.3).is_err());
    }

    #[test]
    fn quadratic_band_matches_scan() {
        let d = [0.01, -0.3, 2.0];
        let band = polynomial_band(d, 0.005, [0.0, 0.3]);
        let n = 300_000;
        let hits = (0..n)
            .filter(|&i| {
                let t = (i as f64 + 0.5) * 0.3 / n as f64;
                (d[0] + t * (d[1] + t * d[2])).abs() < 0.005
            })
            .count();
        assert!((band.measure() - hits as f64 * 0.3 / n as f64).abs() < 1e-5);
    }

    #[test]
    fn power_law_fit_recovers_exponent() {
        let h: [f64; 4] = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];
        let y: Vec<f64> = h.iter().map(|x| 3.0 * x.powf(0.25)).collect();
        let fit = epsilon_scaling_fit(&h, &y, 4.0).unwrap();
        assert!((fit.slope - 0.25).abs() < 1e-6);
        assert!(fit.within_band && !fit.mismatch);
        let flat = epsilon_scaling_fit(&h, &[0.5; 4], 4.0).unwrap();
        assert!(flat.slope.abs() < 1e-12 && flat.mismatch);
        assert!(matches!(epsilon_scaling_fit(&h[..2], &y[..2], 4.0), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn derived_constants_for_hessian_norm_two() {
        let c = AuditConstants::from_s(2.0, 0.2);
        assert!((c.c1 - 0.05f64.powf(0.25)).abs() < 1e-15);
        assert!((c.c2 - 0.2f64.sqrt()).abs() < 1e-15);
        let h = builtin_flat_torus(1.0);
        assert!((hessian_sup(&h, 0.0, 16) - 2.0).abs() < 1e-12);
        assert!((hessian_sup(&h, 0.2, 16) - 2.1).abs() < 1e-12);
    }

    #[test]
    fn isolation() {
        let mask = isolated_mask(&[0.0, 1.0, 1.05, 3.0], 0.1);
        assert_eq!(mask, vec![true, false, false, true]);
    }
}

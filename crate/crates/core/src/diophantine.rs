//! Diophantine certification, nonresonant action sets, the quasimode index
//! lattice and Weyl-count diagnostics.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::hamiltonian::{ActionRect, Domain, FourierPolyHamiltonian, Wave};
use crate::montecarlo::{self, Estimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiophantineParams {
    pub kappa: f64,
    pub tau: f64,
    pub k_max: u32,
    /// Required distance of the frequency from the boundary of the frequency domain.
    pub boundary_margin: f64,
}

impl DiophantineParams {
    /// `τ = 2`, `k_max = 200` and a boundary margin equal to `κ`.
    pub fn new(kappa: f64) -> Self {
        DiophantineParams {
            kappa,
            tau: 2.0,
            k_max: 200,
            boundary_margin: kappa,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !(self.tau > 1.0) {
            return Err(Error::Config(format!("tau must exceed n - 1 = 1, got {}", self.tau)));
        }
        if self.k_max < 8 {
            return Err(Error::Config(format!("k_max must be at least 8, got {}", self.k_max)));
        }
        if !(self.boundary_margin >= 0.0) {
            return Err(Error::Config("boundary margin must be nonnegative".into()));
        }
        Ok(())
    }

    /// `κ / |k|^τ` for `|k|² = norm2`.
    #[inline]
    fn bound(&self, norm2: f64) -> f64 {
        if self.tau == 2.0 {
            self.kappa / norm2
        } else {
            self.kappa / norm2.powf(0.5 * self.tau)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    /// `|⟨ω, k⟩| < κ/|k|^τ`; `k` is the minimal-norm witness with `k₁ ≥ 0`.
    Resonant { k: Wave, pairing: f64, bound: f64 },
    NearBoundary { distance: f64, margin: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    /// Certified for all `0 < |k| ≤ k_max`; `tail_bound = κ/k_max^τ` is the
    /// largest bound left untested.
    Pass { k_max: u32, tail_bound: f64 },
    Fail(Violation),
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass { .. })
    }

    pub fn witness(&self) -> Option<Wave> {
        match self {
            Verdict::Fail(Violation::Resonant { k, .. }) => Some(*k),
            _ => None,
        }
    }
}

fn canonical(k: Wave) -> bool {
    k[0] > 0 || (k[0] == 0 && k[1] > 0)
}

/// Scans the wave vectors that can violate the condition for `ω`, calling
/// `visit(k, |⟨ω,k⟩|, bound)` on each violation in the canonical half-plane.
/// Stops early when `visit` returns `false`.
fn scan_violations<F: FnMut(Wave, f64, f64) -> bool>(omega: [f64; 2], p: &DiophantineParams, mut visit: F) {
    let kmax = p.k_max as i64;
    let kmax2 = kmax * kmax;
    if omega[0] == 0.0 && omega[1] == 0.0 {
        visit([0, 1], 0.0, p.kappa);
        return;
    }
    // Any violation has |⟨ω,k⟩| < κ, so for each value of the outer
    // component only a window of the inner one needs testing.
    let (outer, inner) = if omega[1].abs() >= omega[0].abs() { (0, 1) } else { (1, 0) };
    let (wo, wi) = (omega[outer], omega[inner]);
    for a in -kmax..=kmax {
        let c = -(a as f64) * wo / wi;
        let r = p.kappa / wi.abs();
        let lo = ((c - r).floor() as i64).max(-kmax);
        let hi = ((c + r).ceil() as i64).min(kmax);
        for b in lo..=hi {
            let mut k = [0i64; 2];
            k[outer] = a;
            k[inner] = b;
            let n2 = k[0] * k[0] + k[1] * k[1];
            if n2 == 0 || n2 > kmax2 || !canonical(k) {
                continue;
            }
            let pairing = (k[0] as f64 * omega[0] + k[1] as f64 * omega[1]).abs();
            let bound = p.bound(n2 as f64);
            if pairing < bound && !visit(k, pairing, bound) {
                return;
            }
        }
    }
}

fn witness_order(k: Wave) -> (i64, i64, i64) {
    (k[0] * k[0] + k[1] * k[1], k[0], k[1])
}

/// Checks `|⟨ω, k⟩| ≥ κ/|k|^τ` for all `0 < |k| ≤ k_max`.
pub fn diophantine_check(omega: [f64; 2], p: &DiophantineParams) -> Verdict {
    let mut best: Option<(Wave, f64, f64)> = None;
    scan_violations(omega, p, |k, pairing, bound| {
        if best.is_none_or(|(b, _, _)| witness_order(k) < witness_order(b)) {
            best = Some((k, pairing, bound));
        }
        true
    });
    match best {
        Some((k, pairing, bound)) => Verdict::Fail(Violation::Resonant { k, pairing, bound }),
        None => Verdict::Pass {
            k_max: p.k_max,
            tail_bound: p.bound((p.k_max as f64).powi(2)),
        },
    }
}

/// As [`diophantine_check`], with the `dist(ω, ∂Ω) ≥ margin` clause applied to
/// a lower bound for the frequency's distance from the boundary.
pub fn diophantine_check_with_margin(omega: [f64; 2], boundary_distance: f64, p: &DiophantineParams) -> Verdict {
    if boundary_distance < p.boundary_margin {
        return Verdict::Fail(Violation::NearBoundary {
            distance: boundary_distance,
            margin: p.boundary_margin,
        });
    }
    diophantine_check(omega, p)
}

/// Fast yes/no form of [`diophantine_check`] that stops at the first violation.
pub fn is_diophantine(omega: [f64; 2], p: &DiophantineParams) -> bool {
    let mut ok = true;
    scan_violations(omega, p, |_, _, _| {
        ok = false;
        false
    });
    ok
}

/// Uniform cell-centred grid over a rectangle with square cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2 {
    /// Centre of cell `(0, 0)`.
    pub origin: [f64; 2],
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid2 {
    pub fn covering(rect: &ActionRect, spacing: f64) -> Self {
        let w = rect.width();
        let nx = ((w[0] / spacing) - 1e-9).ceil().max(1.0) as usize;
        let ny = ((w[1] / spacing) - 1e-9).ceil().max(1.0) as usize;
        Grid2 {
            origin: [rect.lo[0] + 0.5 * spacing, rect.lo[1] + 0.5 * spacing],
            spacing,
            nx,
            ny,
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + i as f64 * self.spacing,
            self.origin[1] + j as f64 * self.spacing,
        ]
    }

    #[inline]
    pub fn center_of(&self, idx: usize) -> [f64; 2] {
        self.center(idx % self.nx, idx / self.nx)
    }

    pub fn cell_area(&self) -> f64 {
        self.spacing * self.spacing
    }
}

/// Boolean field over a [`Grid2`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridMask {
    pub grid: Grid2,
    pub cells: Vec<bool>,
}

impl GridMask {
    pub fn from_fn<F: Fn([f64; 2]) -> bool + Sync + Send>(grid: Grid2, f: F) -> Self {
        let rows = exec::map_range(grid.ny, |j| (0..grid.nx).map(|i| f(grid.center(i, j))).collect::<Vec<_>>());
        GridMask {
            grid,
            cells: rows.into_iter().flatten().collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Cell count times cell area.
    pub fn measure(&self) -> f64 {
        measure_estimate(self)
    }
}

/// Grid measure of a mask: number of set cells times the cell area.
pub fn measure_estimate(mask: &GridMask) -> f64 {
    mask.count() as f64 * mask.grid.cell_area()
}

const FAR: f64 = 1e20;

/// Squared distance transform of a sampled 1-D function (lower envelope of parabolas).
fn distance_transform_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let fq = f[q] + (q * q) as f64;
        loop {
            let p = v[k];
            let s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
            } else {
                if s <= z[k] {
                    // k == 0: replace the first parabola
                    v[0] = q;
                    z[1] = f64::INFINITY;
                    break;
                }
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
}

/// Exact Euclidean distance from every cell centre to the nearest set cell
/// centre, in action units (`∞` when the mask is empty).
pub fn euclidean_distance_field(mask: &GridMask) -> Vec<f64> {
    let g = mask.grid;
    if mask.count() == 0 {
        return vec![f64::INFINITY; g.len()];
    }
    let n = g.nx.max(g.ny);
    let mut d2 = vec![FAR; g.len()];
    let (mut v, mut z) = (vec![0usize; n], vec![0f64; n + 1]);
    let (mut f, mut out) = (vec![0f64; n], vec![0f64; n]);
    // Columns first, then rows.
    for i in 0..g.nx {
        for j in 0..g.ny {
            f[j] = if mask.cells[j * g.nx + i] { 0.0 } else { FAR };
        }
        distance_transform_1d(&f[..g.ny], &mut out[..g.ny], &mut v, &mut z);
        for j in 0..g.ny {
            d2[j * g.nx + i] = out[j];
        }
    }
    for j in 0..g.ny {
        f[..g.nx].copy_from_slice(&d2[j * g.nx..(j + 1) * g.nx]);
        distance_transform_1d(&f[..g.nx], &mut out[..g.nx], &mut v, &mut z);
        d2[j * g.nx..(j + 1) * g.nx].copy_from_slice(&out[..g.nx]);
    }
    d2.into_iter()
        .map(|x| if x >= 0.5 * FAR { f64::INFINITY } else { x.sqrt() * g.spacing })
        .collect()
}

/// `E_κ(t)`: actions whose deformed frequency is Diophantine, sampled on a grid.
#[derive(Debug, Clone)]
pub struct NonresonantActionSet {
    pub t: f64,
    pub params: DiophantineParams,
    pub mask: GridMask,
    pub distance_field: Vec<f64>,
    /// Infimum over the domain of the smallest singular value of the frequency Jacobian.
    pub jacobian_floor: f64,
}

impl NonresonantActionSet {
    pub fn grid(&self) -> &Grid2 {
        &self.mask.grid
    }

    /// Action-space area of the set.
    pub fn measure(&self) -> f64 {
        self.mask.measure()
    }

    /// Liouville measure of `T² × E_κ(t)`.
    pub fn phase_space_measure(&self) -> f64 {
        4.0 * std::f64::consts::PI.powi(2) * self.measure()
    }

    /// Distance from `p` to the set by bilinear interpolation of the field.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        let g = self.grid();
        let fx = ((p[0] - g.origin[0]) / g.spacing).clamp(0.0, (g.nx - 1) as f64);
        let fy = ((p[1] - g.origin[1]) / g.spacing).clamp(0.0, (g.ny - 1) as f64);
        let (i0, j0) = (fx.floor() as usize, fy.floor() as usize);
        let (i1, j1) = ((i0 + 1).min(g.nx - 1), (j0 + 1).min(g.ny - 1));
        let (sx, sy) = (fx - i0 as f64, fy - j0 as f64);
        let d = |i: usize, j: usize| self.distance_field[j * g.nx + i];
        let a = d(i0, j0) * (1.0 - sx) + d(i1, j0) * sx;
        let b = d(i0, j1) * (1.0 - sx) + d(i1, j1) * sx;
        let v = a * (1.0 - sy) + b * sy;
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }

    /// Cells whose centre lies within `radius` of the set.
    pub fn tube_mask(&self, radius: f64) -> GridMask {
        GridMask {
            grid: *self.grid(),
            cells: self.distance_field.iter().map(|&d| d < radius).collect(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "I1,I2,mask,dist")?;
        let g = self.grid();
        for idx in 0..g.len() {
            let c = g.center_of(idx);
            writeln!(w, "{},{},{},{}", c[0], c[1], self.mask.cells[idx] as u8, self.distance_field[idx])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        write_binary_grid(path, &self.mask, &self.distance_field)
    }
}

/// Compact grid file: a 16-byte little-endian header
/// `(nx: u16, ny: u16, spacing: f32, origin: [f32; 2])`, then one mask byte
/// per cell and one `f32` distance per cell, both row-major.
pub fn write_binary_grid(path: &Path, mask: &GridMask, dist: &[f64]) -> Result<()> {
    let g = mask.grid;
    if g.nx > u16::MAX as usize || g.ny > u16::MAX as usize {
        return Err(Error::Format("grid too large for the 16-bit header".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_u16::<LittleEndian>(g.nx as u16)?;
    w.write_u16::<LittleEndian>(g.ny as u16)?;
    w.write_f32::<LittleEndian>(g.spacing as f32)?;
    w.write_f32::<LittleEndian>(g.origin[0] as f32)?;
    w.write_f32::<LittleEndian>(g.origin[1] as f32)?;
    for &c in &mask.cells {
        w.write_u8(c as u8)?;
    }
    for &d in dist {
        w.write_f32::<LittleEndian>(d as f32)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_binary_grid(path: &Path) -> Result<(GridMask, Vec<f32>)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = &bytes[..];
    let nx = r.read_u16::<LittleEndian>()? as usize;
    let ny = r.read_u16::<LittleEndian>()? as usize;
    let spacing = r.read_f32::<LittleEndian>()? as f64;
    let ox = r.read_f32::<LittleEndian>()? as f64;
    let oy = r.read_f32::<LittleEndian>()? as f64;
    let n = nx * ny;
    if bytes.len() != 16 + 5 * n {
        return Err(Error::Format(format!("expected {} bytes, found {}", 16 + 5 * n, bytes.len())));
    }
    let mut cells = Vec::with_capacity(n);
    for _ in 0..n {
        cells.push(r.read_u8()? != 0);
    }
    let mut dist = Vec::with_capacity(n);
    for _ in 0..n {
        dist.push(r.read_f32::<LittleEndian>()?);
    }
    let grid = Grid2 {
        origin: [ox, oy],
        spacing,
        nx,
        ny,
    };
    Ok((GridMask { grid, cells }, dist))
}

fn sym_singular_min(j: [f64; 3]) -> f64 {
    let mean = 0.5 * (j[0] + j[2]);
    let rad = (0.25 * (j[0] - j[2]).powi(2) + j[1] * j[1]).sqrt();
    (mean - rad).abs().min((mean + rad).abs())
}

/// Whether `I` belongs to `E_κ(t)`: inside the domain, frequency far enough
/// from the boundary of the frequency domain, and Diophantine.
pub fn is_nonresonant(h: &FourierPolyHamiltonian, action: [f64; 2], t: f64, p: &DiophantineParams, jacobian_floor: f64) -> bool {
    let d = h.domain();
    if !d.contains(action) {
        return false;
    }
    // The frequency map stretches distances by at least the Jacobian floor,
    // which gives a lower bound for dist(ω, ∂Ω).
    if jacobian_floor * d.distance_to_boundary(action) < p.boundary_margin {
        return false;
    }
    is_diophantine(h.frequency_map(action, t), p)
}

fn jacobian_floor(h: &FourierPolyHamiltonian, grid: &Grid2, t: f64) -> Result<f64> {
    let d = h.domain();
    let mut floor = f64::INFINITY;
    for idx in 0..grid.len() {
        let c = grid.center_of(idx);
        if !d.contains(c) {
            continue;
        }
        let jac = h.frequency_jacobian(c, t);
        let det = jac[0] * jac[2] - jac[1] * jac[1];
        if det.abs() < 1e-12 {
            return Err(Error::DegenerateFrequencyMap { at: c, det });
        }
        floor = floor.min(sym_singular_min(jac));
    }
    Ok(if floor.is_finite() { floor } else { 0.0 })
}

/// Offset of the membership sample from the cell centre, in cells.
const SAMPLE_SHIFT: [f64; 2] = [1.414_213_562_373_095e-3, 1.732_050_807_568_877e-3];

/// Builds `E_κ(t)` on a grid of spacing `spacing` over the domain's rectangle.
pub fn nonresonant_action_set(h: &FourierPolyHamiltonian, t: f64, p: &DiophantineParams, spacing: f64) -> Result<NonresonantActionSet> {
    p.validate()?;
    if !(spacing > 0.0) {
        return Err(Error::Config("grid spacing must be positive".into()));
    }
    let grid = Grid2::covering(&h.domain().rect, spacing);
    let floor = jacobian_floor(h, &grid, t)?;
    // Sample slightly off the centre: on a uniform grid the centres have
    // rational frequency ratios with small denominators (exactly so at t = 0),
    // which the scan would reject as exact resonances.
    let shift = [SAMPLE_SHIFT[0] * spacing, SAMPLE_SHIFT[1] * spacing];
    let mask = GridMask::from_fn(grid, |c| is_nonresonant(h, [c[0] + shift[0], c[1] + shift[1]], t, p, floor));
    let distance_field = euclidean_distance_field(&mask);
    Ok(NonresonantActionSet {
        t,
        params: *p,
        mask,
        distance_field,
        jacobian_floor: floor,
    })
}

/// Monte Carlo refinement of `meas(E_κ(t))` using the exact membership test.
pub fn monte_carlo_measure(set: &NonresonantActionSet, h: &FourierPolyHamiltonian, n: usize, seed: u64) -> Estimate {
    let (t, p, floor) = (set.t, set.params, set.jacobian_floor);
    montecarlo::area(&h.domain().rect, n, seed, |c| is_nonresonant(h, c, t, &p, floor))
}

/// Points `I_m = h(m + ϑ/4)` of the quantisation lattice inside the domain,
/// sorted lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionLattice {
    pub h: f64,
    /// The Maslov offset `ϑ/4`.
    pub offset: [f64; 2],
    pub domain: Domain,
    pub points: Vec<Wave>,
}

impl ActionLattice {
    pub fn new(h: f64, offset: [f64; 2], domain: &Domain) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::Config(format!("h must be positive, got {h}")));
        }
        let r = domain.rect;
        let range = |i: usize| {
            let lo = (r.lo[i] / h - offset[i]).ceil() as i64;
            let hi = (r.hi[i] / h - offset[i]).floor() as i64;
            lo..=hi
        };
        let mut points = Vec::new();
        for m1 in range(0) {
            for m2 in range(1) {
                let m = [m1, m2];
                if domain.contains(lattice_action(h, offset, m)) {
                    points.push(m);
                }
            }
        }
        Ok(ActionLattice {
            h,
            offset,
            domain: domain.clone(),
            points,
        })
    }

    pub fn action(&self, m: Wave) -> [f64; 2] {
        lattice_action(self.h, self.offset, m)
    }

    pub fn position(&self, m: Wave) -> Option<usize> {
        self.points.binary_search(&m).ok()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[inline]
pub fn lattice_action(h: f64, offset: [f64; 2], m: Wave) -> [f64; 2] {
    [h * (m[0] as f64 + offset[0]), h * (m[1] as f64 + offset[1])]
}

/// Membership flags of `M_h(t) = {m : dist(I_m, E_κ(t)) < L h}` over the lattice points.
pub fn index_set_mask(lattice: &ActionLattice, set: &NonresonantActionSet, tube: f64) -> Result<Vec<bool>> {
    let radius = tube * lattice.h;
    if set.grid().spacing > radius / 4.0 + 1e-15 {
        return Err(Error::Resolution {
            spacing: set.grid().spacing,
            radius,
        });
    }
    Ok(lattice.points.iter().map(|&m| set.distance(lattice.action(m)) < radius).collect())
}

/// `M_h(t)` as a sorted list of indices.
pub fn index_set_mh(lattice: &ActionLattice, set: &NonresonantActionSet, tube: f64) -> Result<Vec<Wave>> {
    let flags = index_set_mask(lattice, set, tube)?;
    Ok(lattice
        .points
        .iter()
        .zip(flags)
        .filter_map(|(&m, f)| f.then_some(m))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeylDensityRow {
    pub h: f64,
    pub count: usize,
    /// `#M_h (2πh)² / meas(T² × E_κ)`, which tends to 1 as `h → 0`.
    pub ratio: f64,
    /// `#M_h h² / area({dist(I, E_κ) < L h})`: agreement with the tube volume.
    pub tube_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeylDensityReport {
    pub rows: Vec<WeylDensityRow>,
    /// `|ratio - 1|` does not increase as `h` decreases.
    pub monotone_toward_one: bool,
}

/// Weyl-count diagnostic for `#M_h` along a list of `h` values.
pub fn weyl_density_report(set: &NonresonantActionSet, domain: &Domain, offset: [f64; 2], tube: f64, h_list: &[f64]) -> Result<WeylDensityReport> {
    if h_list.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: h_list.len(),
        });
    }
    let area = set.measure();
    let mut rows = Vec::with_capacity(h_list.len());
    for &h in h_list {
        let lattice = ActionLattice::new(h, offset, domain)?;
        let count = index_set_mask(&lattice, set, tube)?.into_iter().filter(|&b| b).count();
        let tube_area = set.tube_mask(tube * h).measure();
        let ratio = if area > 0.0 { count as f64 * h * h / area } else { 0.0 };
        let tube_ratio = if tube_area > 0.0 { count as f64 * h * h / tube_area } else { 0.0 };
        rows.push(WeylDensityRow { h, count, ratio, tube_ratio });
    }
    let mut sorted = rows.clone();
    sorted.sort_by(|a, b| b.h.total_cmp(&a.h));
    let monotone_toward_one = sorted.windows(2).all(|w| (w[1].ratio - 1.0).abs() <= (w[0].ratio - 1.0).abs() + 1e-12);
    Ok(WeylDensityReport { rows, monotone_toward_one })
}

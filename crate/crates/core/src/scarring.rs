//! Energy windows, the selection `B̃_h(λ)`, overlap audits between
//! quasimodes and eigenfunctions, torus mass and coverage of `E_κ`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::diophantine::{index_set_mask, nonresonant_action_set, ActionLattice, DiophantineParams, NonresonantActionSet};
use crate::error::{Error, Result};
use crate::exec;
use crate::hamiltonian::{ActionRect, FourierPolyHamiltonian, FourierPolySymbol, Wave};
use crate::montecarlo::{self, Estimate};
use crate::normal_form::{NormalForm, Order, QuasiEigenvalue};
use crate::quantize::{
    build_operator, build_quasimode, default_divisor_tol, eigensolve_window, matrix_element, overlap, BasisTruncation, EigenCache,
    EigenWindowResult, SolverOptions, SparseVector, TruncationMode,
};
use crate::spectral_flow::isolated_mask;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScarConfig {
    pub lambda: f64,
    /// Tube radius `L` in units of `h`.
    pub tube: f64,
    /// Torus-mass radius; `3 L h` when absent.
    pub delta: Option<f64>,
    pub band: [f64; 2],
    pub gamma: f64,
    /// Basis cut-off energy; the upper band edge when absent.
    pub e_cut: Option<f64>,
    pub rho_margin: f64,
    pub mc_samples: usize,
    pub seed: u64,
    /// Order of the quasieigenvalues used for windows and isolation.
    pub order: Order,
    /// `E_κ` grid spacing is `L h / grid_factor`.
    pub grid_factor: f64,
}

impl Default for ScarConfig {
    fn default() -> Self {
        ScarConfig {
            lambda: 4.0,
            tube: 1.0,
            delta: None,
            band: [0.1, 1.6],
            gamma: 4.0,
            e_cut: None,
            rho_margin: 1.5,
            mc_samples: 1_000_000,
            seed: 0,
            order: Order::Second,
            grid_factor: 8.0,
        }
    }
}

impl ScarConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 1.0) {
            return Err(Error::Config(format!("lambda must exceed 1, got {}", self.lambda)));
        }
        if !(self.tube > 0.0) {
            return Err(Error::Config("tube radius L must be positive".into()));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0) {
                return Err(Error::Config("delta must be positive".into()));
            }
        }
        if !(self.band[0] < self.band[1]) {
            return Err(Error::Config(format!("band {:?} must satisfy a < b", self.band)));
        }
        if !(self.gamma > 3.5) {
            return Err(Error::Config("gamma must exceed 7/2".into()));
        }
        if !(self.rho_margin >= 1.0) || self.mc_samples == 0 {
            return Err(Error::Config("rho_margin must be at least 1 and mc_samples positive".into()));
        }
        if !(self.grid_factor >= 4.0) {
            return Err(Error::Config("grid_factor must be at least 4".into()));
        }
        Ok(())
    }

    pub fn delta_for(&self, h: f64) -> f64 {
        self.delta.unwrap_or(3.0 * self.tube * h)
    }

    pub fn truncation(&self) -> TruncationMode {
        TruncationMode::Energy {
            e_cut: self.e_cut.unwrap_or(self.band[1]),
            margin: self.rho_margin,
        }
    }
}

/// `N_m = #{E_j ∈ [μ_m − h^γ/3, μ_m + h^γ/3]}` for each quasieigenvalue.
pub fn window_counts(eigs: &EigenWindowResult, quasi: &[QuasiEigenvalue], half_width: f64) -> Result<Vec<usize>> {
    quasi
        .iter()
        .map(|q| {
            let (lo, hi) = (q.mu - half_width, q.mu + half_width);
            if !eigs.is_empty() && (lo < eigs.window[0] || hi > eigs.window[1]) {
                return Err(Error::Coverage(format!(
                    "window [{lo}, {hi}] around m = {:?} leaves the solved range {:?}",
                    q.m, eigs.window
                )));
            }
            Ok(eigs.count_in(lo, hi))
        })
        .collect()
}

/// Axis-aligned box holding every action of the basis, padded by `h`.
pub fn basis_bbox(basis: &BasisTruncation) -> ActionRect {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for &m in basis.modes() {
        let a = basis.action(m);
        for i in 0..2 {
            lo[i] = lo[i].min(a[i] - basis.h);
            hi[i] = hi[i].max(a[i] + basis.h);
        }
    }
    ActionRect { lo, hi }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RRatio {
    pub r: f64,
    pub band_volume: f64,
    pub band_volume_std_error: f64,
    /// Liouville measure of `T² × E_κ`.
    pub nonresonant_volume: f64,
}

/// `R = meas(p⁻¹([a, b])) / meas(T² × E_κ)`.
pub fn r_ratio(ham: &FourierPolyHamiltonian, t: f64, band: [f64; 2], bbox: &ActionRect, set: &NonresonantActionSet, n: usize, seed: u64) -> Result<RRatio> {
    let denom = set.phase_space_measure();
    if denom <= 0.0 {
        return Err(Error::EmptyNonresonantSet);
    }
    let est: Estimate = montecarlo::phase_space_volume(ham.symbol(), t, band, bbox, n, seed);
    Ok(RRatio {
        r: est.value / denom,
        band_volume: est.value,
        band_volume_std_error: est.std_error,
        nonresonant_volume: denom,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub selected: Vec<bool>,
    /// `#B̃ / #B_h`.
    pub proportion: f64,
    /// `1 − 2/λ`.
    pub expected_floor: f64,
}

/// `B̃ = {m ∈ B_h : N_m < λR}` for the counts of the `B_h` members.
pub fn btilde_select(counts: &[usize], r: f64, lambda: f64) -> Selection {
    let selected: Vec<bool> = counts.iter().map(|&n| (n as f64) < lambda * r).collect();
    let kept = selected.iter().filter(|&&s| s).count();
    Selection {
        proportion: if counts.is_empty() { 0.0 } else { kept as f64 / counts.len() as f64 },
        expected_floor: 1.0 - 2.0 / lambda,
        selected,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapAudit {
    pub max_overlap: f64,
    /// Index into the eigen result of the maximiser.
    pub argmax: Option<usize>,
    /// `Σ |⟨u_j, v_m⟩|²` over the window.
    pub projector_sum: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Overlaps of `v` with every eigenfunction whose eigenvalue lies in `[μ − w, μ + w]`.
pub fn max_overlap_audit(eigs: &EigenWindowResult, v: &SparseVector, mu: f64, half_width: f64, threshold: f64) -> Result<OverlapAudit> {
    let (lo, hi) = (mu - half_width, mu + half_width);
    if lo < eigs.window[0] || hi > eigs.window[1] {
        return Err(Error::Coverage(format!("overlap window [{lo}, {hi}] leaves the solved range {:?}", eigs.window)));
    }
    let mut best = (0.0f64, None);
    let mut sum = 0.0;
    for j in eigs.indices_in(lo, hi) {
        let o = overlap(&eigs.vectors[j], v)?.norm();
        sum += o * o;
        if o > best.0 {
            best = (o, Some(j));
        }
    }
    Ok(OverlapAudit {
        max_overlap: best.0,
        argmax: best.1,
        projector_sum: sum,
        threshold,
        pass: best.0 >= threshold,
    })
}

/// Mass of `u` on basis modes whose action lies within `delta` of `I_ω`.
pub fn torus_mass(u: &SparseVector, basis: &BasisTruncation, i_omega: [f64; 2], delta: f64) -> f64 {
    u.entries
        .iter()
        .filter(|(i, _)| {
            let a = basis.action(basis.mode(*i));
            (a[0] - i_omega[0]).hypot(a[1] - i_omega[1]) < delta
        })
        .map(|(_, z)| z.norm_sqr())
        .sum::<f64>()
        .min(1.0)
}

/// `⟨Op^W(a) u, u⟩`.
pub fn symbol_expectation(u: &SparseVector, a: &FourierPolySymbol, basis: &BasisTruncation, t: f64) -> Result<f64> {
    a.check_hermitian()?;
    let mut acc = Complex64::new(0.0, 0.0);
    for &(i, ui) in &u.entries {
        let m = basis.mode(i);
        for k in a.support() {
            let mp = [m[0] - k[0], m[1] - k[1]];
            let Some(j) = basis.index(mp) else { continue };
            let uj = u.get(j);
            if uj.re == 0.0 && uj.im == 0.0 {
                continue;
            }
            acc += ui.conj() * matrix_element(a, m, mp, basis.h, t, basis.offset) * uj;
        }
    }
    Ok(acc.re)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScarVerdict {
    pub mass: f64,
    pub threshold: f64,
    /// `mass / threshold`.
    pub margin: f64,
    pub pass: bool,
}

/// Checks `mass ≥ (5λ²R²)⁻¹`.
pub fn scar_assert(mass: f64, lambda: f64, r: f64) -> ScarVerdict {
    let threshold = 1.0 / (5.0 * lambda * lambda * r * r);
    ScarVerdict {
        mass,
        threshold,
        margin: mass / threshold,
        pass: mass >= threshold,
    }
}

/// Centre of the `E_κ` cell nearest to `p`.
pub fn nearest_nonresonant_point(set: &NonresonantActionSet, p: [f64; 2]) -> Option<[f64; 2]> {
    let g = set.grid();
    (0..g.len())
        .filter(|&i| set.mask.cells[i])
        .map(|i| g.center_of(i))
        .min_by(|a, b| {
            let da = (a[0] - p[0]).hypot(a[1] - p[1]);
            let db = (b[0] - p[0]).hypot(b[1] - p[1]);
            da.total_cmp(&db)
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScarRow {
    pub m: Wave,
    pub action: [f64; 2],
    pub mu: f64,
    pub count_window: [f64; 2],
    pub overlap_window: [f64; 2],
    pub n_m: usize,
    pub in_btilde: bool,
    pub max_overlap: Option<f64>,
    pub argmax: Option<usize>,
    pub eigenvalue: Option<f64>,
    pub projector_sum: Option<f64>,
    pub i_omega: Option<[f64; 2]>,
    pub torus_mass: Option<f64>,
    pub pass_overlap: Option<bool>,
    pub pass_projector: Option<bool>,
    pub pass_scar: Option<bool>,
    /// Why a selected `m` was not audited.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScarReport {
    pub schema_version: u32,
    pub h: f64,
    pub t: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub band: [f64; 2],
    pub delta: f64,
    pub count_half_width: f64,
    pub overlap_half_width: f64,
    pub r: RRatio,
    pub overlap_threshold: f64,
    pub scar_threshold: f64,
    pub projector_floor: f64,
    pub basis_dimension: usize,
    pub eigenvalues_in_band: usize,
    /// `#B_h`.
    pub isolated: usize,
    pub selection_proportion: f64,
    pub selection_floor: f64,
    pub rows: Vec<ScarRow>,
}

impl ScarReport {
    pub fn selected_actions(&self) -> Vec<[f64; 2]> {
        self.rows.iter().filter(|r| r.in_btilde).map(|r| r.action).collect()
    }

    pub fn audited(&self) -> impl Iterator<Item = &ScarRow> {
        self.rows.iter().filter(|r| r.in_btilde && r.skipped.is_none())
    }

    pub fn all_pass(&self) -> bool {
        self.audited()
            .all(|r| r.pass_overlap == Some(true) && r.pass_projector == Some(true) && r.pass_scar == Some(true))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "m1,m2,I1,I2,mu,N_m,in_btilde,max_overlap,torus_mass,pass_overlap,pass_scar")?;
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
        let flag = |x: Option<bool>| x.map_or(String::new(), |v| (v as u8).to_string());
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.m[0],
                r.m[1],
                r.action[0],
                r.action[1],
                r.mu,
                r.n_m,
                r.in_btilde as u8,
                opt(r.max_overlap),
                opt(r.torus_mass),
                flag(r.pass_overlap),
                flag(r.pass_scar)
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// Two-column plot data: `|I_m|` against torus mass, and a histogram of
    /// maximal overlaps on 20 bins of `[0, 1]`.
    pub fn write_plot_data(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        let mass = dir.join("mass_vs_action.csv");
        let mut w = BufWriter::new(File::create(&mass)?);
        writeln!(w, "action_norm,torus_mass")?;
        for r in self.audited() {
            if let Some(m) = r.torus_mass {
                writeln!(w, "{},{}", r.action[0].hypot(r.action[1]), m)?;
            }
        }
        w.flush()?;
        let hist = dir.join("overlap_histogram.csv");
        let mut bins = [0usize; 20];
        for r in self.audited() {
            if let Some(o) = r.max_overlap {
                bins[((o * 20.0) as usize).min(19)] += 1;
            }
        }
        let mut w = BufWriter::new(File::create(&hist)?);
        writeln!(w, "bin_center,count")?;
        for (i, c) in bins.iter().enumerate() {
            writeln!(w, "{},{}", (i as f64 + 0.5) / 20.0, c)?;
        }
        w.flush()?;
        Ok(vec![mass, hist])
    }
}

/// Everything one `(h, t)` scar audit needs, computed once.
#[derive(Debug, Clone)]
pub struct ScarCell {
    pub h: f64,
    pub t: f64,
    pub offset: [f64; 2],
    pub set: NonresonantActionSet,
    pub lattice: ActionLattice,
    pub basis: BasisTruncation,
    pub eigs: EigenWindowResult,
}

impl ScarCell {
    /// Builds `E_κ(t)`, the lattice, the basis and the eigenpairs over the
    /// band widened by `h^γ`.
    pub fn prepare(ham: &FourierPolyHamiltonian, h: f64, t: f64, offset: [f64; 2], dioph: &DiophantineParams, cfg: &ScarConfig, cache: Option<&EigenCache>) -> Result<Self> {
        cfg.validate()?;
        let set = nonresonant_action_set(ham, t, dioph, cfg.tube * h / cfg.grid_factor)?;
        let lattice = ActionLattice::new(h, offset, ham.domain())?;
        let basis = BasisTruncation::new(ham, h, offset, cfg.truncation())?;
        let mat = build_operator(ham, &basis, t)?;
        let pad = h.powf(cfg.gamma);
        let window = [cfg.band[0] - pad, cfg.band[1] + pad];
        let opts = SolverOptions::default();
        let eigs = match cache {
            Some(c) => c.solve(ham, &mat, window, &opts)?,
            None => eigensolve_window(&mat, window[0], window[1], &opts)?,
        };
        Ok(ScarCell {
            h,
            t,
            offset,
            set,
            lattice,
            basis,
            eigs,
        })
    }

    pub fn bbox(&self) -> ActionRect {
        basis_bbox(&self.basis)
    }

    /// Runs windows, selection, overlap audits and torus masses.
    pub fn report(&self, ham: &FourierPolyHamiltonian, cfg: &ScarConfig, r: RRatio) -> Result<ScarReport> {
        let h = self.h;
        let hg = h.powf(cfg.gamma);
        let nf = NormalForm::with_order(ham, cfg.order);
        let quasi = nf.quasispectrum(&self.lattice, self.t)?;
        let in_mh = index_set_mask(&self.lattice, &self.set, cfg.tube)?;
        let mus: Vec<f64> = quasi.iter().map(|q| q.mu).collect();
        let isolated = isolated_mask(&mus, hg);
        let members: Vec<usize> = (0..quasi.len())
            .filter(|&i| in_mh[i] && isolated[i] && quasi[i].mu >= cfg.band[0] && quasi[i].mu <= cfg.band[1])
            .collect();
        let member_q: Vec<QuasiEigenvalue> = members.iter().map(|&i| quasi[i]).collect();
        let counts = window_counts(&self.eigs, &member_q, hg / 3.0)?;
        let sel = btilde_select(&counts, r.r, cfg.lambda);
        let overlap_threshold = 1.0 / (2.0 * cfg.lambda * r.r);
        let projector_floor = 1.0 - 10.0 * h;
        let delta = cfg.delta_for(h);
        let divisor_tol = default_divisor_tol(ham, &self.basis);
        let rows = exec::try_map_range(members.len(), |a| {
            let q = member_q[a];
            let mut row = ScarRow {
                m: q.m,
                action: q.action,
                mu: q.mu,
                count_window: [q.mu - hg / 3.0, q.mu + hg / 3.0],
                overlap_window: [q.mu - hg, q.mu + hg],
                n_m: counts[a],
                in_btilde: sel.selected[a],
                max_overlap: None,
                argmax: None,
                eigenvalue: None,
                projector_sum: None,
                i_omega: None,
                torus_mass: None,
                pass_overlap: None,
                pass_projector: None,
                pass_scar: None,
                skipped: None,
            };
            if !row.in_btilde {
                return Ok(row);
            }
            let v = match build_quasimode(ham, &self.basis, q.m, self.t, divisor_tol) {
                Ok(v) => v,
                Err(e @ (Error::NearDegeneracy { .. } | Error::OutOfBasis { .. })) => {
                    row.skipped = Some(e.to_string());
                    return Ok(row);
                }
                Err(e) => return Err(e),
            };
            let audit = max_overlap_audit(&self.eigs, &v.vector, q.mu, hg, overlap_threshold)?;
            row.max_overlap = Some(audit.max_overlap);
            row.argmax = audit.argmax;
            row.projector_sum = Some(audit.projector_sum);
            row.pass_overlap = Some(audit.pass);
            row.pass_projector = Some(audit.projector_sum >= projector_floor);
            row.eigenvalue = audit.argmax.map(|j| self.eigs.eigenvalues[j]);
            let i_omega = nearest_nonresonant_point(&self.set, q.action);
            row.i_omega = i_omega;
            if let (Some(j), Some(io)) = (audit.argmax, i_omega) {
                let mass = torus_mass(&self.eigs.vectors[j], &self.basis, io, delta);
                row.torus_mass = Some(mass);
                row.pass_scar = Some(scar_assert(mass, cfg.lambda, r.r).pass);
            } else {
                row.torus_mass = Some(0.0);
                row.pass_scar = Some(false);
            }
            Ok(row)
        })?;
        Ok(ScarReport {
            schema_version: REPORT_SCHEMA_VERSION,
            h,
            t: self.t,
            lambda: cfg.lambda,
            gamma: cfg.gamma,
            band: cfg.band,
            delta,
            count_half_width: hg / 3.0,
            overlap_half_width: hg,
            r,
            overlap_threshold,
            scar_threshold: 1.0 / (5.0 * cfg.lambda * cfg.lambda * r.r * r.r),
            projector_floor,
            basis_dimension: self.basis.len(),
            eigenvalues_in_band: self.eigs.count_in(cfg.band[0], cfg.band[1]),
            isolated: members.len(),
            selection_proportion: sel.proportion,
            selection_floor: sel.expected_floor,
            rows,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub h: f64,
    pub fraction: f64,
    /// `1 − L²/(πλ)`.
    pub bound: f64,
    /// `1 − L²/(2πλ)`.
    pub limit_bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub rows: Vec<CoverageRow>,
    /// Fraction of `E_κ` cells covered at each of the last three `h` values.
    pub persistent_fraction: Option<f64>,
}

/// Flags `E_κ` cells lying within `radius` of some selected action.
pub fn covered_cells(set: &NonresonantActionSet, selected: &[[f64; 2]], radius: f64) -> Vec<bool> {
    let g = set.grid();
    let mut covered = vec![false; g.len()];
    let reach = (radius / g.spacing).ceil() as i64 + 1;
    for p in selected {
        let ci = ((p[0] - g.origin[0]) / g.spacing).round() as i64;
        let cj = ((p[1] - g.origin[1]) / g.spacing).round() as i64;
        for j in (cj - reach).max(0)..=(cj + reach).min(g.ny as i64 - 1) {
            for i in (ci - reach).max(0)..=(ci + reach).min(g.nx as i64 - 1) {
                let c = g.center(i as usize, j as usize);
                if (c[0] - p[0]).hypot(c[1] - p[1]) < radius {
                    covered[j as usize * g.nx + i as usize] = true;
                }
            }
        }
    }
    covered
        .into_iter()
        .zip(&set.mask.cells)
        .map(|(c, &e)| c && e)
        .collect()
}

/// Fraction of `E_κ` within `L h` of `Ĩ_h(λ)` for each `h`. Every entry is
/// `(h, selected actions)` and all share the grid of `set`.
pub fn coverage_report(set: &NonresonantActionSet, selections: &[(f64, Vec<[f64; 2]>)], tube: f64, lambda: f64) -> CoverageReport {
    let total = set.mask.count();
    let bound = 1.0 - tube * tube / (std::f64::consts::PI * lambda);
    let limit_bound = 1.0 - tube * tube / (2.0 * std::f64::consts::PI * lambda);
    let masks: Vec<Vec<bool>> = selections.iter().map(|(h, sel)| covered_cells(set, sel, tube * h)).collect();
    let rows = selections
        .iter()
        .zip(&masks)
        .map(|((h, _), m)| {
            let fraction = if total == 0 { 0.0 } else { m.iter().filter(|&&c| c).count() as f64 / total as f64 };
            CoverageRow {
                h: *h,
                fraction,
                bound,
                limit_bound,
                pass: fraction >= bound,
            }
        })
        .collect();
    let persistent_fraction = (masks.len() >= 3 && total > 0).then(|| {
        let last = &masks[masks.len() - 3..];
        (0..set.mask.cells.len()).filter(|&i| last.iter().all(|m| m[i])).count() as f64 / total as f64
    });
    CoverageReport { rows, persistent_fraction }
}

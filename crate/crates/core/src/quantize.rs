//! Weyl quantisation on the Fourier basis of `T²`, windowed eigensolves and
//! first-order quasimodes.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec;
use crate::hamiltonian::{FourierPolyHamiltonian, FourierPolySymbol, Wave};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// How the Fourier basis is cut off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TruncationMode {
    /// Every `m` with `H⁰(I_m) ≤ e_cut · margin`.
    Energy { e_cut: f64, margin: f64 },
    /// Every `m` with `|m| ≤ radius`.
    Ball { radius: f64 },
}

impl TruncationMode {
    pub fn energy(e_cut: f64) -> Self {
        TruncationMode::Energy { e_cut, margin: 1.5 }
    }
}

const MAX_RING: i64 = 4096;

/// A finite set of Fourier modes, sorted lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisTruncation {
    pub mode: TruncationMode,
    pub h: f64,
    pub offset: [f64; 2],
    modes: Vec<Wave>,
    /// `true` for modes in the outer 10% shell of the truncation.
    shell: Vec<bool>,
}

impl BasisTruncation {
    pub fn new(ham: &FourierPolyHamiltonian, h: f64, offset: [f64; 2], mode: TruncationMode) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::Config(format!("h must be positive, got {h}")));
        }
        let action = |m: Wave| [h * (m[0] as f64 + offset[0]), h * (m[1] as f64 + offset[1])];
        let mut modes = Vec::new();
        match mode {
            TruncationMode::Ball { radius } => {
                if !(radius >= 0.0) {
                    return Err(Error::Config("ball radius must be nonnegative".into()));
                }
                let r = radius.floor() as i64;
                for m1 in -r..=r {
                    for m2 in -r..=r {
                        if ((m1 * m1 + m2 * m2) as f64) <= radius * radius {
                            modes.push([m1, m2]);
                        }
                    }
                }
            }
            TruncationMode::Energy { e_cut, margin } => {
                if !(e_cut > 0.0 && margin >= 1.0) {
                    return Err(Error::Config("energy truncation needs e_cut > 0 and margin >= 1".into()));
                }
                let cap = e_cut * margin;
                // Square rings around the origin until two consecutive rings are empty.
                let mut empty_rings = 0;
                let mut found = false;
                for r in 0..=MAX_RING {
                    let mut any = false;
                    for m in ring(r) {
                        if ham.h0(action(m)) <= cap {
                            modes.push(m);
                            any = true;
                        }
                    }
                    found |= any;
                    empty_rings = if any { 0 } else { empty_rings + 1 };
                    if found && empty_rings >= 2 {
                        break;
                    }
                    if r == MAX_RING {
                        return Err(Error::SolverFailure("energy truncation does not close; H⁰ is not coercive".into()));
                    }
                }
            }
        }
        if modes.is_empty() {
            return Err(Error::Config("truncation contains no modes".into()));
        }
        modes.sort();
        let shell = match mode {
            TruncationMode::Ball { radius } => modes.iter().map(|m| (m[0] as f64).hypot(m[1] as f64) > 0.9 * radius).collect(),
            TruncationMode::Energy { .. } => {
                let e = |m: &Wave| ham.h0(action(*m));
                let e_max = modes.iter().map(e).fold(f64::NEG_INFINITY, f64::max);
                modes.iter().map(|m| e(m) > 0.81 * e_max).collect()
            }
        };
        Ok(BasisTruncation {
            mode,
            h,
            offset,
            modes,
            shell,
        })
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[Wave] {
        &self.modes
    }

    pub fn mode(&self, i: usize) -> Wave {
        self.modes[i]
    }

    pub fn index(&self, m: Wave) -> Option<usize> {
        self.modes.binary_search(&m).ok()
    }

    pub fn in_shell(&self, i: usize) -> bool {
        self.shell[i]
    }

    pub fn action(&self, m: Wave) -> [f64; 2] {
        [self.h * (m[0] as f64 + self.offset[0]), self.h * (m[1] as f64 + self.offset[1])]
    }
}

fn ring(r: i64) -> Vec<Wave> {
    if r == 0 {
        return vec![[0, 0]];
    }
    let mut out = Vec::with_capacity(8 * r as usize);
    for i in -r..=r {
        out.push([i, -r]);
        out.push([i, r]);
    }
    for j in (-r + 1)..r {
        out.push([-r, j]);
        out.push([r, j]);
    }
    out
}

/// `⟨e_m, Op(p) e_{m'}⟩ = c_{m−m'}(h((m+m')/2 + ϑ/4), t)`.
pub fn matrix_element(symbol: &FourierPolySymbol, m: Wave, mp: Wave, h: f64, t: f64, offset: [f64; 2]) -> Complex64 {
    let k = [m[0] - mp[0], m[1] - mp[1]];
    if symbol.term(k).is_none() {
        return ZERO;
    }
    let mid = [
        h * (0.5 * (m[0] + mp[0]) as f64 + offset[0]),
        h * (0.5 * (m[1] + mp[1]) as f64 + offset[1]),
    ];
    symbol.coeff(k, mid, t)
}

/// Banded Hermitian matrix: for each coupling `k`, `band[i]` is the entry
/// in row `m_i` and column `m_i − k`.
#[derive(Debug, Clone)]
pub struct HermitianOperatorMatrix {
    pub basis: BasisTruncation,
    pub t: f64,
    bands: BTreeMap<Wave, Band>,
}

#[derive(Debug, Clone)]
struct Band {
    col: Vec<Option<usize>>,
    val: Vec<Complex64>,
}

impl HermitianOperatorMatrix {
    pub fn dimension(&self) -> usize {
        self.basis.len()
    }

    pub fn h(&self) -> f64 {
        self.basis.h
    }

    /// `max |k|` over stored couplings.
    pub fn bandwidth(&self) -> f64 {
        self.bands
            .keys()
            .map(|k| ((k[0] * k[0] + k[1] * k[1]) as f64).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn couplings(&self) -> impl Iterator<Item = Wave> + '_ {
        self.bands.keys().copied()
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        let (m, mp) = (self.basis.mode(i), self.basis.mode(j));
        let k = [m[0] - mp[0], m[1] - mp[1]];
        self.bands.get(&k).map_or(ZERO, |b| b.val[i])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.bands.get(&[0, 0]).map_or(vec![0.0; self.dimension()], |b| b.val.iter().map(|z| z.re).collect())
    }

    /// `y = P x` on the full basis.
    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![ZERO; self.dimension()];
        for b in self.bands.values() {
            for (i, yi) in y.iter_mut().enumerate() {
                if let Some(j) = b.col[i] {
                    *yi += b.val[i] * x[j];
                }
            }
        }
        y
    }

    /// `P x` for a sparse `x`, returned sparse.
    pub fn apply_sparse(&self, x: &SparseVector) -> BTreeMap<usize, Complex64> {
        let mut y: BTreeMap<usize, Complex64> = BTreeMap::new();
        for (&k, b) in &self.bands {
            for &(j, xj) in &x.entries {
                let m = self.basis.mode(j);
                if let Some(i) = self.basis.index([m[0] + k[0], m[1] + k[1]]) {
                    *y.entry(i).or_insert(ZERO) += b.val[i] * xj;
                }
            }
        }
        y
    }

    /// `max |P_{ij} − conj(P_{ji})|`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for (&k, b) in &self.bands {
            let Some(adj) = self.bands.get(&[-k[0], -k[1]]) else {
                if let Some(v) = b.col.iter().zip(&b.val).filter(|(c, _)| c.is_some()).map(|(_, v)| v.norm()).reduce(f64::max) {
                    worst = worst.max(v);
                }
                continue;
            };
            for i in 0..b.val.len() {
                if let Some(j) = b.col[i] {
                    worst = worst.max((b.val[i] - adj.val[j].conj()).norm());
                }
            }
        }
        worst
    }

    /// Connected components of the coupling graph, each sorted.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.dimension();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (&k, b) in &self.bands {
            if k == [0, 0] {
                continue;
            }
            for i in 0..n {
                if let Some(j) = b.col[i] {
                    if b.val[i] != ZERO {
                        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                        if ri != rj {
                            parent[ri.max(rj)] = ri.min(rj);
                        }
                    }
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
        groups.into_values().collect()
    }
}

/// Assembles `Op^W(p)` at `(h, t)` on the given basis.
pub fn build_operator(ham: &FourierPolyHamiltonian, basis: &BasisTruncation, t: f64) -> Result<HermitianOperatorMatrix> {
    let symbol = ham.symbol();
    let mut bands = BTreeMap::new();
    for k in symbol.support() {
        let rows: Vec<(Option<usize>, Complex64)> = exec::map_range(basis.len(), |i| {
            let m = basis.mode(i);
            let mp = [m[0] - k[0], m[1] - k[1]];
            match basis.index(mp) {
                Some(j) => (Some(j), matrix_element(symbol, m, mp, basis.h, t, basis.offset)),
                None => (None, ZERO),
            }
        });
        let (col, val) = rows.into_iter().unzip();
        bands.insert(k, Band { col, val });
    }
    let mat = HermitianOperatorMatrix {
        basis: basis.clone(),
        t,
        bands,
    };
    let defect = mat.hermitian_defect();
    if defect > 1e-14 {
        return Err(Error::SymmetryViolation(format!("assembled matrix is not Hermitian: defect {defect:e}")));
    }
    Ok(mat)
}

/// Unit vector stored by basis index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub dim: usize,
    /// `(basis index, coefficient)` sorted by index.
    pub entries: Vec<(usize, Complex64)>,
}

impl SparseVector {
    pub fn basis_vector(dim: usize, i: usize) -> Self {
        SparseVector {
            dim,
            entries: vec![(i, Complex64::new(1.0, 0.0))],
        }
    }

    pub fn from_map(dim: usize, map: BTreeMap<usize, Complex64>) -> Self {
        SparseVector {
            dim,
            entries: map.into_iter().collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, z)| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            for (_, z) in &mut self.entries {
                *z /= n;
            }
        }
        self
    }

    pub fn get(&self, i: usize) -> Complex64 {
        self.entries.binary_search_by_key(&i, |e| e.0).map_or(ZERO, |p| self.entries[p].1)
    }
}

/// `Σ conj(u_k) v_k`.
pub fn overlap(u: &SparseVector, v: &SparseVector) -> Result<Complex64> {
    if u.dim != v.dim {
        return Err(Error::DimensionMismatch { left: u.dim, right: v.dim });
    }
    let (mut i, mut j) = (0, 0);
    let mut acc = ZERO;
    while i < u.entries.len() && j < v.entries.len() {
        let (a, b) = (u.entries[i], v.entries[j]);
        match a.0.cmp(&b.0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a.1.conj() * b.1;
                i += 1;
                j += 1;
            }
        }
    }
    Ok(acc)
}

/// `‖(P − μ) v‖₂`.
pub fn residual_norm(mat: &HermitianOperatorMatrix, v: &SparseVector, mu: f64) -> f64 {
    let mut pv = mat.apply_sparse(v);
    for &(i, z) in &v.entries {
        *pv.entry(i).or_insert(ZERO) -= z * mu;
    }
    pv.values().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenWindowResult {
    pub window: [f64; 2],
    pub dimension: usize,
    pub eigenvalues: Vec<f64>,
    pub vectors: Vec<SparseVector>,
    pub residuals: Vec<f64>,
    /// Mass of each eigenvector on the outer shell of the truncation.
    pub shell_mass: Vec<f64>,
}

impl EigenWindowResult {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Indices of eigenvalues in `[lo, hi]`.
    pub fn indices_in(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let a = self.eigenvalues.partition_point(|&e| e < lo);
        let b = self.eigenvalues.partition_point(|&e| e <= hi);
        a..b.max(a)
    }

    pub fn count_in(&self, lo: f64, hi: f64) -> usize {
        self.indices_in(lo, hi).len()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "index,eigenvalue,residual,shell_mass")?;
        for i in 0..self.len() {
            writeln!(w, "{},{},{},{}", i, self.eigenvalues[i], self.residuals[i], self.shell_mass[i])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub shell_tol: f64,
    /// Largest coupled block solved densely.
    pub max_block: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            shell_tol: 1e-6,
            max_block: 4000,
        }
    }
}

struct BlockPairs {
    values: Vec<f64>,
    vectors: Vec<Vec<Complex64>>,
}

fn solve_block(mat: &HermitianOperatorMatrix, block: &[usize]) -> BlockPairs {
    let n = block.len();
    let mut dense = DMatrix::<Complex64>::zeros(n, n);
    let local: BTreeMap<usize, usize> = block.iter().enumerate().map(|(a, &i)| (i, a)).collect();
    for b in mat.bands.values() {
        for (a, &i) in block.iter().enumerate() {
            if let Some(j) = b.col[i] {
                if let Some(&c) = local.get(&j) {
                    dense[(a, c)] += b.val[i];
                }
            }
        }
    }
    if dense.iter().all(|z| z.im == 0.0) {
        let real = dense.map(|z| z.re);
        let eig = SymmetricEigen::new(real);
        let vectors = (0..n).map(|c| eig.eigenvectors.column(c).iter().map(|&x| Complex64::new(x, 0.0)).collect()).collect();
        BlockPairs {
            values: eig.eigenvalues.iter().copied().collect(),
            vectors,
        }
    } else {
        let eig = SymmetricEigen::new(dense);
        let vectors = (0..n).map(|c| eig.eigenvectors.column(c).iter().copied().collect()).collect();
        BlockPairs {
            values: eig.eigenvalues.iter().copied().collect(),
            vectors,
        }
    }
}

/// All eigenpairs with eigenvalue in `[a, b]`.
///
/// The coupling graph is split into connected blocks; only blocks whose
/// Gershgorin interval meets the window are diagonalised.
pub fn eigensolve_window(mat: &HermitianOperatorMatrix, a: f64, b: f64, opts: &SolverOptions) -> Result<EigenWindowResult> {
    let dim = mat.dimension();
    let diag = mat.diagonal();
    let mut radius = vec![0.0f64; dim];
    for (&k, band) in &mat.bands {
        if k == [0, 0] {
            continue;
        }
        for i in 0..dim {
            if band.col[i].is_some() {
                radius[i] += band.val[i].norm();
            }
        }
    }
    let blocks: Vec<Vec<usize>> = mat
        .components()
        .into_iter()
        .filter(|blk| {
            let lo = blk.iter().map(|&i| diag[i] - radius[i]).fold(f64::INFINITY, f64::min);
            let hi = blk.iter().map(|&i| diag[i] + radius[i]).fold(f64::NEG_INFINITY, f64::max);
            hi >= a && lo <= b
        })
        .collect();
    if let Some(big) = blocks.iter().find(|blk| blk.len() > opts.max_block) {
        return Err(Error::SolverFailure(format!("coupled block of size {} exceeds limit {}", big.len(), opts.max_block)));
    }
    let solved = exec::map_slice(&blocks, |blk| solve_block(mat, blk));
    let scale = diag.iter().fold(1.0f64, |s, d| s.max(d.abs()));
    let mut pairs: Vec<(f64, SparseVector)> = Vec::new();
    for (blk, sol) in blocks.iter().zip(solved) {
        for (val, vec) in sol.values.into_iter().zip(sol.vectors) {
            if val < a || val > b {
                continue;
            }
            let entries = blk.iter().zip(vec).filter(|(_, z)| *z != ZERO).map(|(&i, z)| (i, z)).collect();
            pairs.push((val, SparseVector { dim, entries }));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.entries[0].0.cmp(&y.1.entries[0].0)));
    let mut out = EigenWindowResult {
        window: [a, b],
        dimension: dim,
        eigenvalues: Vec::with_capacity(pairs.len()),
        vectors: Vec::with_capacity(pairs.len()),
        residuals: Vec::with_capacity(pairs.len()),
        shell_mass: Vec::with_capacity(pairs.len()),
    };
    for (val, vec) in pairs {
        let res = residual_norm(mat, &vec, val);
        if res > opts.tol * scale {
            return Err(Error::SolverFailure(format!("eigenpair at {val} has residual {res:e}")));
        }
        let shell: f64 = vec.entries.iter().filter(|(i, _)| mat.basis.in_shell(*i)).map(|(_, z)| z.norm_sqr()).sum();
        if shell > opts.shell_tol {
            return Err(Error::BoundaryContamination {
                eigenvalue: val,
                shell_mass: shell,
            });
        }
        out.eigenvalues.push(val);
        out.residuals.push(res);
        out.shell_mass.push(shell);
        out.vectors.push(vec);
    }
    Ok(out)
}

/// First-order Rayleigh–Schrödinger quasimode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasimodeVector {
    pub m: Wave,
    pub order: u8,
    pub vector: SparseVector,
}

/// `v_m ∝ e_m + t Σ_k c′_k(h(m + k/2 + ϑ/4)) / (H⁰(I_m) − H⁰(I_{m+k})) e_{m+k}`.
pub fn build_quasimode(ham: &FourierPolyHamiltonian, basis: &BasisTruncation, m: Wave, t: f64, divisor_tol: f64) -> Result<QuasimodeVector> {
    let i = basis.index(m).ok_or(Error::OutOfBasis { m })?;
    let e_m = ham.h0(basis.action(m));
    let mut map = BTreeMap::new();
    map.insert(i, Complex64::new(1.0, 0.0));
    if t != 0.0 {
        for (&k, q) in ham.oscillatory_terms() {
            let n = [m[0] + k[0], m[1] + k[1]];
            let j = basis.index(n).ok_or(Error::OutOfBasis { m: n })?;
            let gap = e_m - ham.h0(basis.action(n));
            if gap.abs() < divisor_tol {
                return Err(Error::NearDegeneracy { m, k, gap });
            }
            let mid = [
                basis.h * (m[0] as f64 + 0.5 * k[0] as f64 + basis.offset[0]),
                basis.h * (m[1] as f64 + 0.5 * k[1] as f64 + basis.offset[1]),
            ];
            *map.entry(j).or_insert(ZERO) += q.eval(mid, 0.0) * (t / gap);
        }
    }
    Ok(QuasimodeVector {
        m,
        order: 1,
        vector: SparseVector::from_map(basis.len(), map).normalized(),
    })
}

/// Default quasimode divisor tolerance relative to the largest `|H⁰|` on the basis.
pub fn default_divisor_tol(ham: &FourierPolyHamiltonian, basis: &BasisTruncation) -> f64 {
    let scale = basis.modes().iter().map(|&m| ham.h0(basis.action(m)).abs()).fold(0.0, f64::max);
    1e-8 * scale.max(f64::MIN_POSITIVE)
}

/// Hex sha256 identifying `(H, h, t, truncation, ϑ)`.
pub fn truncation_hash(ham: &FourierPolyHamiltonian, basis: &BasisTruncation, t: f64) -> String {
    let key = serde_json::json!({
        "hamiltonian": ham.to_document(),
        "h": basis.h,
        "t": t,
        "truncation": basis.mode,
        "offset": basis.offset,
    });
    hex(&Sha256::digest(key.to_string().as_bytes()))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

const MAGIC: &[u8; 4] = b"KSEW";
const VERSION: u32 = 1;

/// Binary container: magic, version, `h`, `t`, window, dimension, the
/// 32-byte truncation hash, then each eigenpair with its diagnostics and
/// sparse coefficients. All numbers little-endian.
pub fn write_eigen_container(path: &Path, res: &EigenWindowResult, h: f64, t: f64, hash_hex: &str) -> Result<()> {
    let hash = decode_hex(hash_hex)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_f64::<LittleEndian>(h)?;
    w.write_f64::<LittleEndian>(t)?;
    w.write_f64::<LittleEndian>(res.window[0])?;
    w.write_f64::<LittleEndian>(res.window[1])?;
    w.write_u64::<LittleEndian>(res.dimension as u64)?;
    w.write_all(&hash)?;
    w.write_u64::<LittleEndian>(res.len() as u64)?;
    for i in 0..res.len() {
        w.write_f64::<LittleEndian>(res.eigenvalues[i])?;
        w.write_f64::<LittleEndian>(res.residuals[i])?;
        w.write_f64::<LittleEndian>(res.shell_mass[i])?;
        let v = &res.vectors[i];
        w.write_u64::<LittleEndian>(v.entries.len() as u64)?;
        for &(j, z) in &v.entries {
            w.write_u64::<LittleEndian>(j as u64)?;
            w.write_f64::<LittleEndian>(z.re)?;
            w.write_f64::<LittleEndian>(z.im)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Header fields of an eigen container.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenHeader {
    pub h: f64,
    pub t: f64,
    pub hash: String,
}

pub fn read_eigen_container(path: &Path) -> Result<(EigenHeader, EigenWindowResult)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = &bytes[..];
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not an eigen container".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let h = r.read_f64::<LittleEndian>()?;
    let t = r.read_f64::<LittleEndian>()?;
    let window = [r.read_f64::<LittleEndian>()?, r.read_f64::<LittleEndian>()?];
    let dimension = r.read_u64::<LittleEndian>()? as usize;
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash)?;
    let n = r.read_u64::<LittleEndian>()? as usize;
    let mut res = EigenWindowResult {
        window,
        dimension,
        eigenvalues: Vec::with_capacity(n),
        vectors: Vec::with_capacity(n),
        residuals: Vec::with_capacity(n),
        shell_mass: Vec::with_capacity(n),
    };
    for _ in 0..n {
        res.eigenvalues.push(r.read_f64::<LittleEndian>()?);
        res.residuals.push(r.read_f64::<LittleEndian>()?);
        res.shell_mass.push(r.read_f64::<LittleEndian>()?);
        let nnz = r.read_u64::<LittleEndian>()? as usize;
        let mut entries = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            let j = r.read_u64::<LittleEndian>()? as usize;
            entries.push((j, Complex64::new(r.read_f64::<LittleEndian>()?, r.read_f64::<LittleEndian>()?)));
        }
        res.vectors.push(SparseVector { dim: dimension, entries });
    }
    if !r.is_empty() {
        return Err(Error::Format("trailing bytes in eigen container".into()));
    }
    Ok((EigenHeader { h, t, hash: hex(&hash) }, res))
}

fn decode_hex(s: &str) -> Result<[u8; 32]> {
    if s.len() != 64 {
        return Err(Error::Format("hash must be 64 hex digits".into()));
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(out)
}

/// On-disk cache of windowed eigensolves.
#[derive(Debug, Clone)]
pub struct EigenCache {
    dir: PathBuf,
}

impl EigenCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        EigenCache { dir: dir.into() }
    }

    pub fn path_for(&self, hash: &str, window: [f64; 2]) -> PathBuf {
        let key = hex(&Sha256::digest(format!("{hash}:{}:{}", window[0], window[1]).as_bytes()));
        self.dir.join(format!("{}.eig", &key[..32]))
    }

    /// Returns a cached result for the same operator and window, or solves and stores it.
    pub fn solve(&self, ham: &FourierPolyHamiltonian, mat: &HermitianOperatorMatrix, window: [f64; 2], opts: &SolverOptions) -> Result<EigenWindowResult> {
        let hash = truncation_hash(ham, &mat.basis, mat.t);
        let path = self.path_for(&hash, window);
        if path.exists() {
            if let Ok((header, res)) = read_eigen_container(&path) {
                if header.hash == hash && res.dimension == mat.dimension() {
                    return Ok(res);
                }
            }
        }
        let res = eigensolve_window(mat, window[0], window[1], opts)?;
        fs::create_dir_all(&self.dir)?;
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        write_eigen_container(&tmp, &res, mat.h(), mat.t, &hash)?;
        fs::rename(&tmp, &path)?;
        Ok(res)
    }
}

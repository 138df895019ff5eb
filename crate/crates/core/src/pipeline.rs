//! Batch commands: each one reads an [`ExperimentConfig`], writes its
//! artifacts under `<output_dir>/<command>/` and finishes with a manifest.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, SCHEMA_VERSION};
use crate::diophantine::{index_set_mask, nonresonant_action_set, ActionLattice, NonresonantActionSet};
use crate::error::{Error, Result};
use crate::hamiltonian::FourierPolyHamiltonian;
use crate::normal_form::{write_quasispectrum_csv, NormalForm, QuasiEigenvalue};
use crate::quantize::{build_operator, hex, truncation_hash, write_eigen_container, BasisTruncation, EigenCache};
use crate::scarring::{coverage_report, r_ratio, ScarCell, ScarReport, REPORT_SCHEMA_VERSION};
use crate::spectral_flow::{
    build_levels, epsilon_scaling_fit, n1_n2_report, spacing_audit, windowed_crossing_audit, write_violations_csv,
    AuditConstants,
};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    /// Path relative to the command directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub versions: BTreeMap<String, String>,
    pub stages: Vec<StageTiming>,
    pub files: Vec<ManifestFile>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    /// Recomputes every digest and reports the first file that no longer matches.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for f in &self.files {
            if file_digest(&dir.join(&f.path))? != f.sha256 {
                return Err(Error::Format(format!("digest mismatch for {}", f.path)));
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_NAME))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(fs::read(path)?)))
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    hex(&Sha256::digest(cfg.to_toml().as_bytes()))
}

fn versions() -> BTreeMap<String, String> {
    [
        ("kamscar", env!("CARGO_PKG_VERSION").to_string()),
        ("config_schema", SCHEMA_VERSION.to_string()),
        ("scar_report_schema", REPORT_SCHEMA_VERSION.to_string()),
        ("eigen_container", "1".to_string()),
        ("parallel", crate::exec::is_parallel().to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Result of one command: where it wrote, what it wrote, and a short summary.
#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub summary: serde_json::Value,
}

impl CommandOutput {
    pub fn warnings(&self) -> &[String] {
        &self.manifest.warnings
    }
}

struct Run {
    command: &'static str,
    dir: PathBuf,
    config_hash: String,
    files: Vec<PathBuf>,
    stages: Vec<StageTiming>,
    warnings: Vec<String>,
}

impl Run {
    fn start(cfg: &ExperimentConfig, command: &'static str) -> Result<Self> {
        let dir = cfg.output_dir.join(command);
        fs::create_dir_all(&dir)?;
        Ok(Run {
            command,
            dir,
            config_hash: config_hash(cfg),
            files: Vec::new(),
            stages: Vec::new(),
            warnings: Vec::new(),
        })
    }

    fn path(&mut self, name: impl AsRef<Path>) -> Result<PathBuf> {
        let p = self.dir.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        self.files.push(p.clone());
        Ok(p)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name)?;
        fs::write(p, serde_json::to_string_pretty(value).expect("serialisable") + "\n")?;
        Ok(())
    }

    fn stage<T>(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(self)?;
        self.stages.push(StageTiming {
            stage: name.into(),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(out)
    }

    fn warn(&mut self, msg: String) {
        self.warnings.push(msg);
    }

    fn finish(self, summary: serde_json::Value) -> Result<CommandOutput> {
        let mut files = Vec::with_capacity(self.files.len());
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.files {
            if !seen.insert(p.clone()) {
                continue;
            }
            let rel = p.strip_prefix(&self.dir).unwrap_or(p).to_string_lossy().replace('\\', "/");
            files.push(ManifestFile {
                path: rel,
                bytes: fs::metadata(p)?.len(),
                sha256: file_digest(p)?,
            });
        }
        files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            command: self.command.to_string(),
            config_hash: self.config_hash,
            versions: versions(),
            stages: self.stages,
            files,
            warnings: self.warnings,
        };
        fs::write(
            self.dir.join(MANIFEST_NAME),
            serde_json::to_string_pretty(&manifest).expect("serialisable") + "\n",
        )?;
        Ok(CommandOutput {
            dir: self.dir,
            manifest,
            summary,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisNode {
    pub action: [f64; 2],
    pub hessian_det: f64,
    pub transversality_det: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub nodes: Vec<HypothesisNode>,
    pub min_abs_hessian: f64,
    pub min_abs_transversality: f64,
}

/// Evaluates both determinants on an `n × n` node grid over the domain's
/// rectangle (nodes outside the domain are dropped). A determinant that is
/// within `tol` of zero, or that changes sign between neighbouring nodes,
/// is reported at the node of smallest magnitude.
pub fn hypothesis_grid(ham: &FourierPolyHamiltonian, n: usize, tol: f64) -> Result<HypothesisReport> {
    let d = ham.domain();
    let r = d.rect;
    let step = [(r.hi[0] - r.lo[0]) / (n - 1) as f64, (r.hi[1] - r.lo[1]) / (n - 1) as f64];
    let mut grid: Vec<Option<HypothesisNode>> = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let a = [r.lo[0] + i as f64 * step[0], r.lo[1] + j as f64 * step[1]];
            grid.push(d.contains(a).then(|| HypothesisNode {
                action: a,
                hessian_det: ham.hessian_det(a),
                transversality_det: ham.transversality_det(a),
            }));
        }
    }
    type Pick = fn(&HypothesisNode) -> f64;
    let checks: [(&'static str, Pick); 2] = [
        ("hessian_det", |x| x.hessian_det),
        ("transversality_det", |x| x.transversality_det),
    ];
    for (name, pick) in checks {
        let mut worst: Option<HypothesisNode> = None;
        let mut vanishes = false;
        for j in 0..n {
            for i in 0..n {
                let Some(node) = grid[j * n + i] else { continue };
                let v = pick(&node);
                if worst.is_none_or(|w| v.abs() < pick(&w).abs()) {
                    worst = Some(node);
                }
                if v.abs() <= tol || !v.is_finite() {
                    vanishes = true;
                }
                for nb in [(i + 1 < n).then(|| j * n + i + 1), (j + 1 < n).then(|| (j + 1) * n + i)].into_iter().flatten() {
                    if let Some(other) = grid[nb] {
                        if v * pick(&other) < 0.0 {
                            vanishes = true;
                        }
                    }
                }
            }
        }
        if vanishes {
            let w = worst.expect("a vanishing determinant has a node");
            return Err(Error::HypothesisViolation {
                quantity: name,
                at: w.action,
                value: pick(&w),
            });
        }
    }
    let nodes: Vec<HypothesisNode> = grid.into_iter().flatten().collect();
    if nodes.is_empty() {
        return Err(Error::Config("hypothesis grid has no node inside the domain".into()));
    }
    Ok(HypothesisReport {
        min_abs_hessian: nodes.iter().map(|x| x.hessian_det.abs()).fold(f64::INFINITY, f64::min),
        min_abs_transversality: nodes.iter().map(|x| x.transversality_det.abs()).fold(f64::INFINITY, f64::min),
        nodes,
    })
}

pub fn cmd_check_hypotheses(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    cfg.validate()?;
    let ham = cfg.build_hamiltonian()?;
    let mut run = Run::start(cfg, "check-hypotheses")?;
    let report = run.stage("grid", |_| hypothesis_grid(&ham, cfg.hypotheses.grid, cfg.hypotheses.tolerance))?;
    let p = run.path("hypotheses.csv")?;
    let mut w = BufWriter::new(File::create(p)?);
    writeln!(w, "I1,I2,hessian_det,transversality_det")?;
    for n in &report.nodes {
        writeln!(w, "{},{},{},{}", n.action[0], n.action[1], n.hessian_det, n.transversality_det)?;
    }
    w.flush()?;
    let summary = json!({
        "nodes": report.nodes.len(),
        "min_abs_hessian_det": report.min_abs_hessian,
        "min_abs_transversality_det": report.min_abs_transversality,
        "pass": true,
    });
    run.json("summary.json", &summary)?;
    run.finish(summary)
}

fn check_preconditions(cfg: &ExperimentConfig, ham: &FourierPolyHamiltonian) -> Result<()> {
    hypothesis_grid(ham, cfg.hypotheses.grid, cfg.hypotheses.tolerance).map(|_| ())
}

/// `E_κ(t)` on the grid needed by the smallest `h` in `h_list`.
fn shared_set(ham: &FourierPolyHamiltonian, cfg: &ExperimentConfig, t: f64, h_list: &[f64], grid_factor: f64) -> Result<NonresonantActionSet> {
    let h_min = h_list.iter().copied().fold(f64::INFINITY, f64::min);
    nonresonant_action_set(ham, t, &cfg.diophantine, cfg.tube * h_min / grid_factor)
}

pub fn cmd_quasispectrum(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    cfg.validate()?;
    let ham = cfg.build_hamiltonian()?;
    check_preconditions(cfg, &ham)?;
    let q = &cfg.quasispectrum;
    let nf = NormalForm::with_order(&ham, q.order);
    let mut run = Run::start(cfg, "quasispectrum")?;
    let lattices = run.stage("lattice", |run| {
        let mut out = Vec::new();
        for (hi, &h) in q.h_list.iter().enumerate() {
            let lattice = ActionLattice::new(h, cfg.theta_over_4, ham.domain())?;
            let p = run.path(format!("lattice_h{hi}.csv"))?;
            let mut w = BufWriter::new(File::create(p)?);
            writeln!(w, "m1,m2,I1,I2")?;
            for &m in &lattice.points {
                let a = lattice.action(m);
                writeln!(w, "{},{},{},{}", m[0], m[1], a[0], a[1])?;
            }
            w.flush()?;
            out.push(lattice);
        }
        Ok(out)
    })?;
    let mut cells = Vec::new();
    for (ti, &t) in q.t_list.iter().enumerate() {
        let set = run.stage(format!("ekappa_t{ti}"), |run| {
            let set = shared_set(&ham, cfg, t, &q.h_list, q.grid_factor)?;
            set.write_binary(&run.path(format!("ekappa_t{ti}.bin"))?)?;
            Ok(set)
        })?;
        if set.mask.count() == 0 {
            run.warn(format!("E_kappa(t = {t}) is empty on the grid"));
        }
        for (hi, lattice) in lattices.iter().enumerate() {
            let rows = run.stage(format!("quasi_h{hi}_t{ti}"), |run| {
                let in_mh = index_set_mask(lattice, &set, cfg.tube)?;
                let p = run.path(format!("mh_h{hi}_t{ti}.csv"))?;
                let mut w = BufWriter::new(File::create(p)?);
                writeln!(w, "m1,m2")?;
                for (m, _) in lattice.points.iter().zip(&in_mh).filter(|(_, &f)| f) {
                    writeln!(w, "{},{}", m[0], m[1])?;
                }
                w.flush()?;
                let rows: Vec<QuasiEigenvalue> = nf
                    .quasispectrum(lattice, t)?
                    .into_iter()
                    .zip(&in_mh)
                    .filter_map(|(r, &f)| f.then_some(r))
                    .collect();
                write_quasispectrum_csv(&run.path(format!("quasi_h{hi}_t{ti}.csv"))?, &rows)?;
                Ok(rows)
            })?;
            if rows.is_empty() {
                run.warn(format!("M_h(t) is empty for h = {}, t = {t}", lattice.h));
            }
            cells.push(json!({
                "h": lattice.h,
                "t": t,
                "lattice_points": lattice.len(),
                "mh_count": rows.len(),
                "ekappa_measure": set.measure(),
                "quasi_file": format!("quasi_h{hi}_t{ti}.csv"),
            }));
        }
    }
    let summary = json!({ "order": q.order, "cells": cells });
    run.json("summary.json", &summary)?;
    run.finish(summary)
}

pub fn cmd_flow_stats(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    cfg.validate()?;
    let ham = cfg.build_hamiltonian()?;
    check_preconditions(cfg, &ham)?;
    let fc = cfg.flow_config();
    fc.check_t_resolution()?;
    let order = cfg.quasispectrum.order;
    let nf = NormalForm::with_order(&ham, order);
    let mut run = Run::start(cfg, "flow-stats")?;
    let derived = AuditConstants::derive(&ham, cfg.diophantine.kappa, fc.t0);
    let c1 = fc.c1.unwrap_or(derived.c1);
    let c2 = fc.c2.unwrap_or(derived.c2);
    let levels = run.stage("levels", |_| build_levels(&ham, &fc, order))?;
    let t_grid = fc.t_grid();
    let audits = run.stage("spacing", |run| {
        let mut audits = Vec::new();
        for level in &levels {
            for (i, &t) in t_grid.iter().enumerate() {
                audits.push(spacing_audit(&nf, &level.lattice, &level.membership[i], t, c1, c2)?);
            }
        }
        write_violations_csv(&run.path("violations.csv")?, &audits)?;
        Ok(audits)
    })?;
    let n_violations: usize = audits.iter().map(|a| a.violations.len()).sum();
    if n_violations > 0 {
        run.warn(format!("{n_violations} spacing violations recorded in violations.csv"));
    }
    let mut per_h = Vec::new();
    let mut proxies = Vec::new();
    for (hi, level) in levels.iter().enumerate() {
        let (report, windowed) = run.stage(format!("ab_h{hi}"), |run| {
            let sets = level.all_ab_sets(&fc);
            run.json(&format!("ab_sets_h{hi}.json"), &sets)?;
            let report = n1_n2_report(level, &sets, &fc);
            report.write_csv(&run.path(format!("flow_h{hi}.csv"))?)?;
            let windowed = windowed_crossing_audit(level, &fc, c1, fc.triples, fc.seed.wrapping_add(hi as u64));
            Ok((report, windowed))
        })?;
        proxies.push(report.epsilon_proxy());
        let spacing: Vec<_> = audits.iter().filter(|a| a.h == level.h).collect();
        per_h.push(json!({
            "h": level.h,
            "epsilon": report.epsilon,
            "epsilon_proxy": report.epsilon_proxy(),
            "audited": report.audited,
            "b_fraction": report.b_fraction,
            "good_fraction": report.good_fraction,
            "total_a": report.total_a,
            "total_b": report.total_b,
            "spacing_pairs": spacing.iter().map(|a| a.pairs).sum::<usize>(),
            "spacing_violations": spacing.iter().map(|a| a.violations.len()).sum::<usize>(),
            "min_spacing_ratio": spacing.iter().map(|a| a.min_ratio).fold(f64::INFINITY, f64::min),
            "windowed": windowed,
        }));
    }
    let fit = match epsilon_scaling_fit(&fc.h_list, &proxies, fc.gamma) {
        Ok(fit) => json!(fit),
        Err(e @ Error::InsufficientData { .. }) => {
            run.warn(format!("epsilon fit skipped: {e}"));
            json!({ "error": e.to_string() })
        }
        Err(e) => return Err(e),
    };
    let summary = json!({
        "constants": { "s": derived.s, "kappa": derived.kappa, "c1": c1, "c2": c2 },
        "t0": fc.t0,
        "n_t": fc.n_t,
        "violations": n_violations,
        "levels": per_h,
        "epsilon_fit": fit,
    });
    run.json("summary.json", &summary)?;
    run.finish(summary)
}

pub fn cmd_eigensolve(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    cfg.validate()?;
    let ham = cfg.build_hamiltonian()?;
    let e = &cfg.eigensolve;
    let mut run = Run::start(cfg, "eigensolve")?;
    let basis = run.stage("basis", |_| BasisTruncation::new(&ham, e.h, cfg.theta_over_4, cfg.eigen_truncation()))?;
    let mat = run.stage("assemble", |_| build_operator(&ham, &basis, e.t))?;
    let cache = EigenCache::new(cfg.cache_dir());
    let res = run.stage("solve", |_| cache.solve(&ham, &mat, e.window, &cfg.solver_options()))?;
    let hash = truncation_hash(&ham, &basis, e.t);
    write_eigen_container(&run.path("eigen.ksew")?, &res, e.h, e.t, &hash)?;
    res.write_csv(&run.path("eigen.csv")?)?;
    let summary = json!({
        "h": e.h,
        "t": e.t,
        "window": e.window,
        "dimension": res.dimension,
        "eigenvalues": res.len(),
        "max_residual": res.residuals.iter().copied().fold(0.0, f64::max),
        "max_shell_mass": res.shell_mass.iter().copied().fold(0.0, f64::max),
        "truncation_hash": hash,
    });
    run.json("summary.json", &summary)?;
    run.finish(summary)
}

/// Suggested axes for each plot-data file.
fn plot_axes(name: &str) -> serde_json::Value {
    match name {
        "mass_vs_action.csv" => json!({ "x": "action_norm", "y": "torus_mass", "kind": "scatter" }),
        "overlap_histogram.csv" => json!({ "x": "bin_center", "y": "count", "kind": "bar" }),
        "coverage_vs_h.csv" => json!({ "x": "h", "y": "fraction", "kind": "line", "log_x": true }),
        _ => json!({}),
    }
}

pub fn cmd_scar_report(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    cfg.validate()?;
    let ham = cfg.build_hamiltonian()?;
    check_preconditions(cfg, &ham)?;
    let sc = cfg.scar_config();
    let s = &cfg.scar;
    let cache = EigenCache::new(cfg.cache_dir());
    let mut run = Run::start(cfg, "scar-report")?;
    let mut reports: Vec<(usize, ScarReport)> = Vec::new();
    let mut cells = Vec::new();
    let mut plots = BTreeMap::new();
    for (hi, &h) in s.h_list.iter().enumerate() {
        let prepared = run.stage(format!("prepare_h{hi}"), |_| {
            match ScarCell::prepare(&ham, h, s.t, cfg.theta_over_4, &cfg.diophantine, &sc, Some(&cache)) {
                Ok(c) => Ok(Ok(c)),
                Err(e @ Error::BoundaryContamination { .. }) => Ok(Err(e)),
                Err(e) => Err(e),
            }
        })?;
        let cell = match prepared {
            Ok(c) => c,
            Err(e) => {
                run.warn(format!("cell h = {h}, t = {} aborted: {e}", s.t));
                cells.push(json!({ "h": h, "t": s.t, "status": "aborted", "error": e.to_string() }));
                continue;
            }
        };
        let report = run.stage(format!("report_h{hi}"), |run| {
            let r = r_ratio(&ham, s.t, s.band, &cell.bbox(), &cell.set, s.mc_samples, cfg.seed)?;
            let report = cell.report(&ham, &sc, r)?;
            report.write_json(&run.path(format!("scar_h{hi}.json"))?)?;
            report.write_csv(&run.path(format!("scar_h{hi}.csv"))?)?;
            let sub = run.dir.join(format!("plots_h{hi}"));
            fs::create_dir_all(&sub)?;
            for p in report.write_plot_data(&sub)? {
                run.files.push(p);
            }
            Ok(report)
        })?;
        for name in ["mass_vs_action.csv", "overlap_histogram.csv"] {
            plots.insert(format!("plots_h{hi}/{name}"), plot_axes(name));
        }
        cells.push(json!({
            "h": h,
            "t": s.t,
            "status": "ok",
            "r": report.r.r,
            "isolated": report.isolated,
            "selected": report.rows.iter().filter(|r| r.in_btilde).count(),
            "audited": report.audited().count(),
            "all_pass": report.all_pass(),
        }));
        reports.push((hi, report));
    }
    let coverage = run.stage("coverage", |run| {
        let set = shared_set(&ham, cfg, s.t, &s.h_list, s.grid_factor)?;
        let selections: Vec<(f64, Vec<[f64; 2]>)> = reports.iter().map(|(_, r)| (r.h, r.selected_actions())).collect();
        let cov = coverage_report(&set, &selections, cfg.tube, s.lambda);
        run.json("coverage.json", &cov)?;
        let p = run.path("coverage_vs_h.csv")?;
        let mut w = BufWriter::new(File::create(p)?);
        writeln!(w, "h,fraction")?;
        for row in &cov.rows {
            writeln!(w, "{},{}", row.h, row.fraction)?;
        }
        w.flush()?;
        Ok(cov)
    })?;
    plots.insert("coverage_vs_h.csv".to_string(), plot_axes("coverage_vs_h.csv"));
    run.json("plots.json", &plots)?;
    let summary = json!({
        "lambda": s.lambda,
        "cells": cells,
        "coverage": coverage,
    });
    run.json("summary.json", &summary)?;
    run.finish(summary)
}

//! Experiment configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diophantine::DiophantineParams;
use crate::error::{Error, Result};
use crate::hamiltonian::{builtin_flat_torus, Domain, FourierPolyHamiltonian, HamiltonianDocument};
use crate::normal_form::Order;
use crate::quantize::{SolverOptions, TruncationMode};
use crate::scarring::ScarConfig;
use crate::spectral_flow::FlowConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable that relocates the eigensolve cache.
pub const CACHE_ENV: &str = "KAMSCAR_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HamiltonianSource {
    Builtin { name: String, coupling: f64 },
    File { path: PathBuf },
    Inline { document: HamiltonianDocument },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisSection {
    /// Nodes per side of the audit grid.
    pub grid: usize,
    /// Determinants at or below this magnitude count as vanishing.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuasiSection {
    pub h_list: Vec<f64>,
    pub t_list: Vec<f64>,
    pub order: Order,
    pub grid_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    pub t0: f64,
    pub n_t: usize,
    pub h_list: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
    pub eps_c: f64,
    pub grid_factor: f64,
    pub triples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigenSection {
    pub h: f64,
    pub t: f64,
    pub window: [f64; 2],
    pub e_cut: f64,
    pub rho_margin: f64,
    pub tol: f64,
    pub shell_tol: f64,
    pub max_block: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScarSection {
    pub lambda: f64,
    pub band: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_cut: Option<f64>,
    pub rho_margin: f64,
    pub mc_samples: usize,
    pub order: Order,
    pub grid_factor: f64,
    pub h_list: Vec<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub gamma: f64,
    /// Tube radius `L` in units of `h`.
    pub tube: f64,
    /// Maslov offset `ϑ/4` of the action lattice.
    pub theta_over_4: [f64; 2],
    pub hamiltonian: HamiltonianSource,
    /// Replaces the Hamiltonian's own domain when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
    pub diophantine: DiophantineParams,
    pub hypotheses: HypothesisSection,
    pub quasispectrum: QuasiSection,
    pub flow: FlowSection,
    pub eigensolve: EigenSection,
    pub scar: ScarSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            seed: 20_240_601,
            output_dir: PathBuf::from("out"),
            gamma: 4.0,
            tube: 1.0,
            theta_over_4: [0.0, 0.0],
            hamiltonian: HamiltonianSource::Builtin {
                name: "flat-torus".into(),
                coupling: 1.0,
            },
            domain: None,
            diophantine: DiophantineParams::new(0.2),
            hypotheses: HypothesisSection { grid: 33, tolerance: 1e-12 },
            quasispectrum: QuasiSection {
                h_list: vec![0.1, 1.0 / 32.0],
                t_list: vec![0.0, 0.01],
                order: Order::First,
                grid_factor: 8.0,
            },
            flow: FlowSection {
                t0: 0.2,
                n_t: 64,
                h_list: vec![1.0 / 16.0, 1.0 / 32.0],
                c1: None,
                c2: None,
                eps_c: 1.0,
                grid_factor: 4.0,
                triples: 200,
            },
            eigensolve: EigenSection {
                h: 1.0 / 32.0,
                t: 0.01,
                window: [0.5, 1.0],
                e_cut: 1.0,
                rho_margin: 1.5,
                tol: 1e-10,
                shell_tol: 1e-6,
                max_block: 4000,
            },
            scar: ScarSection {
                lambda: 4.0,
                band: [0.1, 1.6],
                delta: None,
                e_cut: None,
                rho_margin: 1.5,
                mc_samples: 1_000_000,
                order: Order::Second,
                grid_factor: 8.0,
                h_list: vec![1.0 / 16.0, 1.0 / 32.0],
                t: 0.01,
            },
        }
    }
}

fn positive_list(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() || v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(Error::Config(format!("{name} must be a nonempty list of positive numbers")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // File references are relative to the config file.
        if let HamiltonianSource::File { path: p } = &mut cfg.hamiltonian {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.diophantine.validate()?;
        if let Some(d) = &self.domain {
            d.rect.validate()?;
        }
        if self.hypotheses.grid < 2 || !(self.hypotheses.tolerance >= 0.0) {
            return Err(Error::Config("hypotheses.grid must be at least 2 and tolerance nonnegative".into()));
        }
        positive_list("quasispectrum.h_list", &self.quasispectrum.h_list)?;
        if self.quasispectrum.t_list.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config("quasispectrum.t_list must be finite".into()));
        }
        if !(self.quasispectrum.grid_factor >= 4.0) {
            return Err(Error::Config("quasispectrum.grid_factor must be at least 4".into()));
        }
        positive_list("scar.h_list", &self.scar.h_list)?;
        let e = &self.eigensolve;
        if !(e.h > 0.0) || !(e.window[0] < e.window[1]) || !(e.tol > 0.0) || !(e.shell_tol > 0.0) {
            return Err(Error::Config("eigensolve needs h > 0, a < b and positive tolerances".into()));
        }
        self.flow_config().validate()?;
        self.scar_config().validate()?;
        Ok(())
    }

    pub fn build_hamiltonian(&self) -> Result<FourierPolyHamiltonian> {
        let ham = match &self.hamiltonian {
            HamiltonianSource::Builtin { name, coupling } => match name.as_str() {
                "flat-torus" => builtin_flat_torus(*coupling),
                other => return Err(Error::Config(format!("unknown builtin Hamiltonian '{other}'"))),
            },
            HamiltonianSource::File { path } => FourierPolyHamiltonian::load(path).map_err(|e| match e {
                Error::Io(io) => Error::Config(format!("{}: {io}", path.display())),
                other => other,
            })?,
            HamiltonianSource::Inline { document } => FourierPolyHamiltonian::from_document(document)?,
        };
        match &self.domain {
            Some(d) => ham.with_domain(d.clone()),
            None => Ok(ham),
        }
    }

    pub fn flow_config(&self) -> FlowConfig {
        let f = &self.flow;
        FlowConfig {
            gamma: self.gamma,
            t0: f.t0,
            n_t: f.n_t,
            h_list: f.h_list.clone(),
            c1: f.c1,
            c2: f.c2,
            eps_c: f.eps_c,
            tube: self.tube,
            grid_factor: f.grid_factor,
            offset: self.theta_over_4,
            diophantine: self.diophantine,
            triples: f.triples,
            seed: self.seed,
        }
    }

    pub fn scar_config(&self) -> ScarConfig {
        let s = &self.scar;
        ScarConfig {
            lambda: s.lambda,
            tube: self.tube,
            delta: s.delta,
            band: s.band,
            gamma: self.gamma,
            e_cut: s.e_cut,
            rho_margin: s.rho_margin,
            mc_samples: s.mc_samples,
            seed: self.seed,
            order: s.order,
            grid_factor: s.grid_factor,
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.eigensolve.tol,
            shell_tol: self.eigensolve.shell_tol,
            max_block: self.eigensolve.max_block,
        }
    }

    pub fn eigen_truncation(&self) -> TruncationMode {
        TruncationMode::Energy {
            e_cut: self.eigensolve.e_cut,
            margin: self.eigensolve.rho_margin,
        }
    }

    /// The cache directory: `$KAMSCAR_CACHE_DIR` when set, else `<output_dir>/cache`.
    pub fn cache_dir(&self) -> PathBuf {
        match std::env::var_os(CACHE_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.join("cache"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        let cfg = ExperimentConfig {
            gamma: 3.0,
            ..ExperimentConfig::default()
        };
        assert!(matches!(ExperimentConfig::from_toml(&cfg.to_toml()), Err(Error::Config(_))));
        let cfg = ExperimentConfig {
            schema_version: 9,
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::default();
        cfg.scar.lambda = 1.0;
        assert!(cfg.validate().is_err());
        assert!(matches!(ExperimentConfig::from_toml("seed = 1"), Err(Error::Config(_))));
    }
}

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kamscar::config::ExperimentConfig;
use kamscar::pipeline::{self, CommandOutput};
use kamscar::Error;

/// Quasimode, spectral-flow and scarring audits for perturbed integrable systems on T².
#[derive(Parser)]
#[command(name = "kamscar", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Audit the nondegeneracy and transversality determinants over the domain.
    CheckHypotheses { config: PathBuf },
    /// Lattice, nonresonant-set masks, M_h(t) and quasieigenvalue tables per (h, t).
    Quasispectrum { config: PathBuf },
    /// Spacing audits, crossing sets, A/B measures, N1/N2 and the epsilon fit.
    FlowStats { config: PathBuf },
    /// Windowed eigensolve of the quantised operator (cached).
    Eigensolve { config: PathBuf },
    /// Overlap, scar-mass and coverage reports across h.
    ScarReport { config: PathBuf },
    /// Print the full default configuration as TOML.
    PrintDefaults,
}

type Handler = fn(&ExperimentConfig) -> Result<CommandOutput, Error>;

fn run(cmd: Command) -> Result<Option<CommandOutput>, Error> {
    let (config, f): (PathBuf, Handler) = match cmd {
        Command::PrintDefaults => {
            // A closed pipe (e.g. `| head`) is not an error.
            let _ = write!(std::io::stdout(), "{}", ExperimentConfig::default().to_toml());
            return Ok(None);
        }
        Command::CheckHypotheses { config } => (config, pipeline::cmd_check_hypotheses),
        Command::Quasispectrum { config } => (config, pipeline::cmd_quasispectrum),
        Command::FlowStats { config } => (config, pipeline::cmd_flow_stats),
        Command::Eigensolve { config } => (config, pipeline::cmd_eigensolve),
        Command::ScarReport { config } => (config, pipeline::cmd_scar_report),
    };
    let cfg = ExperimentConfig::load(&config)?;
    f(&cfg).map(Some)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(out)) => {
            for w in out.warnings() {
                eprintln!("warning: {w}");
            }
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&out.summary).unwrap_or_default());
            eprintln!("wrote {} files to {}", out.manifest.files.len(), out.dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! Command-line front end for configuration-driven runs.
//!
//! Exit codes: 0 success, 1 an audit failed, 2 bad configuration or
//! arguments, 3 numerical failure, 4 file-system error.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pme_lab::config::{preset, Experiment, RunConfig, PRESETS};
use pme_lab::runner::{execute, output_dir, write_outputs};
use pme_lab::Error;

#[derive(Parser)]
#[command(name = "pme-lab", version, about = "Porous medium equation with drift: splitting runs, audits and exponent algebra")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reference solve with CSV series and field dumps.
    Simulate(Overrides),
    /// Splitting refinement study against the monolithic reference.
    SplitStudy(Overrides),
    /// Estimate audits on a reference run.
    Audit(Overrides),
    /// Vertices and polygons of a region figure.
    Regions(Overrides),
    /// Threshold exponents, optionally with class verdicts for (q1, q2).
    Thresholds(Overrides),
    /// Keller-Segel run with Lyapunov and signal audits.
    Ks(Overrides),
    /// Print a preset as a configuration file.
    ShowPreset { name: String },
}

#[derive(Args)]
struct Overrides {
    /// Configuration file (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset used as the base configuration.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    m: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    /// Dimension for the exponent algebra.
    #[arg(long)]
    d: Option<u32>,
    /// Cells per axis.
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    figure: Option<String>,
    #[arg(long)]
    theorem: Option<String>,
    #[arg(long)]
    q1: Option<f64>,
    #[arg(long)]
    q2: Option<f64>,
}

impl Overrides {
    fn resolve(&self, experiment: Experiment) -> pme_lab::Result<RunConfig> {
        let mut cfg = if let Some(path) = &self.config {
            let src = std::fs::read_to_string(path)
                .map_err(|e| Error::Config { line: 0, message: format!("cannot read {}: {e}", path.display()) })?;
            RunConfig::parse(&src)?
        } else if let Some(name) = &self.preset {
            preset(name)?
        } else {
            RunConfig::new(experiment)
        };
        cfg.experiment = experiment;
        if let Some(m) = self.m {
            cfg.model.m = m;
        }
        if let Some(q) = self.q {
            cfg.model.q = q;
        }
        if self.d.is_some() {
            cfg.model.d = self.d;
        }
        if let Some(n) = self.cells {
            cfg.grid.cells = n;
        }
        if let Some(s) = self.steps {
            cfg.time.steps = s;
        }
        if let Some(t) = self.horizon {
            cfg.time.horizon = t;
        }
        if self.figure.is_some() {
            cfg.regions.figure = self.figure.clone();
        }
        if self.theorem.is_some() {
            cfg.regions.theorem = self.theorem.clone();
        }
        if self.q1.is_some() {
            cfg.regions.q1 = self.q1;
        }
        if self.q2.is_some() {
            cfg.regions.q2 = self.q2;
        }
        cfg.validate().map_err(|(key, message)| Error::Config { line: 0, message: format!("{key}: {message}") })?;
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::UnknownTheorem(_) | Error::UnknownFigure(_) | Error::Regime(_) | Error::InvalidInput(_) => 2,
        Error::Io(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, overrides) = match cli.command {
        Command::ShowPreset { name } => {
            return match preset(&name) {
                Ok(cfg) => {
                    let _ = write!(std::io::stdout(), "{}", cfg.to_toml());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e} (known presets: {})", PRESETS.join(", "));
                    ExitCode::from(2)
                }
            };
        }
        Command::Simulate(o) => (Experiment::Simulate, o),
        Command::SplitStudy(o) => (Experiment::SplitStudy, o),
        Command::Audit(o) => (Experiment::Audit, o),
        Command::Regions(o) => (Experiment::Regions, o),
        Command::Thresholds(o) => (Experiment::Thresholds, o),
        Command::Ks(o) => (Experiment::Ks, o),
    };
    let result = overrides.resolve(experiment).and_then(|cfg| {
        let outcome = execute(&cfg)?;
        let dir = output_dir(&cfg);
        write_outputs(&dir, &cfg, &outcome)?;
        Ok(outcome)
    });
    match result {
        Ok(outcome) => {
            let _ = writeln!(std::io::stdout(), "{}", outcome.summary);
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

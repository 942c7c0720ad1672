//! `walkphase` — drive the walk/phase-space audits and experiments from
//! flat JSON configs, with a stable exit-code contract for CI:
//! 0 success, 1 configuration or precondition error, 2 scientific-tolerance
//! failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;
use walkphase_core::Error;

#[derive(Parser)]
#[command(
    name = "walkphase",
    about = "Discrete-time quantum walk phase-space audits and experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Machine-precision lattice-calculus and spectral identity suites.
    Identities(CommonArgs),
    /// Equation-of-motion, window-identity, and transport-equation audits;
    /// writes the errata ledger of exact coefficient variants.
    Audit(CommonArgs),
    /// Continuum-limit convergence of the transport equation over an eps
    /// family, with and without the first-order correction.
    Converge(CommonArgs),
    /// Evolve, build the correlation window, transform, and dump the Wigner
    /// field as CSV.
    DumpWigner(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Flat JSON config file; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed for random-field checks.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated lattice spacings for converge.
    #[arg(long, value_delimiter = ',')]
    eps_list: Option<Vec<f64>>,
    /// Physical mass (theta = eps * mass on scaling families).
    #[arg(long)]
    mass: Option<f64>,
    /// Coin angle for fixed-angle runs.
    #[arg(long)]
    theta: Option<f64>,
    /// Periodic site count N.
    #[arg(long)]
    n_sites: Option<usize>,
    /// Stored trajectory length J.
    #[arg(long)]
    steps: Option<usize>,
    /// Correlation half-window M_t.
    #[arg(long)]
    window: Option<usize>,
    /// Flag set the "selected" outputs follow: ledger | printed.
    #[arg(long)]
    variant: Option<String>,
}

impl CommonArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.eps_list {
            cfg.eps_list = v.clone();
        }
        if let Some(v) = self.mass {
            cfg.mass = v;
        }
        if let Some(v) = self.theta {
            cfg.theta = v;
        }
        if let Some(v) = self.n_sites {
            cfg.n_sites = v;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.window {
            cfg.window = v;
        }
        if let Some(v) = &self.variant {
            cfg.variant = v.clone();
        }
        Ok(cfg)
    }
}

fn error_exit_code(e: &Error) -> u8 {
    match e {
        Error::AuditFailed { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, runner): (&CommonArgs, fn(&ExperimentConfig) -> Result<i32, Error>) =
        match &cli.command {
            Command::Identities(a) => (a, commands::cmd_identities),
            Command::Audit(a) => (a, commands::cmd_audit),
            Command::Converge(a) => (a, commands::cmd_converge),
            Command::DumpWigner(a) => (a, commands::cmd_dump_wigner),
        };
    let cfg = match args.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match runner(&cfg) {
        Ok(code) => {
            if code != 0 {
                eprintln!("tolerance failure: see reports under {:?}", cfg.out);
            }
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_exit_code(&e))
        }
    }
}

//! `pinning`: batch front-end for the annealed pinning library.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for numerical or
//! I/O failures.

mod commands;
mod config;

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Outcome;
use crate::config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<pinning_core::Error> for CliError {
    fn from(e: pinning_core::Error) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

#[derive(Parser)]
#[command(name = "pinning", version, about = "Annealed pinning model with correlated Gaussian disorder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration (or a previous CSV output, whose echoed
    /// configuration is reused).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for grid points and replicas.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Validate the configuration and print the execution plan.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Gurevich pressure over β × F grids: beta,F,q,logLambda,lo,hi
    Pressure,
    /// Annealed critical curve: beta,h_c,lo,hi
    CriticalCurve,
    /// Annealed free energy scans: beta,delta,F
    FreeEnergy,
    /// Log–log exponent fits of F against δ: beta,slope,residual
    Exponent,
    /// Small-β ratios h_c/(−β²/2) against the asymptotic target: beta,ratio,target
    Asympt,
    /// Monte Carlo quenched free energy and annealed cross-checks (JSON)
    Quenched,
    /// Exact annealed log Z over (β, h) grids: beta,h,n,logZ,lower,upper
    Partition,
    /// Correlated Gaussian disorder as little-endian f64 (needs --out)
    Sample,
    /// Check the configuration without computing
    Validate,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("--config is required"))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(CliError::config("--workers must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    let dry = cli.dry_run;
    let outcome = match cli.command {
        Command::Pressure => commands::pressure(&cfg, dry)?,
        Command::CriticalCurve => commands::critical_curve_cmd(&cfg, dry)?,
        Command::FreeEnergy => commands::free_energy(&cfg, dry)?,
        Command::Exponent => commands::exponent(&cfg, dry)?,
        Command::Asympt => commands::asympt(&cfg, dry)?,
        Command::Quenched => commands::quenched(&cfg, dry)?,
        Command::Partition => commands::partition(&cfg, dry)?,
        Command::Sample => commands::sample(&cfg, dry, cli.out.as_deref())?,
        Command::Validate => commands::validate(&cfg)?,
    };
    let io = |e: std::io::Error| CliError::runtime(format!("writing output: {e}"));
    let stdout = std::io::stdout();
    match outcome {
        Outcome::Plan(text) => {
            let dest = cli
                .out
                .as_ref()
                .map_or("standard output".to_string(), |p| p.display().to_string());
            writeln!(stdout.lock(), "{text}output: {dest}").map_err(io)?;
        }
        Outcome::Done { data, notice } => {
            match &cli.out {
                Some(p) => std::fs::write(p, &data)
                    .map_err(|e| CliError::runtime(format!("{}: {e}", p.display())))?,
                None => stdout.lock().write_all(&data).map_err(io)?,
            }
            if let Some(n) = notice {
                stdout.lock().write_all(n.as_bytes()).map_err(io)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pinning: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod verify;

use config::{ConfigError, PresetName, RunConfig};

/// Steady, spectral and transient solvers for a five-compartment
/// counter-current sodium exchange model.
#[derive(Debug, Parser)]
#[command(name = "ccsim", version)]
struct Cli {
    /// TOML configuration; omitted keys take the reference values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Number of grid nodes for the selected subcommand.
    #[arg(long = "grid-n", global = true, value_name = "N")]
    grid_n: Option<usize>,
    /// Luminal permeability [m/s].
    #[arg(long = "P", global = true, allow_negative_numbers = true, value_name = "M_PER_S")]
    permeability: Option<f64>,
    /// Pump scale, Vm2 = 2π r2e · scale.
    #[arg(long = "Vm-scale", global = true, allow_negative_numbers = true, value_name = "SCALE")]
    vm_scale: Option<f64>,
    /// Final time of transient and limit runs [s].
    #[arg(long = "t-end", global = true, allow_negative_numbers = true, value_name = "SECONDS")]
    t_end: Option<f64>,
    /// Comma-separated ε = 1/k values for the limit study.
    #[arg(long = "eps-list", global = true, allow_negative_numbers = true, value_delimiter = ',', value_name = "LIST")]
    eps_list: Option<Vec<f64>>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Stationary profile, FIC and sensitivities.
    Steady,
    /// Principal eigenvalue, eigenfunctions and certificates.
    Eigen,
    /// Time integration with the Lyapunov monitor.
    Transient {
        #[arg(long, value_enum)]
        preset: Option<PresetName>,
    },
    /// Fused-epithelium limit study over ε = 1/k.
    Limit,
    /// Permeability and pump-rate sweeps.
    Sweep,
    /// Runs the invariant checks and prints a pass/fail table.
    Verify,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Steady => "steady",
            Command::Eigen => "eigen",
            Command::Transient { .. } => "transient",
            Command::Limit => "limit",
            Command::Sweep => "sweep",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("solver failure: {0}")]
    Solver(ccsim_core::Error),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl From<ccsim_core::Error> for Failure {
    fn from(e: ccsim_core::Error) -> Self {
        match e {
            ccsim_core::Error::Verification(items) => Failure::Verification(items.join("; ")),
            ccsim_core::Error::Io(io) => Failure::Io(io),
            other => Failure::Solver(other),
        }
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) | Failure::Config(_) | Failure::Io(_) => 1,
            Failure::Solver(_) => 2,
            Failure::Verification(_) => 3,
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
            config::parse_config(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(p) = cli.permeability {
        cfg.permeability = p;
    }
    if let Some(v) = cli.vm_scale {
        cfg.vm_scale = v;
    }
    if let Some(t) = cli.t_end {
        cfg.transient.t_end = Some(t);
        cfg.limit.t_end = t;
    }
    if let Some(eps) = &cli.eps_list {
        cfg.limit.eps_list = eps.clone();
    }
    if let Some(n) = cli.grid_n {
        match cli.command {
            Command::Transient { .. } => cfg.transient.grid_n = n,
            Command::Limit => cfg.limit.grid_n = n,
            Command::Sweep => cfg.sweep.grid_n = n,
            _ => cfg.grid_n = n,
        }
    }
    if let Command::Transient { preset: Some(p) } = cli.command {
        cfg.transient.preset = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("CCSIM_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| Failure::Usage(format!("CCSIM_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(format!("cannot size the thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    let cfg = resolve(&cli)?;
    commands::dispatch(cli.command, &cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ccsim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_errors_map_to_exit_codes() {
        let solver = Failure::from(ccsim_core::Error::NoConvergence { method: "m", iterations: 3, residual: 1.0 });
        assert_eq!(solver.exit_code(), 2);
        let verification = Failure::from(ccsim_core::Error::Verification(vec!["a".into(), "b".into()]));
        assert_eq!(verification.exit_code(), 3);
        assert_eq!(verification.to_string(), "verification failed: a; b");
        let io = Failure::from(ccsim_core::Error::Io(std::io::Error::other("disk")));
        assert_eq!(io.exit_code(), 1);
    }
}

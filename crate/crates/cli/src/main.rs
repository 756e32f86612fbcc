//! `starnet`: equilibrium, generating function, heavy-traffic limit and
//! simulation of a star network under min bandwidth sharing.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 bad configuration,
//! 3 a computation did not converge, 4 a checked invariant failed.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::Parser;
use starnet_core::{ErrorClass, Precision};

use config::{parse_grid, parse_precision, Command, Format, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "starnet", version, about = "Star network under min bandwidth sharing")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Load of one link, in [0, 1).
    #[arg(long)]
    rho: Option<f64>,
    /// Loads as `a:b:step` or a comma-separated list; overrides --rho.
    #[arg(long, value_parser = parse_grid)]
    rho_grid: Option<std::vec::Vec<f64>>,
    /// Convergence tolerance.
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    /// Largest truncation index of the equilibrium law.
    #[arg(long = "kmax", default_value_t = 400_000)]
    k_max: usize,
    /// Series length for `coeffs` (default: doubled until stable); Taylor order for `ode`.
    #[arg(long)]
    order: Option<usize>,
    /// Initial end of the limit-equation integration.
    #[arg(long = "zmax", default_value_t = 1e5)]
    z_max: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Simulated time.
    #[arg(long, default_value_t = 1e4)]
    horizon: f64,
    /// Discarded initial time (default: a fifth of the horizon).
    #[arg(long)]
    warmup: Option<f64>,
    /// Links in the simulated star, split evenly into in- and out-links.
    #[arg(long, default_value_t = 100)]
    links: usize,
    /// Independent simulation replicas, seeded from --seed upward.
    #[arg(long, default_value_t = 1)]
    replicas: usize,
    /// `standard`, `extended` or `extended:BITS` (default: extended from rho = 0.95).
    #[arg(long, value_parser = parse_precision)]
    precision: Option<Precision>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Write only this format (default: both).
    #[arg(long, value_enum)]
    format: Option<Format>,
}

impl From<Cli> for RunConfig {
    fn from(c: Cli) -> Self {
        RunConfig {
            command: c.command,
            rho: c.rho,
            rho_grid: c.rho_grid,
            tol: c.tol,
            k_max: c.k_max,
            order: c.order,
            z_max: c.z_max,
            seed: c.seed,
            horizon: c.horizon,
            warmup: c.warmup,
            links: c.links,
            replicas: c.replicas,
            precision: c.precision,
            out: c.out,
            format: c.format,
        }
    }
}

fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Convergence => 3,
        ErrorClass::Invariant => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cfg: RunConfig = Cli::parse().into();
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let clock = Instant::now();

    let (code, error, files) = match cfg.validate().and_then(|_| commands::run(&cfg)) {
        Err(e) => (exit_code(e.class()), Some(e.to_string()), Vec::new()),
        Ok(outcome) => match output::write_artifacts(&cfg, &outcome) {
            Err(e) => (1, Some(format!("{e:#}")), Vec::new()),
            Ok(files) => match outcome.failure {
                Some((class, msg)) => (exit_code(class), Some(msg), files),
                None => (0, None, files),
            },
        },
    };
    if let Some(e) = &error {
        eprintln!("starnet {}: {e}", cfg.command.name());
    }
    let written = output::manifest(&cfg, started, clock.elapsed().as_secs_f64(), code, error, files)
        .and_then(|m| output::write_manifest(&cfg, &m));
    if let Err(e) = written {
        eprintln!("starnet: manifest not written: {e:#}");
        return ExitCode::from(1);
    }
    ExitCode::from(code as u8)
}

//! Run configuration: parsed from flags, validated, serialized into the manifest.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use starnet_core::{Error, Precision, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Meanfield,
    Coeffs,
    Ode,
    Asymptotics,
    Simulate,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Meanfield => "meanfield",
            Command::Coeffs => "coeffs",
            Command::Ode => "ode",
            Command::Asymptotics => "asymptotics",
            Command::Simulate => "simulate",
            Command::Validate => "validate",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

/// Everything that determines a run's payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub rho: Option<f64>,
    pub rho_grid: Option<Vec<f64>>,
    pub tol: f64,
    pub k_max: usize,
    /// Number of series coefficients for `coeffs`, Taylor order for `ode`.
    pub order: Option<usize>,
    pub z_max: f64,
    pub seed: u64,
    pub horizon: f64,
    pub warmup: Option<f64>,
    pub links: usize,
    pub replicas: usize,
    /// `None` selects extended precision from rho = 0.95 up.
    pub precision: Option<Precision>,
    pub out: PathBuf,
    /// `None` writes both formats.
    pub format: Option<Format>,
}

pub const DEFAULT_RHO: f64 = 0.5;
pub const DEFAULT_GRID: [f64; 4] = [0.9, 0.95, 0.98, 0.99];

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return bad(format!("--tol must be positive, got {}", self.tol));
        }
        for &r in self.loads().iter() {
            if !(0.0..1.0).contains(&r) {
                return bad(format!("load {r} outside [0, 1)"));
            }
        }
        if self.rho_grid.as_ref().is_some_and(|g| g.is_empty()) && self.command != Command::Asymptotics {
            return bad("empty --rho-grid".into());
        }
        if self.k_max < 2 {
            return bad(format!("--kmax must be at least 2, got {}", self.k_max));
        }
        if self.order.is_some_and(|m| m < 2) {
            return bad("--order must be at least 2".into());
        }
        if !(self.z_max > 0.0 && self.z_max.is_finite()) {
            return bad(format!("--zmax must be positive, got {}", self.z_max));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("--horizon must be positive, got {}", self.horizon));
        }
        if let Some(w) = self.warmup {
            if !(w >= 0.0 && w < self.horizon) {
                return bad(format!("--warmup must lie in [0, horizon), got {w}"));
            }
        }
        if self.links < 2 || !self.links.is_multiple_of(2) {
            return bad(format!("--links must be even and at least 2, got {}", self.links));
        }
        if self.replicas == 0 {
            return bad("--replicas must be at least 1".into());
        }
        if let Some(Precision::Extended { bits }) = self.precision {
            if bits < 64 {
                return bad(format!("extended precision needs at least 64 bits, got {bits}"));
            }
        }
        Ok(())
    }

    /// Loads this run covers, in order.
    pub fn loads(&self) -> Vec<f64> {
        match (&self.rho_grid, self.rho) {
            (Some(g), _) => g.clone(),
            (None, Some(r)) => vec![r],
            (None, None) if self.command == Command::Asymptotics => DEFAULT_GRID.to_vec(),
            (None, None) => vec![DEFAULT_RHO],
        }
    }

    pub fn writes(&self, f: Format) -> bool {
        self.format.is_none_or(|g| g == f)
    }
}

/// `a:b:step` (inclusive) or a comma-separated list.
pub fn parse_grid(s: &str) -> std::result::Result<Vec<f64>, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [a, b, step] => {
            let (a, b, step) = (num(a)?, num(b)?, num(step)?);
            if !(step > 0.0) || b < a {
                return Err(format!("grid {s:?} needs a <= b and step > 0"));
            }
            let n = ((b - a) / step + 1e-9).floor() as usize;
            if n > 10_000 {
                return Err(format!("grid {s:?} has more than 10000 points"));
            }
            // Round away the representation noise of `a + i step`.
            Ok((0..=n)
                .map(|i| format!("{:.12}", a + i as f64 * step).parse().unwrap_or(f64::NAN))
                .collect())
        }
        [_] => s.split(',').map(num).collect(),
        _ => Err(format!("grid {s:?} is neither a:b:step nor a list")),
    }
}

/// `standard`, `extended` or `extended:BITS`.
pub fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    match s.split_once(':') {
        None if s == "standard" => Ok(Precision::Standard),
        None if s == "extended" => Ok(Precision::extended()),
        Some(("extended", bits)) => bits
            .parse()
            .map(|bits| Precision::Extended { bits })
            .map_err(|e| format!("bits {bits:?}: {e}")),
        _ => Err(format!("precision {s:?}: expected standard, extended or extended:BITS")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunConfig {
        RunConfig {
            command: Command::Meanfield,
            rho: Some(0.3),
            rho_grid: None,
            tol: 1e-12,
            k_max: 400_000,
            order: None,
            z_max: 1e5,
            seed: 7,
            horizon: 1e4,
            warmup: None,
            links: 100,
            replicas: 1,
            precision: Some(Precision::Extended { bits: 192 }),
            out: "out".into(),
            format: Some(Format::Csv),
        }
    }

    #[test]
    fn grid_forms() {
        assert_eq!(parse_grid("0.1:0.5:0.1").unwrap(), vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        assert_eq!(parse_grid("0.9,0.95, 0.99").unwrap(), vec![0.9, 0.95, 0.99]);
        assert!(parse_grid("0.5:0.1:0.1").is_err());
        assert!(parse_grid("1:2").is_err());
        assert!(parse_grid("x").is_err());
    }

    #[test]
    fn precision_forms() {
        assert_eq!(parse_precision("standard").unwrap(), Precision::Standard);
        assert_eq!(parse_precision("extended").unwrap(), Precision::extended());
        assert_eq!(parse_precision("extended:256").unwrap(), Precision::Extended { bits: 256 });
        assert!(parse_precision("quad").is_err());
    }

    #[test]
    fn config_round_trips() {
        let c = base();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), c);
        let c = RunConfig {
            rho_grid: Some(vec![0.1, 0.30000000000000004]),
            precision: None,
            format: None,
            ..base()
        };
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(base().validate().is_ok());
        assert!(RunConfig { tol: 0.0, ..base() }.validate().is_err());
        assert!(RunConfig { rho: Some(1.0), ..base() }.validate().is_err());
        assert!(RunConfig { links: 7, ..base() }.validate().is_err());
        assert!(RunConfig { warmup: Some(2e4), ..base() }.validate().is_err());
    }

    #[test]
    fn default_loads() {
        let c = RunConfig { rho: None, ..base() };
        assert_eq!(c.loads(), vec![DEFAULT_RHO]);
        let c = RunConfig { command: Command::Asymptotics, ..c };
        assert_eq!(c.loads(), DEFAULT_GRID.to_vec());
    }
}

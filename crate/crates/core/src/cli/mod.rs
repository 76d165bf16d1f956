//! Configuration, experiment orchestration and output files.
//!
//! Every run writes its CSV files and a `manifest.toml` recording the tool
//! version, command, seed, resolved cell list and the full configuration.
//! Rerunning from a manifest reproduces every file byte for byte.

pub mod config;
pub mod experiments;
mod output;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::array::Granularity;
use crate::error::{Error, Result};
pub use config::{load_config, ExperimentConfig, DEFAULT_CONFIG};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Vtc,
    Trajectories,
    Wnm,
    Bwtv,
    Wwtv,
    CritPulse,
    WlvmCell,
    PrSweep,
    McCorrelate,
    WlvmArray,
    CellCompare,
}

impl Command {
    pub const ALL: [Command; 11] = [
        Command::Vtc,
        Command::Trajectories,
        Command::Wnm,
        Command::Bwtv,
        Command::Wwtv,
        Command::CritPulse,
        Command::WlvmCell,
        Command::PrSweep,
        Command::McCorrelate,
        Command::WlvmArray,
        Command::CellCompare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Vtc => "vtc",
            Command::Trajectories => "trajectories",
            Command::Wnm => "wnm",
            Command::Bwtv => "bwtv",
            Command::Wwtv => "wwtv",
            Command::CritPulse => "crit-pulse",
            Command::WlvmCell => "wlvm-cell",
            Command::PrSweep => "pr-sweep",
            Command::McCorrelate => "mc-correlate",
            Command::WlvmArray => "wlvm-array",
            Command::CellCompare => "cell-compare",
        }
    }

    /// Cells a command runs on when none are given.
    fn default_cells(self, cfg: &ExperimentConfig) -> Vec<String> {
        match self {
            Command::Trajectories => vec![cfg.scenarios.cell.clone()],
            Command::McCorrelate => vec![cfg.monte_carlo.cell.clone()],
            Command::WlvmArray => vec![cfg.array.cell.clone()],
            _ => cfg.cells.iter().map(|c| c.name.clone()).collect(),
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown command '{s}'")))
    }
}

/// A fully resolved run: everything that determines the output files.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRequest {
    pub command: Command,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub cells: Vec<String>,
    pub granularity: Vec<Granularity>,
}

impl RunRequest {
    /// Applies command defaults to the optional command-line settings.
    pub fn resolve(
        command: Command,
        config: ExperimentConfig,
        seed: Option<u64>,
        cells: Option<Vec<String>>,
        granularity: Option<Vec<Granularity>>,
    ) -> Result<Self> {
        let cells = cells.unwrap_or_else(|| command.default_cells(&config));
        if cells.is_empty() {
            return Err(Error::invalid("no cells selected"));
        }
        for c in &cells {
            config.cell_spec(c)?;
        }
        let mut granularity = granularity.unwrap_or_else(|| Granularity::ALL.to_vec());
        granularity.sort_by_key(|g| Granularity::ALL.iter().position(|x| x == g));
        granularity.dedup();
        Ok(Self {
            seed: seed.unwrap_or(config.seed),
            command,
            config,
            cells,
            granularity,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub seed: u64,
    pub cells: Vec<String>,
    pub granularity: Vec<Granularity>,
    pub config_sha256: String,
    pub outputs: Vec<OutputFile>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputFile {
    pub name: String,
    pub sha256: String,
}

pub const MANIFEST_NAME: &str = "manifest.toml";

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: Manifest =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        m.config
            .validate()
            .map_err(|i| Error::Config(format!("{}: {}", i.path.join("."), i.message)))?;
        if m.config.hash() != m.config_sha256 {
            return Err(Error::Config(format!(
                "{}: embedded config does not match its recorded hash",
                path.display()
            )));
        }
        Ok(m)
    }

    pub fn request(&self) -> RunRequest {
        RunRequest {
            command: self.command,
            config: self.config.clone(),
            seed: self.seed,
            cells: self.cells.clone(),
            granularity: self.granularity.clone(),
        }
    }
}

/// Runs the request, writing outputs and the manifest into `out`.
pub fn run(req: &RunRequest, out: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(out)?;
    let mut sink = output::Sink::new(out);
    output::run_command(req, &mut sink)?;
    let outputs = sink
        .into_files()
        .into_iter()
        .map(|name| {
            let bytes = std::fs::read(out.join(&name))?;
            let sha256 = Sha256::digest(&bytes)
                .iter()
                .map(|b| format!("{b:02x}"))
                .collect();
            Ok(OutputFile { name, sha256 })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: req.command,
        seed: req.seed,
        cells: req.cells.clone(),
        granularity: req.granularity.clone(),
        config_sha256: req.config.hash(),
        outputs,
        config: req.config.clone(),
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| Error::Config(format!("cannot serialize manifest: {e}")))?;
    std::fs::write(out.join(MANIFEST_NAME), text)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_names_round_trip() {
        for c in Command::ALL {
            assert_eq!(c.name().parse::<Command>().unwrap(), c);
        }
        assert!("plot".parse::<Command>().is_err());
    }

    #[test]
    fn resolve_applies_defaults() {
        let cfg = ExperimentConfig::default();
        let r = RunRequest::resolve(Command::WlvmArray, cfg.clone(), None, None, None).unwrap();
        assert_eq!(r.cells, vec!["A".to_string()]);
        assert_eq!(r.seed, cfg.seed);
        assert_eq!(r.granularity, Granularity::ALL.to_vec());
        let r = RunRequest::resolve(
            Command::Wnm,
            cfg.clone(),
            Some(9),
            None,
            Some(vec![Granularity::Word, Granularity::Bit, Granularity::Word]),
        )
        .unwrap();
        assert_eq!(r.cells.len(), 5);
        assert_eq!(r.seed, 9);
        assert_eq!(r.granularity, vec![Granularity::Bit, Granularity::Word]);
        assert!(
            RunRequest::resolve(Command::Wnm, cfg, None, Some(vec!["Q".into()]), None).is_err()
        );
    }

    #[test]
    fn manifest_round_trip_and_tamper_check() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.cells.truncate(1);
        let req = RunRequest::resolve(Command::Wnm, cfg, None, None, None).unwrap();
        let m = run(&req, dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_NAME);
        let loaded = Manifest::load(&path).unwrap();
        assert_eq!(loaded, m);
        assert_eq!(loaded.request(), req);
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace("delta_mv = 10.0", "delta_mv = 5.0")).unwrap();
        assert!(Manifest::load(&path)
            .unwrap_err()
            .to_string()
            .contains("hash"));
    }
}

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::array::ArrayGeometry;
use crate::cell::CellDesign;
use crate::device::DeviceDefaults;
use crate::error::{Error, Result};
use crate::metrics::{Direction, PulseShape, RampConfig, WriteSetup};
use crate::variation::VariationModel;

/// The commented default configuration shipped with the tool.
pub const DEFAULT_CONFIG: &str = include_str!("../../config/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: String,
    pub device: DeviceSection,
    pub write: WriteSection,
    pub sweep: SweepSection,
    pub variation: VariationSection,
    pub monte_carlo: MonteCarloSection,
    pub array: ArraySection,
    pub pr_sweep: PrSweepSection,
    pub scenarios: ScenarioSection,
    pub cells: Vec<CellSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    pub vdd: f64,
    pub length_nm: f64,
    pub vth_n: f64,
    pub vth_p: f64,
    pub kp_n: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub mobility_ratio: f64,
    pub c_node_ff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WriteSection {
    pub pulse_width_ns: f64,
    pub edge_ps: f64,
    pub hold_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub delta_mv: f64,
    pub floor_mv: f64,
    pub ramp_step_mv: f64,
    pub drop_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariationSection {
    pub avt_mv_um: f64,
    pub independent: bool,
    pub width_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    pub cell: String,
    pub samples: usize,
    pub direction: Direction,
    pub compare_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySection {
    pub cell: String,
    pub rows: usize,
    pub cols: usize,
    pub word_width: usize,
    pub block_words: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrSweepSection {
    pub w_n_nm: f64,
    pub w_tx_nm: f64,
    pub pr_start: f64,
    pub pr_stop: f64,
    pub pr_step: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub cell: String,
    pub direction: Direction,
    pub reduced_wl: f64,
    pub raised_bl_low: f64,
    pub short_pulse_fraction: f64,
    pub high_pr: f64,
    pub cell_supply_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub name: String,
    pub w_n_nm: f64,
    pub w_tx_nm: f64,
    pub w_p_nm: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        parse(DEFAULT_CONFIG).expect("built-in default config is valid")
    }
}

/// Parses and validates configuration text.
pub fn parse(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate().map_err(|issue| {
        let line = locate(text, &issue.path)
            .map(|n| format!("line {n}: "))
            .unwrap_or_default();
        Error::Config(format!("{line}{}: {}", issue.path.join("."), issue.message))
    })?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// A failed validation check, addressed by key path (`cells.2.w_tx_nm`).
#[derive(Debug, Clone, PartialEq)]
pub struct Issue {
    pub path: Vec<String>,
    pub message: String,
}

fn issue(path: &[&str], message: impl Into<String>) -> Issue {
    Issue {
        path: path.iter().map(|s| s.to_string()).collect(),
        message: message.into(),
    }
}

fn positive(path: &[&str], v: f64) -> std::result::Result<(), Issue> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(issue(path, format!("must be positive, got {v}")))
    }
}

fn in_range(path: &[&str], v: f64, lo: f64, hi: f64) -> std::result::Result<(), Issue> {
    if (lo..=hi).contains(&v) {
        Ok(())
    } else {
        Err(issue(path, format!("must be in [{lo}, {hi}], got {v}")))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> std::result::Result<(), Issue> {
        let d = &self.device;
        positive(&["device", "vdd"], d.vdd)?;
        positive(&["device", "length_nm"], d.length_nm)?;
        in_range(&["device", "vth_n"], d.vth_n, 0.0, d.vdd)?;
        in_range(&["device", "vth_p"], d.vth_p, -d.vdd, 0.0)?;
        positive(&["device", "kp_n"], d.kp_n)?;
        in_range(&["device", "alpha"], d.alpha, 1.0, 2.0)?;
        in_range(&["device", "lambda"], d.lambda, 0.0, 1.0)?;
        positive(&["device", "mobility_ratio"], d.mobility_ratio)?;
        positive(&["device", "c_node_ff"], d.c_node_ff)?;

        positive(&["write", "pulse_width_ns"], self.write.pulse_width_ns)?;
        positive(&["write", "edge_ps"], self.write.edge_ps)?;
        positive(&["write", "hold_ns"], self.write.hold_ns)?;

        let s = &self.sweep;
        positive(&["sweep", "delta_mv"], s.delta_mv)?;
        in_range(
            &["sweep", "floor_mv"],
            s.floor_mv,
            0.0,
            d.vdd * 1e3 - s.delta_mv,
        )?;
        in_range(&["sweep", "ramp_step_mv"], s.ramp_step_mv, 1e-3, 10.0)?;
        if !(s.drop_fraction > 0.0 && s.drop_fraction < 1.0) {
            return Err(issue(&["sweep", "drop_fraction"], "must be in (0, 1)"));
        }

        let v = &self.variation;
        in_range(&["variation", "avt_mv_um"], v.avt_mv_um, 0.0, 100.0)?;
        if !(v.width_sigma >= 0.0 && v.width_sigma < 1.0) {
            return Err(issue(&["variation", "width_sigma"], "must be in [0, 1)"));
        }

        if self.cells.is_empty() {
            return Err(issue(&["cells"], "at least one cell design is required"));
        }
        for (k, c) in self.cells.iter().enumerate() {
            let idx = k.to_string();
            if c.name.is_empty() || c.name.contains([',', '/', ' ']) {
                return Err(issue(
                    &["cells", &idx, "name"],
                    "must be non-empty without commas, slashes or spaces",
                ));
            }
            if self.cells[..k].iter().any(|o| o.name == c.name) {
                return Err(issue(
                    &["cells", &idx, "name"],
                    format!("duplicate cell name '{}'", c.name),
                ));
            }
            positive(&["cells", &idx, "w_n_nm"], c.w_n_nm)?;
            positive(&["cells", &idx, "w_tx_nm"], c.w_tx_nm)?;
            positive(&["cells", &idx, "w_p_nm"], c.w_p_nm)?;
        }

        let known = |path: &[&str], name: &str| {
            if self.cells.iter().any(|c| c.name == name) {
                Ok(())
            } else {
                Err(issue(path, format!("unknown cell '{name}'")))
            }
        };
        known(&["monte_carlo", "cell"], &self.monte_carlo.cell)?;
        known(&["array", "cell"], &self.array.cell)?;
        known(&["scenarios", "cell"], &self.scenarios.cell)?;
        if self.monte_carlo.samples < 2 {
            return Err(issue(&["monte_carlo", "samples"], "must be at least 2"));
        }
        if self.monte_carlo.compare_samples < 2 {
            return Err(issue(
                &["monte_carlo", "compare_samples"],
                "must be at least 2",
            ));
        }

        let a = &self.array;
        for (key, n) in [
            ("rows", a.rows),
            ("cols", a.cols),
            ("word_width", a.word_width),
            ("block_words", a.block_words),
        ] {
            if n == 0 {
                return Err(issue(&["array", key], "must be positive"));
            }
        }
        if a.cols % a.word_width != 0 {
            return Err(issue(&["array", "word_width"], "must divide cols"));
        }

        let p = &self.pr_sweep;
        positive(&["pr_sweep", "w_n_nm"], p.w_n_nm)?;
        positive(&["pr_sweep", "w_tx_nm"], p.w_tx_nm)?;
        positive(&["pr_sweep", "pr_start"], p.pr_start)?;
        positive(&["pr_sweep", "pr_step"], p.pr_step)?;
        if p.pr_stop < p.pr_start {
            return Err(issue(
                &["pr_sweep", "pr_stop"],
                "must not be below pr_start",
            ));
        }

        let sc = &self.scenarios;
        in_range(&["scenarios", "reduced_wl"], sc.reduced_wl, 0.0, d.vdd)?;
        in_range(
            &["scenarios", "raised_bl_low"],
            sc.raised_bl_low,
            0.0,
            d.vdd,
        )?;
        in_range(
            &["scenarios", "short_pulse_fraction"],
            sc.short_pulse_fraction,
            1e-3,
            1.0,
        )?;
        positive(&["scenarios", "high_pr"], sc.high_pr)?;
        in_range(
            &["scenarios", "cell_supply_fraction"],
            sc.cell_supply_fraction,
            0.1,
            1.5,
        )?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, as lowercase hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn device_defaults(&self) -> DeviceDefaults {
        let d = &self.device;
        DeviceDefaults {
            vdd: d.vdd,
            length: d.length_nm * 1e-9,
            vth_n: d.vth_n,
            vth_p: d.vth_p,
            kp_n: d.kp_n,
            alpha: d.alpha,
            lambda: d.lambda,
            mobility_ratio: d.mobility_ratio,
        }
    }

    pub fn design_from_widths(&self, w_n_nm: f64, w_tx_nm: f64, w_p_nm: f64) -> CellDesign {
        CellDesign {
            c_node: self.device.c_node_ff * 1e-15,
            ..CellDesign::from_widths(
                &self.device_defaults(),
                w_n_nm * 1e-9,
                w_tx_nm * 1e-9,
                w_p_nm * 1e-9,
            )
        }
    }

    pub fn cell_spec(&self, name: &str) -> Result<&CellSpec> {
        self.cells
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::Config(format!("unknown cell '{name}'")))
    }

    pub fn design(&self, name: &str) -> Result<CellDesign> {
        let c = self.cell_spec(name)?;
        Ok(self.design_from_widths(c.w_n_nm, c.w_tx_nm, c.w_p_nm))
    }

    pub fn pulse(&self) -> PulseShape {
        PulseShape {
            width: self.write.pulse_width_ns * 1e-9,
            edge: self.write.edge_ps * 1e-12,
            hold: self.write.hold_ns * 1e-9,
        }
    }

    pub fn write_setup(&self) -> WriteSetup {
        WriteSetup::nominal(self.device.vdd, self.pulse())
    }

    pub fn ramp(&self) -> RampConfig {
        RampConfig {
            step: self.sweep.ramp_step_mv * 1e-3,
            drop_fraction: self.sweep.drop_fraction,
        }
    }

    pub fn delta(&self) -> f64 {
        self.sweep.delta_mv * 1e-3
    }

    pub fn floor(&self) -> f64 {
        self.sweep.floor_mv * 1e-3
    }

    pub fn variation_model(&self) -> VariationModel {
        VariationModel {
            // mV*um to V*m
            avt: self.variation.avt_mv_um * 1e-9,
            independent: self.variation.independent,
            width_sigma: self.variation.width_sigma,
        }
    }

    pub fn geometry(&self) -> ArrayGeometry {
        ArrayGeometry {
            rows: self.array.rows,
            cols: self.array.cols,
            word_width: self.array.word_width,
            block_words: self.array.block_words,
        }
    }

    /// Pull-up ratios of the sweep, computed as `start + k * step`.
    pub fn pr_values(&self) -> Vec<f64> {
        let p = &self.pr_sweep;
        let n = ((p.pr_stop - p.pr_start) / p.pr_step + 1e-9).floor() as usize;
        (0..=n).map(|k| p.pr_start + k as f64 * p.pr_step).collect()
    }

    /// A design of the sweep family with the given pull-up ratio.
    pub fn pr_design(&self, pr: f64) -> CellDesign {
        let p = &self.pr_sweep;
        self.design_from_widths(p.w_n_nm, p.w_tx_nm, pr * p.w_tx_nm)
    }
}

/// Line (1-based) of the key addressed by `path`, if it appears in `text`.
fn locate(text: &str, path: &[String]) -> Option<usize> {
    let (table, index, key) = match path {
        [t, k] => (t.as_str(), None, k.as_str()),
        [t, i, k] => (t.as_str(), i.parse::<usize>().ok(), k.as_str()),
        [k] => ("", None, k.as_str()),
        _ => return None,
    };
    let mut seen = 0usize;
    let mut in_target = table.is_empty();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(name) = line.strip_prefix("[[").and_then(|l| l.strip_suffix("]]")) {
            let here = name.trim() == table;
            if here {
                seen += 1;
            }
            in_target = here && index.map_or(true, |i| seen == i + 1);
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            in_target = name.trim() == table && index.is_none();
            continue;
        }
        if in_target {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(n + 1);
                }
            }
        }
    }
    if table.is_empty() {
        return None;
    }
    // Fall back to the table header.
    let mut seen = 0usize;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line == format!("[{table}]") {
            return Some(n + 1);
        }
        if line == format!("[[{table}]]") {
            seen += 1;
            if index.map_or(true, |i| seen == i + 1) {
                return Some(n + 1);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_names_five_designs() {
        let cfg = ExperimentConfig::default();
        let widths: Vec<(&str, f64, f64, f64)> = cfg
            .cells
            .iter()
            .map(|c| (c.name.as_str(), c.w_n_nm, c.w_tx_nm, c.w_p_nm))
            .collect();
        assert_eq!(
            widths,
            vec![
                ("A", 150.0, 150.0, 150.0),
                ("B", 150.0, 150.0, 230.0),
                ("C", 150.0, 150.0, 300.0),
                ("D", 230.0, 230.0, 230.0),
                ("E", 300.0, 300.0, 150.0),
            ]
        );
    }

    #[test]
    fn round_trip() {
        let cfg = ExperimentConfig::default();
        let again = parse(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
    }

    #[test]
    fn zero_access_width_reports_line() {
        let text = DEFAULT_CONFIG.replacen(
            "w_tx_nm = 150.0\nw_p_nm = 230.0",
            "w_tx_nm = 0.0\nw_p_nm = 230.0",
            1,
        );
        let err = parse(&text).unwrap_err().to_string();
        let expected = text
            .lines()
            .position(|l| l.starts_with("w_tx_nm = 0.0"))
            .unwrap()
            + 1;
        assert!(err.contains(&format!("line {expected}:")), "{err}");
        assert!(err.contains("cells.1.w_tx_nm"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = DEFAULT_CONFIG.replace("[write]\n", "[write]\nslew = 3\n");
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("slew"), "{err}");
    }

    #[test]
    fn duplicate_and_unknown_names_rejected() {
        let text = DEFAULT_CONFIG.replace("name = \"B\"", "name = \"A\"");
        assert!(parse(&text).unwrap_err().to_string().contains("duplicate"));
        let text = DEFAULT_CONFIG.replace(
            "cell = \"A\"              # design the array",
            "cell = \"Z\" #",
        );
        assert!(parse(&text)
            .unwrap_err()
            .to_string()
            .contains("unknown cell"));
    }

    #[test]
    fn word_width_must_divide_columns() {
        let text = DEFAULT_CONFIG.replace("word_width = 8 ", "word_width = 5 ");
        assert!(parse(&text).unwrap_err().to_string().contains("word_width"));
    }

    #[test]
    fn unit_conversions() {
        let cfg = ExperimentConfig::default();
        let a = cfg.design("A").unwrap();
        assert!((a.a.access.width - 150e-9).abs() < 1e-20);
        assert!((a.c_node - 1e-15).abs() < 1e-27);
        assert!((cfg.variation_model().avt - 4.5e-9).abs() < 1e-20);
        assert!((cfg.delta() - 0.01).abs() < 1e-15);
        let prs = cfg.pr_values();
        assert_eq!(prs.len(), 16);
        assert_eq!(prs[0], 0.5);
        assert_eq!(*prs.last().unwrap(), 8.0);
        assert!((cfg.pr_design(2.0).pull_up_ratio() - 2.0).abs() < 1e-12);
    }
}

//! Experiment drivers shared by the command runner and the test suites.

use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use crate::array::{build_array, wlvm_array, ArrayModel, Granularity, OutcomeCache, WlvmRecord};
use crate::cell::{
    find_equilibria, separatrix_point, solve_vtc, BiasCondition, CellDesign, CellState,
    Equilibrium, Side, StoredState, VtcPoint, VTC_GRID,
};
use crate::error::{Error, Result};
use crate::metrics::{
    attempt_write_recorded, bwtv, critical_pulse_width, wlvm_cell, write_blocked,
    write_noise_margin, wwtv, Direction, MetricResult, PulseShape, WriteAttempt, WriteSetup,
};
use crate::stats::{pearson, Correlation};
use crate::variation::{monte_carlo, McSample};

/// Hold and write transfer curves of one design over a common input grid.
pub struct VtcCurves {
    pub hold_a: Vec<VtcPoint>,
    pub hold_b: Vec<VtcPoint>,
    pub write_a: Vec<VtcPoint>,
    pub write_b: Vec<VtcPoint>,
    pub equilibria: Vec<(&'static str, Equilibrium)>,
}

pub fn vtc_curves(d: &CellDesign) -> Result<VtcCurves> {
    let vdd = d.vdd;
    let n = (vdd / VTC_GRID).round() as usize;
    let xs: Vec<f64> = (0..=n).map(|k| (k as f64 * VTC_GRID).min(vdd)).collect();
    let hold = BiasCondition::hold(vdd);
    let write = BiasCondition {
        v_cell: vdd,
        v_wl: vdd,
        v_bl: 0.0,
        v_blc: vdd,
    };
    let mut equilibria = Vec::new();
    for (label, b) in [
        ("hold", hold),
        ("write_1to0", write),
        ("write_0to1", write.mirrored()),
    ] {
        equilibria.extend(find_equilibria(d, &b)?.into_iter().map(|e| (label, e)));
    }
    Ok(VtcCurves {
        hold_a: solve_vtc(d, &hold, Side::A, &xs)?,
        hold_b: solve_vtc(d, &hold, Side::B, &xs)?,
        write_a: solve_vtc(d, &write, Side::A, &xs)?,
        write_b: solve_vtc(d, &write, Side::B, &xs)?,
        equilibria,
    })
}

/// Points on the hold-mode separatrix, from horizontal and vertical cuts
/// across the state square.
pub fn separatrix(d: &CellDesign, cuts: usize) -> Result<Vec<CellState>> {
    let vdd = d.vdd;
    let levels: Vec<f64> = (1..=cuts)
        .map(|k| vdd * k as f64 / (cuts + 1) as f64)
        .collect();
    let mut segments = Vec::new();
    for &y in &levels {
        segments.push((CellState::new(0.0, y), CellState::new(vdd, y)));
        segments.push((CellState::new(y, 0.0), CellState::new(y, vdd)));
    }
    let found: Vec<Result<CellState>> = segments
        .par_iter()
        .map(|(p0, p1)| separatrix_point(d, p0, p1))
        .collect();
    let mut points: Vec<CellState> = found
        .into_iter()
        .filter_map(|r| match r {
            Ok(p) => Some(Ok(p)),
            Err(Error::Precondition(_)) => None,
            Err(e) => Some(Err(e)),
        })
        .collect::<Result<_>>()?;
    points.sort_by(|a, b| (a.v_a - a.v_b).total_cmp(&(b.v_a - b.v_b)));
    Ok(points)
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub label: char,
    pub description: &'static str,
    pub design: CellDesign,
    pub setup: WriteSetup,
    pub v_wl: f64,
    pub blocked: bool,
    pub attempt: WriteAttempt,
}

/// The six write scenarios: nominal, then one degraded condition each.
pub fn write_scenarios(cfg: &ExperimentConfig, cell: &str) -> Result<Vec<ScenarioRun>> {
    let sc = &cfg.scenarios;
    let dir = sc.direction;
    let spec = cfg.cell_spec(cell)?;
    let d = cfg.design(cell)?;
    let nominal = cfg.write_setup();
    let vdd = cfg.device.vdd;
    let crit = critical_pulse_width(&d, &nominal, dir)?.value;
    if !crit.is_finite() {
        return Err(Error::Precondition(format!(
            "cell {cell} cannot be written at nominal conditions"
        )));
    }
    let high_pr = cfg.design_from_widths(spec.w_n_nm, spec.w_tx_nm, sc.high_pr * spec.w_tx_nm);
    let short = WriteSetup {
        pulse: PulseShape {
            width: sc.short_pulse_fraction * crit,
            ..nominal.pulse
        },
        ..nominal
    };
    let cases = [
        ('a', "nominal", d, nominal, vdd),
        ('b', "reduced word-line voltage", d, nominal, sc.reduced_wl),
        (
            'c',
            "raised low-level bit-line",
            d,
            WriteSetup {
                v_bl_low: sc.raised_bl_low,
                ..nominal
            },
            vdd,
        ),
        ('d', "short word-line pulse", d, short, vdd),
        ('e', "oversized pull-up", high_pr, nominal, vdd),
        (
            'f',
            "oversized pull-up at reduced cell supply",
            high_pr,
            WriteSetup {
                v_cell: sc.cell_supply_fraction * vdd,
                ..nominal
            },
            vdd,
        ),
    ];
    cases
        .par_iter()
        .map(|&(label, description, design, setup, v_wl)| {
            let attempt = attempt_write_recorded(&design, &setup, v_wl, dir, 10)?;
            let blocked = write_blocked(&design, &setup, v_wl, dir)?;
            Ok(ScenarioRun {
                label,
                description,
                design,
                setup,
                v_wl,
                blocked,
                attempt,
            })
        })
        .collect()
}

/// All five single-cell metrics of one design in one direction.
#[derive(Debug, Clone, Serialize)]
pub struct MetricSet {
    pub wnm: f64,
    pub bwtv: f64,
    pub wwtv: f64,
    pub wlvm: f64,
    /// Seconds; infinite when no pulse up to the search limit writes.
    pub crit_pulse: f64,
}

pub fn metric_set(cfg: &ExperimentConfig, d: &CellDesign, dir: Direction) -> Result<MetricSet> {
    let setup = cfg.write_setup();
    let ramp = cfg.ramp();
    Ok(MetricSet {
        wnm: write_noise_margin(d, dir)?.value,
        bwtv: bwtv(d, &ramp, dir)?.value,
        wwtv: wwtv(d, &ramp, dir)?.value,
        wlvm: wlvm_cell(d, &setup, cfg.delta(), cfg.floor(), dir)?.value,
        crit_pulse: critical_pulse_width(d, &setup, dir)?.value,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PrRow {
    pub pr: f64,
    pub metrics: MetricSet,
    /// Static and dynamic verdicts agree: WNM <= 0 exactly when no pulse writes.
    pub consistent: bool,
    /// A disagreement next to a WNM sign change of the sweep.
    pub boundary: bool,
}

pub fn pr_sweep(cfg: &ExperimentConfig) -> Result<Vec<PrRow>> {
    let dir = cfg.pr_sweep.direction;
    let prs = cfg.pr_values();
    let sets: Vec<MetricSet> = prs
        .par_iter()
        .map(|&pr| metric_set(cfg, &cfg.pr_design(pr), dir))
        .collect::<Result<_>>()?;
    let unwriteable: Vec<bool> = sets.iter().map(|m| m.wnm <= 0.0).collect();
    Ok(prs
        .iter()
        .zip(&sets)
        .enumerate()
        .map(|(k, (&pr, m))| {
            let consistent = unwriteable[k] == m.crit_pulse.is_infinite();
            let near_sign_change = (k > 0 && unwriteable[k - 1] != unwriteable[k])
                || (k + 1 < prs.len() && unwriteable[k + 1] != unwriteable[k]);
            PrRow {
                pr,
                metrics: m.clone(),
                consistent,
                boundary: !consistent && near_sign_change,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct McTriple {
    pub wwtv: f64,
    pub bwtv: f64,
    pub wlvm: f64,
}

pub struct McCorrelation {
    pub samples: Vec<McSample<McTriple>>,
    pub wwtv_wlvm: Correlation,
    pub bwtv_wlvm: Correlation,
    pub wwtv_bwtv: Correlation,
}

/// Joint trip-voltage and margin Monte Carlo of one design.
pub fn mc_correlate(
    cfg: &ExperimentConfig,
    cell: &str,
    seed: u64,
    n: usize,
) -> Result<McCorrelation> {
    let d = cfg.design(cell)?;
    let dir = cfg.monte_carlo.direction;
    let setup = cfg.write_setup();
    let ramp = cfg.ramp();
    let samples = monte_carlo(&d, &cfg.variation_model(), seed, n, |c| {
        Ok(McTriple {
            wwtv: wwtv(c, &ramp, dir)?.value,
            bwtv: bwtv(c, &ramp, dir)?.value,
            wlvm: wlvm_cell(c, &setup, cfg.delta(), cfg.floor(), dir)?.value,
        })
    })?;
    let ok: Vec<&McTriple> = samples
        .iter()
        .filter_map(|s| s.value.as_ref().ok())
        .collect();
    let col = |f: fn(&McTriple) -> f64| ok.iter().map(|t| f(t)).collect::<Vec<f64>>();
    let (w, b, l) = (col(|t| t.wwtv), col(|t| t.bwtv), col(|t| t.wlvm));
    Ok(McCorrelation {
        wwtv_wlvm: pearson(&w, &l)?,
        bwtv_wlvm: pearson(&b, &l)?,
        wwtv_bwtv: pearson(&w, &b)?,
        samples,
    })
}

pub struct ArrayRun {
    pub array: ArrayModel,
    pub records: Vec<(Granularity, Vec<WlvmRecord>)>,
}

impl ArrayRun {
    pub fn records(&self, g: Granularity) -> Option<&[WlvmRecord]> {
        self.records
            .iter()
            .find(|(k, _)| *k == g)
            .map(|(_, r)| r.as_slice())
    }
}

/// Samples the configured array for `cell` and runs the margin search at
/// bit level and at each requested granularity.
pub fn array_run(
    cfg: &ExperimentConfig,
    cell: &str,
    seed: u64,
    granularities: &[Granularity],
) -> Result<ArrayRun> {
    let array = build_array(
        &cfg.design(cell)?,
        &cfg.variation_model(),
        seed,
        cfg.geometry(),
        cfg.write_setup(),
        cfg.delta(),
        cfg.floor(),
    )?;
    let mut cache = OutcomeCache::new();
    let mut records = Vec::new();
    for g in Granularity::ALL {
        if g == Granularity::Bit || granularities.contains(&g) {
            records.push((g, wlvm_array(&array, g, &mut cache)?));
        }
    }
    Ok(ArrayRun { array, records })
}

/// Combined (both-direction) margins of a Monte Carlo population.
pub fn wlvm_population(
    cfg: &ExperimentConfig,
    cell: &str,
    seed: u64,
    n: usize,
) -> Result<Vec<McSample<MetricResult>>> {
    let d = cfg.design(cell)?;
    let setup = cfg.write_setup();
    monte_carlo(&d, &cfg.variation_model(), seed, n, |c| {
        let up = wlvm_cell(c, &setup, cfg.delta(), cfg.floor(), Direction::ZeroToOne)?;
        let down = wlvm_cell(c, &setup, cfg.delta(), cfg.floor(), Direction::OneToZero)?;
        Ok(if down.value < up.value { down } else { up })
    })
}

/// Stored state of a scenario after the write and hold interval.
pub fn outcome_label(s: StoredState) -> &'static str {
    match s {
        StoredState::S0 => "S0",
        StoredState::S1 => "S1",
        StoredState::Undetermined => "undetermined",
    }
}

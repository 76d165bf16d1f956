//! Single-cell writability metrics.
//!
//! Every direction-dependent metric is implemented once for the 0-to-1
//! transition (node A written from '0' to '1' through BL) and evaluated on
//! the mirrored cell for the 1-to-0 transition.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cell::{
    classify_state, evaluate, find_equilibria, hold_equilibrium, newton_polish, simulate_transient,
    solve_vtc, BiasCondition, CellDesign, CellState, EquilibriumKind, Side, StoredState,
    Trajectory, TransientOptions, Waveform, VTC_GRID,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "0to1")]
    ZeroToOne,
    #[serde(rename = "1to0")]
    OneToZero,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::ZeroToOne, Direction::OneToZero];

    pub fn initial(self) -> StoredState {
        match self {
            Direction::ZeroToOne => StoredState::S0,
            Direction::OneToZero => StoredState::S1,
        }
    }

    pub fn target(self) -> StoredState {
        self.initial().complement()
    }

    /// The design seen from the 0-to-1 frame.
    fn canonical(self, d: &CellDesign) -> CellDesign {
        match self {
            Direction::ZeroToOne => *d,
            Direction::OneToZero => d.mirrored(),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::ZeroToOne => "0to1",
            Direction::OneToZero => "1to0",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "0to1" => Ok(Direction::ZeroToOne),
            "1to0" => Ok(Direction::OneToZero),
            other => Err(Error::invalid(format!("unknown direction '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Wnm,
    Bwtv,
    Wwtv,
    Wlvm,
    CritPulse,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Wnm => "WNM",
            Metric::Bwtv => "BWTV",
            Metric::Wwtv => "WWTV",
            Metric::Wlvm => "WLVM",
            Metric::CritPulse => "CritPulse",
        })
    }
}

/// One point of a quasi-static ramp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RampPoint {
    /// Swept terminal voltage (BLC for BWTV, WL for WWTV).
    pub drive: f64,
    /// Current drawn from the monitored bit-line.
    pub i_bl: f64,
    /// Whether the DC state has crossed over to the target value.
    pub flipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub metric: Metric,
    pub direction: Direction,
    /// Volts, or seconds for the critical pulse width (infinite when the
    /// cell cannot be written).
    pub value: f64,
    pub writeable: bool,
    /// Ramp metrics: drive level at which the DC state flipped.
    pub state_flip_drive: Option<f64>,
    /// WLVM: the result in units of the sweep step.
    pub steps: Option<u32>,
    /// Ramp metrics: the full detection trace.
    pub trace: Vec<RampPoint>,
}

impl MetricResult {
    fn scalar(metric: Metric, direction: Direction, value: f64, writeable: bool) -> Self {
        Self {
            metric,
            direction,
            value,
            writeable,
            state_flip_drive: None,
            steps: None,
            trace: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RampConfig {
    /// Ramp step in volts.
    pub step: f64,
    /// Detection fires when the monitored current falls below this fraction
    /// of its running peak.
    pub drop_fraction: f64,
}

impl Default for RampConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            drop_fraction: 0.5,
        }
    }
}

impl RampConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step <= 10e-3) {
            return Err(Error::invalid(format!(
                "ramp step must be in (0, 10 mV], got {} V",
                self.step
            )));
        }
        if !(self.drop_fraction > 0.0 && self.drop_fraction < 1.0) {
            return Err(Error::invalid("drop_fraction must be in (0, 1)"));
        }
        Ok(())
    }
}

/// Word-line pulse timing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseShape {
    /// Duration at half swing in seconds.
    pub width: f64,
    /// Linear rise and fall time in seconds; shortened to half the width
    /// for pulses narrower than two edges.
    pub edge: f64,
    /// Hold interval after the pulse, before the read check.
    pub hold: f64,
}

impl Default for PulseShape {
    fn default() -> Self {
        Self {
            width: 2e-9,
            edge: 50e-12,
            hold: 2e-9,
        }
    }
}

/// Terminal levels and timing of a write access.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WriteSetup {
    pub vdd: f64,
    /// Cell supply during the access.
    pub v_cell: f64,
    /// Level of the bit-line driven low.
    pub v_bl_low: f64,
    /// Level of the bit-line driven high.
    pub v_bl_high: f64,
    pub pulse: PulseShape,
}

impl WriteSetup {
    /// Cell supply and bit-line drivers at nominal levels.
    pub fn nominal(vdd: f64, pulse: PulseShape) -> Self {
        Self {
            vdd,
            v_cell: vdd,
            v_bl_low: 0.0,
            v_bl_high: vdd,
            pulse,
        }
    }

    /// Write waveform in the 0-to-1 frame: BL high, BLC low, WL pulsed.
    fn waveform(&self, v_wl: f64) -> Result<Waveform> {
        let edge = self.pulse.edge.min(0.5 * self.pulse.width);
        let plateau = self.pulse.width - edge;
        let at = |wl: f64| BiasCondition {
            v_cell: self.v_cell,
            v_wl: wl,
            v_bl: self.v_bl_high,
            v_blc: self.v_bl_low,
        };
        Waveform::new(vec![
            (0.0, at(0.0)),
            (edge, at(v_wl)),
            (edge + plateau, at(v_wl)),
            (2.0 * edge + plateau, at(0.0)),
        ])
    }

    fn duration(&self) -> f64 {
        let edge = self.pulse.edge.min(0.5 * self.pulse.width);
        self.pulse.width + edge + self.pulse.hold
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WriteAttempt {
    pub success: bool,
    /// Value read back at nominal conditions.
    pub read_back: StoredState,
    pub trajectory: Trajectory,
}

/// One pulsed write of the complement of the stored value with the word
/// line at `v_wl_level`, followed by a hold interval and a nominal read.
pub fn attempt_write(
    d: &CellDesign,
    setup: &WriteSetup,
    v_wl_level: f64,
    direction: Direction,
) -> Result<WriteAttempt> {
    attempt_write_recorded(d, setup, v_wl_level, direction, usize::MAX)
}

/// As [`attempt_write`], recording every `decimation`-th integration step.
pub fn attempt_write_recorded(
    d: &CellDesign,
    setup: &WriteSetup,
    v_wl_level: f64,
    direction: Direction,
    decimation: usize,
) -> Result<WriteAttempt> {
    if !(0.0..=setup.vdd + 1e-12).contains(&v_wl_level) {
        return Err(Error::invalid(format!(
            "word-line level {v_wl_level} V outside [0, {}] V",
            setup.vdd
        )));
    }
    let dd = direction.canonical(d);
    let hold = BiasCondition {
        v_cell: setup.v_cell,
        ..BiasCondition::hold(setup.vdd)
    };
    let start = hold_equilibrium(&dd, &hold, StoredState::S0)?;
    let w = setup.waveform(v_wl_level)?;
    let opts = TransientOptions {
        decimation,
        ..TransientOptions::settling()
    };
    let traj = simulate_transient(&dd, &w, start.state, setup.duration(), &opts)?;
    let read_back = classify_state(&dd, &traj.final_state)?;
    let success = read_back == StoredState::S1;
    let (trajectory, read_back) = match direction {
        Direction::ZeroToOne => (traj, read_back),
        Direction::OneToZero => (traj.mirrored(), read_back.complement()),
    };
    Ok(WriteAttempt {
        success,
        read_back,
        trajectory,
    })
}

/// Sweep levels `(j, vdd - j * delta)` down to the floor.
fn wlvm_levels(vdd: f64, delta: f64, floor: f64) -> impl Iterator<Item = (u32, f64)> {
    (0u32..)
        .map(move |j| (j, vdd - j as f64 * delta))
        .take_while(move |&(_, v)| v >= floor - 1e-12)
        .map(|(j, v)| (j, v.max(0.0)))
}

/// Word-line voltage margin of one cell: the smallest reduction `j * delta`
/// of the word-line level at which a write fails. Zero when the nominal
/// write already fails.
pub fn wlvm_cell(
    d: &CellDesign,
    setup: &WriteSetup,
    delta: f64,
    floor: f64,
    direction: Direction,
) -> Result<MetricResult> {
    if !(delta > 0.0) {
        return Err(Error::invalid(format!(
            "delta must be positive, got {delta}"
        )));
    }
    for (j, v) in wlvm_levels(setup.vdd, delta, floor) {
        if !attempt_write(d, setup, v, direction)?.success {
            return Ok(wlvm_result(j, delta, direction));
        }
    }
    Ok(wlvm_result(
        never_failed_steps(setup.vdd, delta),
        delta,
        direction,
    ))
}

/// Margin recorded for a cell that never failed above the sweep floor: the
/// full supply, in steps.
pub fn never_failed_steps(vdd: f64, delta: f64) -> u32 {
    (vdd / delta).round() as u32
}

fn wlvm_result(steps: u32, delta: f64, direction: Direction) -> MetricResult {
    MetricResult {
        steps: Some(steps),
        ..MetricResult::scalar(Metric::Wlvm, direction, steps as f64 * delta, steps > 0)
    }
}

/// Pass/fail outcome at every level of the sweep, without stopping at the
/// first failure.
pub fn wlvm_full_sweep(
    d: &CellDesign,
    setup: &WriteSetup,
    delta: f64,
    floor: f64,
    direction: Direction,
) -> Result<Vec<(f64, bool)>> {
    if !(delta > 0.0) {
        return Err(Error::invalid(format!(
            "delta must be positive, got {delta}"
        )));
    }
    wlvm_levels(setup.vdd, delta, floor)
        .map(|(j, v)| {
            Ok((
                j as f64 * delta,
                attempt_write(d, setup, v, direction)?.success,
            ))
        })
        .collect()
}

/// Static write noise margin for writing '0' into node A (BL low, BLC high),
/// or the mirrored case. Negative values measure the bistable region that
/// survives under write bias.
pub fn write_noise_margin(d: &CellDesign, direction: Direction) -> Result<MetricResult> {
    // Canonical frame here is 1-to-0: node A is pulled to ground through BL.
    let dd = match direction {
        Direction::OneToZero => *d,
        Direction::ZeroToOne => d.mirrored(),
    };
    let vdd = dd.vdd;
    let b = BiasCondition {
        v_cell: vdd,
        v_wl: vdd,
        v_bl: 0.0,
        v_blc: vdd,
    };
    let n = (vdd / VTC_GRID).round() as usize;
    let xs: Vec<f64> = (0..=n).map(|k| (k as f64 * VTC_GRID).min(vdd)).collect();
    // Curve A: (f_a(y), y); curve B: (x, f_b(x)).
    let f_a = solve_vtc(&dd, &b, Side::A, &xs)?;
    let f_b = solve_vtc(&dd, &b, Side::B, &xs)?;
    let s2 = std::f64::consts::SQRT_2;
    // Rotated coordinates: u along (1, -1), v along (1, 1).
    let curve_b: Vec<(f64, f64)> = f_b
        .iter()
        .map(|p| ((p.v_in - p.v_out) / s2, (p.v_in + p.v_out) / s2))
        .collect();
    let v_on_b = |u: f64| -> Option<f64> {
        let k = curve_b.partition_point(|&(ub, _)| ub < u);
        if k == 0 || k == curve_b.len() {
            return (k == 0 && curve_b[0].0 == u).then_some(curve_b[0].1);
        }
        let (u0, v0) = curve_b[k - 1];
        let (u1, v1) = curve_b[k];
        if u1 == u0 {
            return Some(v0);
        }
        Some(v0 + (u - u0) / (u1 - u0) * (v1 - v0))
    };
    let mut smallest = f64::INFINITY;
    for p in &f_a {
        let (x, y) = (p.v_out, p.v_in);
        let u = (x - y) / s2;
        if u < 0.0 {
            continue;
        }
        if let Some(vb) = v_on_b(u) {
            let gap = vb - (x + y) / s2;
            smallest = smallest.min(gap / s2);
        }
    }
    if !smallest.is_finite() {
        return Err(Error::solver("write transfer curves do not overlap"));
    }
    Ok(MetricResult::scalar(
        Metric::Wnm,
        direction,
        smallest,
        smallest > 0.0,
    ))
}

/// Continuation step: Newton from the previous state, falling back to a
/// settling transient when the branch ends or jumps.
fn dc_step(d: &CellDesign, b: &BiasCondition, prev: CellState) -> Result<CellState> {
    if let Ok(s) = newton_polish(d, b, prev) {
        let j = evaluate(d, b, &s).jacobian;
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let stable = det > 0.0 && j[0][0] + j[1][1] < 0.0;
        if stable && s.distance(&prev) < 0.05 {
            return Ok(s);
        }
    }
    let w = Waveform::constant(*b);
    let settle = TransientOptions::settling();
    let tr = simulate_transient(d, &w, prev, 50e-9, &settle)?;
    if let Ok(s) = newton_polish(d, b, tr.final_state) {
        return Ok(s);
    }
    // Near a fold Newton can stall; take the nearest stable equilibrium.
    find_equilibria(d, b)?
        .into_iter()
        .filter(|e| e.is_stable())
        .map(|e| e.state)
        .min_by(|x, y| {
            x.distance(&tr.final_state)
                .total_cmp(&y.distance(&tr.final_state))
        })
        .ok_or_else(|| Error::solver("no stable equilibrium under this bias"))
}

enum RampKind {
    Bitline,
    Wordline,
}

fn ramp_metric(
    d: &CellDesign,
    r: &RampConfig,
    direction: Direction,
    kind: RampKind,
) -> Result<MetricResult> {
    r.validate()?;
    let dd = direction.canonical(d);
    let vdd = dd.vdd;
    let n = (vdd / r.step).round() as usize;
    let bias = |k: usize| {
        let swept = (vdd - k as f64 * r.step).max(0.0);
        match kind {
            // BLC stepped down from vdd while WL and BL stay at vdd.
            RampKind::Bitline => (
                swept,
                BiasCondition {
                    v_cell: vdd,
                    v_wl: vdd,
                    v_bl: vdd,
                    v_blc: swept,
                },
            ),
            // WL stepped up from 0 with the bit-lines at the complement.
            RampKind::Wordline => {
                let wl = (k as f64 * r.step).min(vdd);
                (
                    wl,
                    BiasCondition {
                        v_cell: vdd,
                        v_wl: wl,
                        v_bl: vdd,
                        v_blc: 0.0,
                    },
                )
            }
        }
    };
    let (_, b0) = bias(0);
    let mut state = hold_equilibrium(&dd, &b0, StoredState::S0)
        .map_err(|e| {
            Error::Precondition(format!(
                "stored '0' does not survive the ramp start bias: {e}"
            ))
        })?
        .state;
    let mut trace = Vec::with_capacity(n + 1);
    let mut peak = 0.0f64;
    let mut current_drop: Option<f64> = None;
    let mut state_flip: Option<f64> = None;
    for k in 0..=n {
        let (drive, b) = bias(k);
        state = dc_step(&dd, &b, state).map_err(|e| {
            Error::solver(format!("ramp step at drive = {:.4} V failed: {e}", drive))
        })?;
        let i_bl = evaluate(&dd, &b, &state).i_bl;
        let flipped = state.v_a > state.v_b;
        trace.push(RampPoint {
            drive,
            i_bl,
            flipped,
        });
        if current_drop.is_none() && peak > 0.0 && i_bl < r.drop_fraction * peak {
            current_drop = Some(drive);
        }
        if state_flip.is_none() && flipped {
            state_flip = Some(drive);
        }
        peak = peak.max(i_bl);
        if current_drop.is_some() && state_flip.is_some() && k > 0 {
            break;
        }
    }
    let (metric, value) = match (kind, current_drop) {
        (RampKind::Bitline, Some(v)) => (Metric::Bwtv, v),
        (RampKind::Wordline, Some(v)) => (Metric::Wwtv, vdd - v),
        (RampKind::Bitline, None) => (Metric::Bwtv, 0.0),
        (RampKind::Wordline, None) => (Metric::Wwtv, 0.0),
    };
    Ok(MetricResult {
        metric,
        direction,
        value,
        writeable: current_drop.is_some(),
        state_flip_drive: state_flip,
        steps: None,
        trace,
    })
}

/// Bit-line write trip voltage: the highest complementary bit-line level at
/// which the monitored bit-line current collapses.
pub fn bwtv(d: &CellDesign, r: &RampConfig, direction: Direction) -> Result<MetricResult> {
    ramp_metric(d, r, direction, RampKind::Bitline)
}

/// Word-line write trip voltage: vdd minus the word-line level at which the
/// monitored bit-line current collapses.
pub fn wwtv(d: &CellDesign, r: &RampConfig, direction: Direction) -> Result<MetricResult> {
    ramp_metric(d, r, direction, RampKind::Wordline)
}

pub const MIN_PULSE: f64 = 1e-12;
pub const MAX_PULSE: f64 = 100e-9;

/// Shortest word-line plateau (seconds) that writes the cell at the given
/// levels, to 1 % relative precision; infinite when 100 ns is not enough.
pub fn critical_pulse_width(
    d: &CellDesign,
    setup: &WriteSetup,
    direction: Direction,
) -> Result<MetricResult> {
    let writes = |width: f64| -> Result<bool> {
        let s = WriteSetup {
            pulse: PulseShape {
                width,
                ..setup.pulse
            },
            ..*setup
        };
        Ok(attempt_write(d, &s, setup.vdd, direction)?.success)
    };
    let result = |v: f64| MetricResult::scalar(Metric::CritPulse, direction, v, v.is_finite());
    if !writes(MAX_PULSE)? {
        return Ok(result(f64::INFINITY));
    }
    if writes(MIN_PULSE)? {
        return Ok(result(MIN_PULSE));
    }
    let (mut lo, mut hi) = (MIN_PULSE, MAX_PULSE);
    while hi / lo > 1.01 {
        let mid = (lo * hi).sqrt();
        if writes(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(result(hi))
}

/// Whether the write bias held constant with the word line at `v_wl`
/// keeps a stable copy of the initial state (write blocked).
pub fn write_blocked(
    d: &CellDesign,
    setup: &WriteSetup,
    v_wl: f64,
    direction: Direction,
) -> Result<bool> {
    let dd = direction.canonical(d);
    let b = BiasCondition {
        v_cell: setup.v_cell,
        v_wl,
        v_bl: setup.v_bl_high,
        v_blc: setup.v_bl_low,
    };
    let eq = find_equilibria(&dd, &b)?;
    Ok(eq.iter().any(|e| e.kind == EquilibriumKind::StableS0))
}

/// Writes `metric, direction, value_mV, writeable, detail` rows.
pub fn write_metrics_csv<W: Write>(rows: &[(String, MetricResult)], out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["metric", "direction", "value_mV", "writeable", "detail"])?;
    for (label, m) in rows {
        let value = match m.metric {
            // Critical pulse width is reported in picoseconds.
            Metric::CritPulse => format!("{:.3}", m.value * 1e12),
            _ => format!("{:.3}", m.value * 1e3),
        };
        wr.write_record([
            m.metric.to_string(),
            m.direction.to_string(),
            value,
            m.writeable.to_string(),
            label.clone(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Writes a ramp trace as `drive_mV, ibl_uA, flipped`.
pub fn write_ramp_csv<W: Write>(m: &MetricResult, out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["drive_mV", "ibl_uA", "flipped"])?;
    for p in &m.trace {
        wr.write_record([
            format!("{:.3}", p.drive * 1e3),
            format!("{:.6}", p.i_bl * 1e6),
            (p.flipped as u8).to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

//! The 6T bit cell as a two-node nonlinear network.
//!
//! Node A is driven by the side-A inverter (gate on node B) and connects to
//! BL through the side-A access device; node B mirrors it with BLC.

mod dc;
mod transient;
mod waveform;

pub use dc::{
    find_equilibria, hold_equilibrium, newton_polish, solve_vtc, Equilibrium, EquilibriumKind,
    Side, VtcPoint, RESIDUAL_TOL, VTC_GRID,
};
pub use transient::{
    classify_state, read_out, separatrix_point, simulate_transient, write_trajectory_csv, Sample,
    StoredState, Trajectory, TransientOptions, CLASSIFY_SETTLE, DEFAULT_STEP, SETTLE_CURRENT,
};
pub use waveform::Waveform;

use serde::{Deserialize, Serialize};

use crate::device::{DeviceDefaults, MosParams, Polarity};
use crate::error::{Error, Result};

/// Devices of one half cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfCell {
    pub pull_down: MosParams,
    pub pull_up: MosParams,
    pub access: MosParams,
}

/// Transistor-level description of one bit cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellDesign {
    pub a: HalfCell,
    pub b: HalfCell,
    /// Capacitance of each storage node in farads.
    pub c_node: f64,
    /// Nominal supply; sets the read-check thresholds and hold bias.
    pub vdd: f64,
}

/// Default storage-node capacitance.
pub const DEFAULT_C_NODE: f64 = 1e-15;

impl CellDesign {
    /// A symmetric cell from pull-down, access and pull-up widths (meters).
    pub fn from_widths(dev: &DeviceDefaults, w_n: f64, w_tx: f64, w_p: f64) -> Self {
        let half = HalfCell {
            pull_down: dev.nmos(w_n),
            pull_up: dev.pmos(w_p),
            access: dev.nmos(w_tx),
        };
        Self {
            a: half,
            b: half,
            c_node: DEFAULT_C_NODE,
            vdd: dev.vdd,
        }
    }

    /// Pull-down over access width of side A.
    pub fn cell_ratio(&self) -> f64 {
        self.a.pull_down.width / self.a.access.width
    }

    /// Pull-up over access width of side A.
    pub fn pull_up_ratio(&self) -> f64 {
        self.a.pull_up.width / self.a.access.width
    }

    pub fn is_symmetric(&self) -> bool {
        self.a == self.b
    }

    /// The same cell with the roles of nodes A and B exchanged.
    pub fn mirrored(&self) -> Self {
        Self {
            a: self.b,
            b: self.a,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        for half in [&self.a, &self.b] {
            for (dev, pol) in [
                (&half.pull_down, Polarity::N),
                (&half.pull_up, Polarity::P),
                (&half.access, Polarity::N),
            ] {
                dev.validate()?;
                if dev.polarity != pol {
                    return Err(Error::invalid("device polarity does not match its role"));
                }
            }
        }
        if !(self.c_node > 0.0) || !(self.vdd > 0.0) {
            return Err(Error::invalid("node capacitance and vdd must be positive"));
        }
        Ok(())
    }
}

/// Terminal voltages applied to the cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasCondition {
    pub v_cell: f64,
    pub v_wl: f64,
    pub v_bl: f64,
    pub v_blc: f64,
}

impl BiasCondition {
    /// Word-line off, bit-lines precharged.
    pub fn hold(vdd: f64) -> Self {
        Self {
            v_cell: vdd,
            v_wl: 0.0,
            v_bl: vdd,
            v_blc: vdd,
        }
    }

    pub fn is_hold(&self) -> bool {
        self.v_wl == 0.0
    }

    /// Exchanges the two bit-lines.
    pub fn mirrored(&self) -> Self {
        Self {
            v_bl: self.v_blc,
            v_blc: self.v_bl,
            ..*self
        }
    }

    pub fn validate(&self, vdd: f64) -> Result<()> {
        let hi = 1.5 * vdd;
        for (name, v) in [
            ("v_cell", self.v_cell),
            ("v_wl", self.v_wl),
            ("v_bl", self.v_bl),
            ("v_blc", self.v_blc),
        ] {
            if !(0.0..=hi).contains(&v) {
                return Err(Error::invalid(format!(
                    "{name} = {v} V outside [0, {hi}] V"
                )));
            }
        }
        Ok(())
    }
}

/// Voltages of the two storage nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    pub v_a: f64,
    pub v_b: f64,
}

impl CellState {
    pub fn new(v_a: f64, v_b: f64) -> Self {
        Self { v_a, v_b }
    }

    pub fn mirrored(&self) -> Self {
        Self {
            v_a: self.v_b,
            v_b: self.v_a,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.v_a.is_finite() && self.v_b.is_finite()
    }

    /// Largest coordinate difference.
    pub fn distance(&self, other: &CellState) -> f64 {
        (self.v_a - other.v_a)
            .abs()
            .max((self.v_b - other.v_b).abs())
    }
}

/// Node currents, access-device currents and the 2x2 Jacobian at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeEval {
    pub i_a: f64,
    pub i_b: f64,
    /// Current from BL into node A.
    pub i_bl: f64,
    /// Current from BLC into node B.
    pub i_blc: f64,
    /// d(i_a, i_b)/d(v_a, v_b), row-major.
    pub jacobian: [[f64; 2]; 2],
}

/// Net currents into nodes A and B.
pub fn node_currents(d: &CellDesign, b: &BiasCondition, s: &CellState) -> Result<(f64, f64)> {
    if !s.is_finite() {
        return Err(Error::invalid("non-finite cell state"));
    }
    let e = evaluate(d, b, s);
    Ok((e.i_a, e.i_b))
}

/// Current into the storage node of one half cell.
///
/// Returns the net current, its derivative with respect to the own node, its
/// derivative with respect to the opposite (gate) node and the access current.
#[inline]
pub(crate) fn half_current(
    h: &HalfCell,
    v_cell: f64,
    v_wl: f64,
    v_line: f64,
    v_own: f64,
    v_gate: f64,
) -> (f64, f64, f64, f64) {
    let n = h.pull_down.eval(v_gate, v_own);
    let p = h.pull_up.eval(v_gate - v_cell, v_own - v_cell);
    let t = h.access.eval(v_wl - v_own, v_line - v_own);
    let i = -n.id - p.id + t.id;
    let d_own = -n.gds - p.gds - t.gm - t.gds;
    let d_gate = -n.gm - p.gm;
    (i, d_own, d_gate, t.id)
}

/// Full evaluation of the node equations.
#[inline]
pub fn evaluate(d: &CellDesign, b: &BiasCondition, s: &CellState) -> NodeEval {
    let (i_a, da_a, da_b, i_bl) = half_current(&d.a, b.v_cell, b.v_wl, b.v_bl, s.v_a, s.v_b);
    let (i_b, db_b, db_a, i_blc) = half_current(&d.b, b.v_cell, b.v_wl, b.v_blc, s.v_b, s.v_a);
    NodeEval {
        i_a,
        i_b,
        i_bl,
        i_blc,
        jacobian: [[da_a, da_b], [db_a, db_b]],
    }
}

/// Node currents only, for the integrator hot loop.
#[inline]
pub(crate) fn currents(d: &CellDesign, b: &BiasCondition, s: &CellState) -> (f64, f64) {
    let e = evaluate(d, b, s);
    (e.i_a, e.i_b)
}

//! Fixed-step RK4 integration of the two node equations, hold-mode state
//! classification and separatrix location.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{currents, evaluate, BiasCondition, CellDesign, CellState, Waveform};
use crate::error::{Error, Result};

/// Default integration step: 0.2 ps.
pub const DEFAULT_STEP: f64 = 0.2e-12;
/// Hold-mode settling time used by the read check.
pub const CLASSIFY_SETTLE: f64 = 5e-9;
/// Node currents below this level on a constant-bias segment count as
/// settled when skipping is enabled.
pub const SETTLE_CURRENT: f64 = 1e-11;
/// Precision of separatrix bisection.
const SEPARATRIX_RESOLUTION: f64 = 0.5e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StoredState {
    S0,
    S1,
    Undetermined,
}

impl StoredState {
    pub fn complement(self) -> Self {
        match self {
            StoredState::S0 => StoredState::S1,
            StoredState::S1 => StoredState::S0,
            StoredState::Undetermined => StoredState::Undetermined,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransientOptions {
    /// Integration step in seconds.
    pub step: f64,
    /// Record every n-th step.
    pub decimation: usize,
    /// When set, a constant-bias segment whose node currents have fallen
    /// below this level is skipped to its end.
    pub settle_current: Option<f64>,
}

impl Default for TransientOptions {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            decimation: 50,
            settle_current: None,
        }
    }
}

impl TransientOptions {
    /// Options for pass/fail simulations where only end states matter.
    pub fn settling() -> Self {
        Self {
            decimation: usize::MAX,
            settle_current: Some(SETTLE_CURRENT),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub state: CellState,
    /// Current from BL into node A.
    pub i_bl: f64,
    /// Current from BLC into node B.
    pub i_blc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub final_state: CellState,
    /// Set if any state left [-0.2, vdd + 0.2] V.
    pub out_of_range: bool,
}

impl Trajectory {
    /// Exchanges the roles of nodes A and B (and of BL and BLC).
    pub fn mirrored(&self) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|s| Sample {
                    t: s.t,
                    state: s.state.mirrored(),
                    i_bl: s.i_blc,
                    i_blc: s.i_bl,
                })
                .collect(),
            final_state: self.final_state.mirrored(),
            out_of_range: self.out_of_range,
        }
    }
}

fn sample(d: &CellDesign, b: &BiasCondition, t: f64, s: CellState) -> Sample {
    let e = evaluate(d, b, &s);
    Sample {
        t,
        state: s,
        i_bl: e.i_bl,
        i_blc: e.i_blc,
    }
}

/// Integrates `C dV/dt = i(V)` for both nodes from `s0` over `[0, t_end]`.
pub fn simulate_transient(
    d: &CellDesign,
    w: &Waveform,
    s0: CellState,
    t_end: f64,
    opts: &TransientOptions,
) -> Result<Trajectory> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::invalid(format!(
            "t_end must be positive, got {t_end}"
        )));
    }
    if !(opts.step > 0.0) || opts.decimation == 0 {
        return Err(Error::invalid(
            "integration step and decimation must be positive",
        ));
    }
    if !s0.is_finite() {
        return Err(Error::invalid("non-finite initial state"));
    }
    let n_steps = (t_end / opts.step).ceil().max(1.0) as u64;
    let h = t_end / n_steps as f64;
    let inv_c = 1.0 / d.c_node;
    let (lo, hi) = (-0.2, d.vdd + 0.2);

    let mut s = s0;
    let mut out_of_range = false;
    let mut samples = vec![sample(d, &w.bias_at(0.0), 0.0, s)];
    let decimation = opts.decimation as u64;
    let mut n: u64 = 0;
    while n < n_steps {
        let t = n as f64 * h;
        let b0 = w.bias_at(t);
        let k1 = currents(d, &b0, &s);

        if let Some(tol) = opts.settle_current {
            if k1.0.abs() < tol && k1.1.abs() < tol {
                if let Some(until) = w.constant_until(t) {
                    let target = if until.is_finite() {
                        ((until / h).floor() as u64).min(n_steps)
                    } else {
                        n_steps
                    };
                    if target > n {
                        n = target;
                        let tn = n as f64 * h;
                        samples.push(sample(d, &w.bias_at(tn), tn, s));
                        continue;
                    }
                }
            }
        }

        let bm = w.bias_at(t + 0.5 * h);
        let b1 = w.bias_at(t + h);
        let hc = h * inv_c;
        let s2 = CellState::new(s.v_a + 0.5 * hc * k1.0, s.v_b + 0.5 * hc * k1.1);
        let k2 = currents(d, &bm, &s2);
        let s3 = CellState::new(s.v_a + 0.5 * hc * k2.0, s.v_b + 0.5 * hc * k2.1);
        let k3 = currents(d, &bm, &s3);
        let s4 = CellState::new(s.v_a + hc * k3.0, s.v_b + hc * k3.1);
        let k4 = currents(d, &b1, &s4);
        s = CellState::new(
            s.v_a + hc / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
            s.v_b + hc / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        );
        n += 1;
        if !s.is_finite() {
            return Err(Error::Divergence { t: n as f64 * h });
        }
        if s.v_a < lo || s.v_a > hi || s.v_b < lo || s.v_b > hi {
            out_of_range = true;
        }
        if n.is_multiple_of(decimation) || n == n_steps {
            let tn = n as f64 * h;
            samples.push(sample(d, &b1, tn, s));
        }
    }
    if samples.last().map(|x| x.t) != Some(n_steps as f64 * h) {
        let tn = n_steps as f64 * h;
        samples.push(sample(d, &w.bias_at(tn), tn, s));
    }
    Ok(Trajectory {
        samples,
        final_state: s,
        out_of_range,
    })
}

/// Logic value read from a settled state.
pub fn read_out(vdd: f64, s: &CellState) -> StoredState {
    let diff = s.v_a - s.v_b;
    if diff > 0.5 * vdd {
        StoredState::S1
    } else if diff < -0.5 * vdd {
        StoredState::S0
    } else {
        StoredState::Undetermined
    }
}

/// Lets the cell settle in hold mode at nominal supply and reads its value.
pub fn classify_state(d: &CellDesign, s: &CellState) -> Result<StoredState> {
    let w = Waveform::constant(BiasCondition::hold(d.vdd));
    let traj = simulate_transient(d, &w, *s, CLASSIFY_SETTLE, &TransientOptions::settling())?;
    Ok(read_out(d.vdd, &traj.final_state))
}

/// Bisects the segment between two states lying in opposite basins and
/// returns a point on the boundary between them.
pub fn separatrix_point(d: &CellDesign, p0: &CellState, p1: &CellState) -> Result<CellState> {
    let c0 = classify_state(d, p0)?;
    let c1 = classify_state(d, p1)?;
    let opposite = matches!(
        (c0, c1),
        (StoredState::S0, StoredState::S1) | (StoredState::S1, StoredState::S0)
    );
    if !opposite {
        return Err(Error::Precondition(format!(
            "segment endpoints must lie in opposite basins (got {c0:?} and {c1:?})"
        )));
    }
    let at = |f: f64| {
        CellState::new(
            p0.v_a + f * (p1.v_a - p0.v_a),
            p0.v_b + f * (p1.v_b - p0.v_b),
        )
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while at(lo).distance(&at(hi)) > SEPARATRIX_RESOLUTION {
        let mid = 0.5 * (lo + hi);
        match classify_state(d, &at(mid))? {
            c if c == c0 => lo = mid,
            StoredState::Undetermined => return Ok(at(mid)),
            _ => hi = mid,
        }
    }
    Ok(at(0.5 * (lo + hi)))
}

/// Writes a trajectory as `t_ns, va_V, vb_V, ibl_uA, iblc_uA`.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["t_ns", "va_V", "vb_V", "ibl_uA", "iblc_uA"])?;
    for s in &traj.samples {
        wr.write_record([
            format!("{:.6}", s.t * 1e9),
            format!("{:.6}", s.state.v_a),
            format!("{:.6}", s.state.v_b),
            format!("{:.6}", s.i_bl * 1e6),
            format!("{:.6}", s.i_blc * 1e6),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::{hold_equilibrium, node_currents};
    use crate::device::DeviceDefaults;

    fn cell_a() -> CellDesign {
        CellDesign::from_widths(&DeviceDefaults::default(), 150e-9, 150e-9, 150e-9)
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let d = cell_a();
        let hold = BiasCondition::hold(1.2);
        let mut b = hold;
        b.v_cell = 1.1;
        let eq = hold_equilibrium(&d, &b, StoredState::S1).unwrap();
        let w = Waveform::constant(b);
        let tr = simulate_transient(&d, &w, eq.state, 10e-9, &TransientOptions::default()).unwrap();
        assert!(tr.final_state.distance(&eq.state) < 1e-4);
        assert!(!tr.out_of_range);
    }

    #[test]
    fn samples_strictly_increasing_and_currents_consistent() {
        let d = cell_a();
        let w = Waveform::constant(BiasCondition {
            v_cell: 1.2,
            v_wl: 1.2,
            v_bl: 0.0,
            v_blc: 1.2,
        });
        let tr = simulate_transient(
            &d,
            &w,
            CellState::new(1.2, 0.0),
            0.5e-9,
            &TransientOptions::default(),
        )
        .unwrap();
        assert!(tr.samples.windows(2).all(|p| p[1].t > p[0].t));
        let last = tr.samples.last().unwrap();
        assert!((last.t - 0.5e-9).abs() < 1e-18);
        let e = evaluate(&d, &w.bias_at(last.t), &last.state);
        assert_eq!(e.i_bl, last.i_bl);
    }

    #[test]
    fn classify_rails() {
        let d = cell_a();
        assert_eq!(
            classify_state(&d, &CellState::new(1.2, 0.0)).unwrap(),
            StoredState::S1
        );
        assert_eq!(
            classify_state(&d, &CellState::new(0.0, 1.2)).unwrap(),
            StoredState::S0
        );
    }

    #[test]
    fn classify_diagonal_of_symmetric_cell_is_undetermined() {
        let d = cell_a();
        for x in [0.2, 0.6, 1.0] {
            assert_eq!(
                classify_state(&d, &CellState::new(x, x)).unwrap(),
                StoredState::Undetermined
            );
        }
    }

    #[test]
    fn separatrix_of_symmetric_cell_is_diagonal() {
        let d = cell_a();
        let p = separatrix_point(&d, &CellState::new(0.0, 1.2), &CellState::new(1.2, 0.0)).unwrap();
        assert!((p.v_a - p.v_b).abs() < 1e-3);
    }

    #[test]
    fn separatrix_rejects_same_basin() {
        let d = cell_a();
        let p = CellState::new(1.2, 0.0);
        assert!(matches!(
            separatrix_point(&d, &p, &p),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn asymmetric_separatrix_moves_off_diagonal() {
        let mut d = cell_a();
        d.a.pull_down.vth += 0.1;
        let p0 = CellState::new(0.0, 1.2);
        let p1 = CellState::new(1.2, 0.0);
        let p = separatrix_point(&d, &p0, &p1).unwrap();
        assert!((p.v_a - p.v_b).abs() > 2e-3);
        // Direct transient membership 2 mV to either side along the segment.
        let dir = (
            (p1.v_a - p0.v_a) / 1.2f64.hypot(1.2),
            (p1.v_b - p0.v_b) / 1.2f64.hypot(1.2),
        );
        let toward_s0 = CellState::new(p.v_a - 2e-3 * dir.0, p.v_b - 2e-3 * dir.1);
        let toward_s1 = CellState::new(p.v_a + 2e-3 * dir.0, p.v_b + 2e-3 * dir.1);
        let w = Waveform::constant(BiasCondition::hold(1.2));
        let opts = TransientOptions::default();
        let f0 = simulate_transient(&d, &w, toward_s0, 10e-9, &opts)
            .unwrap()
            .final_state;
        let f1 = simulate_transient(&d, &w, toward_s1, 10e-9, &opts)
            .unwrap()
            .final_state;
        assert_eq!(read_out(1.2, &f0), StoredState::S0);
        assert_eq!(read_out(1.2, &f1), StoredState::S1);
    }

    #[test]
    fn rejects_non_positive_duration() {
        let d = cell_a();
        let w = Waveform::constant(BiasCondition::hold(1.2));
        let r = simulate_transient(
            &d,
            &w,
            CellState::new(1.2, 0.0),
            0.0,
            &TransientOptions::default(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn csv_header() {
        let d = cell_a();
        let w = Waveform::constant(BiasCondition::hold(1.2));
        let tr = simulate_transient(
            &d,
            &w,
            CellState::new(1.2, 0.0),
            1e-11,
            &TransientOptions::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&tr, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t_ns,va_V,vb_V,ibl_uA,iblc_uA\n"));
        let _ = node_currents(&d, &BiasCondition::hold(1.2), &tr.final_state).unwrap();
    }
}

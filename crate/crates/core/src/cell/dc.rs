//! DC analysis: inverter transfer curves, equilibrium enumeration and
//! stability classification.

use serde::{Deserialize, Serialize};

use super::{evaluate, half_current, BiasCondition, CellDesign, CellState, StoredState};
use crate::error::{Error, Result};

/// Residual below which a node-current balance counts as solved.
pub const RESIDUAL_TOL: f64 = 1e-12;
/// Grid pitch for transfer curves and crossing search.
pub const VTC_GRID: f64 = 1e-3;
const BRACKET_MARGIN: f64 = 0.1;
const NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VtcPoint {
    pub v_in: f64,
    pub v_out: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EquilibriumKind {
    StableS1,
    StableS0,
    Metastable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub state: CellState,
    pub kind: EquilibriumKind,
}

impl Equilibrium {
    pub fn is_stable(&self) -> bool {
        self.kind != EquilibriumKind::Metastable
    }
}

fn upper_rail(d: &CellDesign, b: &BiasCondition) -> f64 {
    d.vdd.max(b.v_cell).max(b.v_bl).max(b.v_blc)
}

/// Output-node residual of one inverter, as a function of its output.
#[inline]
fn side_residual(d: &CellDesign, b: &BiasCondition, side: Side, v_in: f64, v_out: f64) -> f64 {
    match side {
        Side::A => half_current(&d.a, b.v_cell, b.v_wl, b.v_bl, v_out, v_in).0,
        Side::B => half_current(&d.b, b.v_cell, b.v_wl, b.v_blc, v_out, v_in).0,
    }
}

fn solve_output(d: &CellDesign, b: &BiasCondition, side: Side, v_in: f64) -> Result<f64> {
    let mut lo = -BRACKET_MARGIN;
    let mut hi = upper_rail(d, b) + BRACKET_MARGIN;
    let r_lo = side_residual(d, b, side, v_in, lo);
    let r_hi = side_residual(d, b, side, v_in, hi);
    if !(r_lo >= 0.0 && r_hi <= 0.0) || (r_lo == 0.0 && r_hi == 0.0) {
        return Err(Error::solver(format!(
            "no sign change in output bracket at v_in = {v_in:.6} V"
        )));
    }
    if r_lo == 0.0 {
        return Ok(lo);
    }
    if r_hi == 0.0 {
        return Ok(hi);
    }
    // The residual is non-increasing in the output voltage.
    let mut best = (f64::INFINITY, lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let r = side_residual(d, b, side, v_in, mid);
        if r.abs() < best.0 {
            best = (r.abs(), mid);
        }
        if r.abs() < 0.01 * RESIDUAL_TOL || mid <= lo || mid >= hi {
            break;
        }
        if r > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.0 >= RESIDUAL_TOL {
        return Err(Error::solver(format!(
            "bisection stalled at residual {:.3e} A for v_in = {v_in:.6} V",
            best.0
        )));
    }
    Ok(best.1)
}

/// Transfer curve of one inverter (loaded by its access device) over the
/// given input voltages.
pub fn solve_vtc(
    d: &CellDesign,
    b: &BiasCondition,
    side: Side,
    input_sweep: &[f64],
) -> Result<Vec<VtcPoint>> {
    input_sweep
        .iter()
        .map(|&v_in| {
            if !v_in.is_finite() {
                return Err(Error::invalid("non-finite VTC input"));
            }
            solve_output(d, b, side, v_in).map(|v_out| VtcPoint { v_in, v_out })
        })
        .collect()
}

/// Uniform grid `[0, top]` with the crate's VTC pitch; `top` is included.
pub(crate) fn grid(top: f64) -> Vec<f64> {
    let n = (top / VTC_GRID).round() as usize;
    (0..=n).map(|k| (k as f64 * VTC_GRID).min(top)).collect()
}

/// Piecewise-linear interpolation on a uniform grid starting at 0.
fn interp_uniform(values: &[f64], x: f64) -> f64 {
    let last = values.len() - 1;
    let pos = (x / VTC_GRID).clamp(0.0, last as f64);
    let k = (pos.floor() as usize).min(last.saturating_sub(1));
    let frac = pos - k as f64;
    if last == 0 {
        return values[0];
    }
    values[k] + frac * (values[k + 1] - values[k])
}

fn classify(d: &CellDesign, b: &BiasCondition, s: &CellState) -> EquilibriumKind {
    let j = evaluate(d, b, s).jacobian;
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let tr = j[0][0] + j[1][1];
    if det > 0.0 && tr < 0.0 {
        if s.v_a >= s.v_b {
            EquilibriumKind::StableS1
        } else {
            EquilibriumKind::StableS0
        }
    } else {
        EquilibriumKind::Metastable
    }
}

/// Damped Newton iteration on the node currents starting from `guess`.
pub fn newton_polish(d: &CellDesign, b: &BiasCondition, guess: CellState) -> Result<CellState> {
    let mut s = guess;
    let norm = |e: &super::NodeEval| e.i_a.abs().max(e.i_b.abs());
    let mut e = evaluate(d, b, &s);
    for _ in 0..NEWTON_MAX_ITER {
        if norm(&e) < RESIDUAL_TOL {
            return Ok(s);
        }
        let j = e.jacobian;
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let dx_a = (-e.i_a * j[1][1] + e.i_b * j[0][1]) / det;
        let dx_b = (-e.i_b * j[0][0] + e.i_a * j[1][0]) / det;
        let mut step = (0.1 / dx_a.abs().max(dx_b.abs())).min(1.0);
        let r0 = norm(&e);
        let mut accepted = false;
        for _ in 0..30 {
            let trial = CellState::new(s.v_a + step * dx_a, s.v_b + step * dx_b);
            let et = evaluate(d, b, &trial);
            if norm(&et) < r0 {
                s = trial;
                e = et;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if norm(&e) < RESIDUAL_TOL {
        return Ok(s);
    }
    Err(Error::solver(format!(
        "Newton did not converge from ({:.4}, {:.4}) V; residual {:.3e} A",
        guess.v_a,
        guess.v_b,
        norm(&e)
    )))
}

/// All equilibria of the cell under a constant bias, ordered by decreasing
/// `v_a - v_b`.
pub fn find_equilibria(d: &CellDesign, b: &BiasCondition) -> Result<Vec<Equilibrium>> {
    let top = upper_rail(d, b);
    let xs = grid(top);
    // f_a: node A as a function of node B; f_b: node B as a function of node A.
    let f_a: Vec<f64> = solve_vtc(d, b, Side::A, &xs)?
        .iter()
        .map(|p| p.v_out)
        .collect();
    let f_b: Vec<f64> = solve_vtc(d, b, Side::B, &xs)?
        .iter()
        .map(|p| p.v_out)
        .collect();

    // h(v_b) = f_b(f_a(v_b)) - v_b vanishes at every equilibrium.
    let h: Vec<f64> = xs
        .iter()
        .zip(&f_a)
        .map(|(&vb, &va)| interp_uniform(&f_b, va) - vb)
        .collect();

    let mut seeds = Vec::new();
    for k in 0..xs.len() {
        if h[k].abs() < 1e-7 {
            seeds.push(CellState::new(f_a[k], xs[k]));
        }
        if k + 1 < xs.len() && h[k] * h[k + 1] < 0.0 {
            let t = h[k] / (h[k] - h[k + 1]);
            let vb = xs[k] + t * (xs[k + 1] - xs[k]);
            seeds.push(CellState::new(interp_uniform(&f_a, vb), vb));
        }
    }

    let mut found: Vec<Equilibrium> = Vec::new();
    for seed in seeds {
        let state = newton_polish(d, b, seed)?;
        if found.iter().any(|e| e.state.distance(&state) < 1e-4) {
            continue;
        }
        found.push(Equilibrium {
            state,
            kind: classify(d, b, &state),
        });
    }
    if found.is_empty() {
        return Err(Error::solver("no transfer-curve crossing found"));
    }
    found.sort_by(|x, y| {
        (y.state.v_a - y.state.v_b)
            .partial_cmp(&(x.state.v_a - x.state.v_b))
            .unwrap()
    });
    Ok(found)
}

/// The stable equilibrium holding `target` under bias `b`, found by Newton
/// from the corresponding rail state with a full enumeration as fallback.
pub fn hold_equilibrium(
    d: &CellDesign,
    b: &BiasCondition,
    target: StoredState,
) -> Result<Equilibrium> {
    let (guess, want) = match target {
        StoredState::S1 => (CellState::new(b.v_cell, 0.0), EquilibriumKind::StableS1),
        StoredState::S0 => (CellState::new(0.0, b.v_cell), EquilibriumKind::StableS0),
        StoredState::Undetermined => {
            return Err(Error::invalid(
                "hold equilibrium needs a definite logic state",
            ))
        }
    };
    if let Ok(state) = newton_polish(d, b, guess) {
        let kind = classify(d, b, &state);
        if kind == want {
            return Ok(Equilibrium { state, kind });
        }
    }
    find_equilibria(d, b)?
        .into_iter()
        .find(|e| e.kind == want)
        .ok_or_else(|| Error::solver(format!("no stable {target:?} equilibrium under this bias")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::DeviceDefaults;

    fn cell(w_n: f64, w_tx: f64, w_p: f64) -> CellDesign {
        CellDesign::from_widths(&DeviceDefaults::default(), w_n, w_tx, w_p)
    }

    fn write_bias() -> BiasCondition {
        BiasCondition {
            v_cell: 1.2,
            v_wl: 1.2,
            v_bl: 0.0,
            v_blc: 1.2,
        }
    }

    /// Brute-force count of zeros of the 2-D residual on a 2 mV grid: a cell
    /// contains a zero when both node residuals change sign across it.
    fn brute_force_zero_cells(d: &CellDesign, b: &BiasCondition) -> Vec<(f64, f64)> {
        let step = 2e-3;
        let n = (1.2 / step) as usize;
        let v = |k: usize| k as f64 * step;
        let res: Vec<Vec<(f64, f64)>> = (0..=n)
            .map(|i| {
                (0..=n)
                    .map(|j| {
                        let e = evaluate(d, b, &CellState::new(v(i), v(j)));
                        (e.i_a, e.i_b)
                    })
                    .collect()
            })
            .collect();
        let mut hits = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let corners = [res[i][j], res[i + 1][j], res[i][j + 1], res[i + 1][j + 1]];
                let a_change =
                    corners.iter().any(|c| c.0 >= 0.0) && corners.iter().any(|c| c.0 <= 0.0);
                let b_change =
                    corners.iter().any(|c| c.1 >= 0.0) && corners.iter().any(|c| c.1 <= 0.0);
                if a_change && b_change {
                    hits.push((v(i), v(j)));
                }
            }
        }
        hits
    }

    #[test]
    fn hold_vtc_endpoints() {
        let d = cell(150e-9, 150e-9, 150e-9);
        let b = BiasCondition::hold(1.2);
        let c = solve_vtc(&d, &b, Side::A, &[0.0, 1.2]).unwrap();
        assert!((c[0].v_out - 1.2).abs() < 1e-9);
        assert!(c[1].v_out.abs() < 1e-9);
    }

    #[test]
    fn vtc_residual_below_tolerance_and_monotone() {
        let d = cell(150e-9, 150e-9, 150e-9);
        let b = write_bias();
        let xs = grid(1.2);
        for side in [Side::A, Side::B] {
            let c = solve_vtc(&d, &b, side, &xs).unwrap();
            for w in c.windows(2) {
                assert!(w[1].v_out <= w[0].v_out + 1e-12);
            }
            for p in &c {
                assert!(side_residual(&d, &b, side, p.v_in, p.v_out).abs() < RESIDUAL_TOL);
            }
        }
    }

    #[test]
    fn write_vtc_matches_brute_force_scan() {
        let d = cell(150e-9, 150e-9, 150e-9);
        let b = write_bias();
        let xs: Vec<f64> = (0..=12).map(|k| k as f64 * 0.1).collect();
        let c = solve_vtc(&d, &b, Side::A, &xs).unwrap();
        for p in &c {
            // Zero crossing of the residual on a 0.1 mV scan.
            let mut prev = side_residual(&d, &b, Side::A, p.v_in, -0.1);
            let mut crossing = None;
            for k in 1..=14000 {
                let v = -0.1 + k as f64 * 1e-4;
                let r = side_residual(&d, &b, Side::A, p.v_in, v);
                if prev > 0.0 && r <= 0.0 {
                    crossing = Some(v);
                    break;
                }
                prev = r;
            }
            let v = crossing.expect("scan found a crossing");
            assert!(p.v_out <= v + 1e-12 && p.v_out >= v - 1e-4 - 1e-12);
        }
    }

    #[test]
    fn hold_has_three_equilibria_with_diagonal_saddle() {
        let d = cell(150e-9, 150e-9, 150e-9);
        let eq = find_equilibria(&d, &BiasCondition::hold(1.2)).unwrap();
        assert_eq!(eq.len(), 3);
        assert_eq!(eq[0].kind, EquilibriumKind::StableS1);
        assert_eq!(eq[1].kind, EquilibriumKind::Metastable);
        assert_eq!(eq[2].kind, EquilibriumKind::StableS0);
        assert!((eq[1].state.v_a - eq[1].state.v_b).abs() < 1e-3);
        for e in &eq {
            let x = evaluate(&d, &BiasCondition::hold(1.2), &e.state);
            assert!(x.i_a.abs() < RESIDUAL_TOL && x.i_b.abs() < RESIDUAL_TOL);
        }
    }

    #[test]
    fn nominal_write_bias_has_unique_equilibrium() {
        let d = cell(150e-9, 150e-9, 150e-9);
        let b = write_bias();
        let eq = find_equilibria(&d, &b).unwrap();
        assert_eq!(eq.len(), 1);
        assert_eq!(eq[0].kind, EquilibriumKind::StableS0);
        assert!(eq[0].state.v_a < 0.2 && eq[0].state.v_b > 1.0);
        let hits = brute_force_zero_cells(&d, &b);
        assert!(!hits.is_empty());
        assert!(hits
            .iter()
            .all(|&(va, vb)| (va - eq[0].state.v_a).abs() < 0.01
                && (vb - eq[0].state.v_b).abs() < 0.01));
    }

    #[test]
    fn oversized_pull_up_blocks_write() {
        let d = cell(150e-9, 150e-9, 8.0 * 150e-9);
        let b = write_bias();
        let eq = find_equilibria(&d, &b).unwrap();
        assert!(eq.iter().filter(|e| e.is_stable()).count() >= 2);
        let hits = brute_force_zero_cells(&d, &b);
        // Zeros cluster around at least two well separated locations.
        let far = hits.iter().any(|a| {
            hits.iter()
                .any(|c| (a.0 - c.0).abs() + (a.1 - c.1).abs() > 0.3)
        });
        assert!(far);
    }

    #[test]
    fn hold_equilibrium_from_rails() {
        let d = cell(150e-9, 150e-9, 150e-9);
        let b = BiasCondition::hold(1.2);
        let s1 = hold_equilibrium(&d, &b, StoredState::S1).unwrap();
        assert_eq!(s1.kind, EquilibriumKind::StableS1);
        let s0 = hold_equilibrium(&d, &b, StoredState::S0).unwrap();
        assert_eq!(s0.state, s1.state.mirrored());
    }
}

use serde::{Deserialize, Serialize};

use super::BiasCondition;
use crate::error::{Error, Result};

/// Piecewise-linear bias waveform. Before the first breakpoint and after
/// the last one the bias is held constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    points: Vec<(f64, BiasCondition)>,
}

impl Waveform {
    pub fn new(points: Vec<(f64, BiasCondition)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("waveform needs at least one breakpoint"));
        }
        if points.windows(2).any(|w| !(w[1].0 >= w[0].0)) {
            return Err(Error::invalid(
                "waveform breakpoints must be sorted in time",
            ));
        }
        if points.iter().any(|(t, _)| !t.is_finite()) {
            return Err(Error::invalid("waveform breakpoint times must be finite"));
        }
        Ok(Self { points })
    }

    pub fn constant(b: BiasCondition) -> Self {
        Self {
            points: vec![(0.0, b)],
        }
    }

    pub fn points(&self) -> &[(f64, BiasCondition)] {
        &self.points
    }

    pub fn validate(&self, vdd: f64) -> Result<()> {
        self.points.iter().try_for_each(|(_, b)| b.validate(vdd))
    }

    pub fn bias_at(&self, t: f64) -> BiasCondition {
        let pts = &self.points;
        if t <= pts[0].0 {
            return pts[0].1;
        }
        let last = pts.len() - 1;
        if t >= pts[last].0 {
            return pts[last].1;
        }
        // First breakpoint strictly after t.
        let k = pts.partition_point(|(tp, _)| *tp <= t);
        let (t0, b0) = pts[k - 1];
        let (t1, b1) = pts[k];
        let span = t1 - t0;
        if span <= 0.0 {
            return b1;
        }
        let f = (t - t0) / span;
        let lerp = |x: f64, y: f64| x + f * (y - x);
        BiasCondition {
            v_cell: lerp(b0.v_cell, b1.v_cell),
            v_wl: lerp(b0.v_wl, b1.v_wl),
            v_bl: lerp(b0.v_bl, b1.v_bl),
            v_blc: lerp(b0.v_blc, b1.v_blc),
        }
    }

    /// If the bias is constant from `t` onwards for a while, the time at
    /// which it next starts to change (infinity if never).
    pub fn constant_until(&self, t: f64) -> Option<f64> {
        let pts = &self.points;
        let k = pts.partition_point(|(tp, _)| *tp <= t);
        if k == 0 {
            // Before the first breakpoint the bias equals the first value.
            return Some(self.next_change_from(0));
        }
        if k == pts.len() {
            return Some(f64::INFINITY);
        }
        if pts[k - 1].1 == pts[k].1 {
            Some(self.next_change_from(k - 1))
        } else {
            None
        }
    }

    fn next_change_from(&self, k: usize) -> f64 {
        let pts = &self.points;
        let mut j = k;
        while j + 1 < pts.len() && pts[j + 1].1 == pts[k].1 {
            j += 1;
        }
        if j + 1 == pts.len() {
            f64::INFINITY
        } else {
            pts[j].0
        }
    }

    /// The same waveform with BL and BLC exchanged.
    pub fn mirrored(&self) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|(t, b)| (*t, b.mirrored()))
                .collect(),
        }
    }

    /// Time of the last breakpoint.
    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1].0
    }
}

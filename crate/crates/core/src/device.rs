//! Compact alpha-power-law MOSFET model.
//!
//! Saturation current follows `Kp * (W/L) * vov^alpha * (1 + lambda*vds)`
//! with `vov = vgs - Vth` and a saturation voltage equal to `vov`. Below
//! saturation the current is `Isat * x * (2 - x)` with `x = vds / vov`,
//! which matches value and slope at the boundary. There is no subthreshold
//! conduction and no body effect. The device is source/drain symmetric: a
//! negative `vds` swaps the roles of the two terminals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    N,
    P,
}

/// Parameters of one transistor instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MosParams {
    pub polarity: Polarity,
    /// Channel width in meters.
    pub width: f64,
    /// Channel length in meters.
    pub length: f64,
    /// Threshold voltage, signed (negative for p-channel).
    pub vth: f64,
    /// Transconductance constant in A/V^alpha per square.
    pub kp: f64,
    /// Velocity-saturation exponent, in [1, 2].
    pub alpha: f64,
    /// Channel-length modulation in 1/V.
    pub lambda: f64,
}

/// Drain current together with its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DrainCurrent {
    /// Drain-to-source current in amps.
    pub id: f64,
    /// d(id)/d(vgs).
    pub gm: f64,
    /// d(id)/d(vds).
    pub gds: f64,
}

impl MosParams {
    /// An n-channel device with the given geometry and model constants.
    pub fn nmos(width: f64, length: f64, vth: f64, kp: f64, alpha: f64, lambda: f64) -> Self {
        Self {
            polarity: Polarity::N,
            width,
            length,
            vth,
            kp,
            alpha,
            lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.width,
            self.length,
            self.vth,
            self.kp,
            self.alpha,
            self.lambda,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("transistor parameters must be finite"));
        }
        if self.width <= 0.0 || self.length <= 0.0 {
            return Err(Error::invalid(format!(
                "transistor geometry must be positive (W = {}, L = {})",
                self.width, self.length
            )));
        }
        if self.kp <= 0.0 {
            return Err(Error::invalid(format!(
                "Kp must be positive, got {}",
                self.kp
            )));
        }
        if !(1.0..=2.0).contains(&self.alpha) {
            return Err(Error::invalid(format!(
                "alpha must lie in [1, 2], got {}",
                self.alpha
            )));
        }
        if self.lambda < 0.0 {
            return Err(Error::invalid(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// Width over length.
    pub fn aspect(&self) -> f64 {
        self.width / self.length
    }

    /// Current and small-signal conductances at the given bias.
    ///
    /// Inputs are not checked for finiteness; use [`drain_current`] at API
    /// boundaries.
    #[inline]
    pub fn eval(&self, vgs: f64, vds: f64) -> DrainCurrent {
        match self.polarity {
            Polarity::N => self.eval_n_form(self.vth, vgs, vds),
            Polarity::P => {
                // I_p(vgs, vds) = -I_n(-vgs, -vds) with the threshold negated.
                let m = self.eval_n_form(-self.vth, -vgs, -vds);
                DrainCurrent {
                    id: -m.id,
                    gm: m.gm,
                    gds: m.gds,
                }
            }
        }
    }

    #[inline]
    fn eval_n_form(&self, vth: f64, vgs: f64, vds: f64) -> DrainCurrent {
        if vds >= 0.0 {
            self.forward(vth, vgs, vds)
        } else {
            // Source and drain exchange roles.
            let f = self.forward(vth, vgs - vds, -vds);
            DrainCurrent {
                id: -f.id,
                gm: -f.gm,
                gds: f.gm + f.gds,
            }
        }
    }

    /// n-channel current for vds >= 0.
    #[inline]
    fn forward(&self, vth: f64, vgs: f64, vds: f64) -> DrainCurrent {
        let vov = vgs - vth;
        if vov <= 0.0 {
            return DrainCurrent::default();
        }
        let beta = self.kp * self.aspect();
        let a = self.alpha;
        let clm = 1.0 + self.lambda * vds;
        let pow_a1 = vov.powf(a - 1.0);
        let isat0 = beta * pow_a1 * vov;
        if vds >= vov {
            DrainCurrent {
                id: isat0 * clm,
                gm: beta * a * pow_a1 * clm,
                gds: isat0 * self.lambda,
            }
        } else {
            let x = vds / vov;
            let shape = x * (2.0 - x);
            // isat0 * shape = beta * (2 vds vov^(a-1) - vds^2 vov^(a-2))
            let d_core_dvov =
                beta * pow_a1 * (2.0 * (a - 1.0) * vds / vov - (a - 2.0) * vds * vds / (vov * vov));
            DrainCurrent {
                id: isat0 * shape * clm,
                gm: d_core_dvov * clm,
                gds: isat0 * ((2.0 - 2.0 * x) / vov * clm + shape * self.lambda),
            }
        }
    }
}

/// Signed drain-to-source current of `p` at the given bias.
pub fn drain_current(p: &MosParams, vgs: f64, vds: f64) -> Result<f64> {
    if !vgs.is_finite() || !vds.is_finite() {
        return Err(Error::invalid(format!(
            "non-finite bias (vgs = {vgs}, vds = {vds})"
        )));
    }
    Ok(p.eval(vgs, vds).id)
}

/// Builds the p-channel counterpart of an n-channel device: same geometry,
/// negated threshold and `Kp` scaled by `mobility_ratio`.
pub fn mirror_p_from_n(pn: &MosParams, mobility_ratio: f64) -> Result<MosParams> {
    if pn.polarity != Polarity::N {
        return Err(Error::invalid(
            "mirror_p_from_n expects an n-channel device",
        ));
    }
    if !(mobility_ratio > 0.0) || !mobility_ratio.is_finite() {
        return Err(Error::invalid(format!(
            "mobility ratio must be positive, got {mobility_ratio}"
        )));
    }
    Ok(MosParams {
        polarity: Polarity::P,
        vth: -pn.vth,
        kp: pn.kp * mobility_ratio,
        ..*pn
    })
}

/// Process-level model constants shared by every device of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceDefaults {
    /// Nominal supply in volts.
    pub vdd: f64,
    /// Channel length in meters.
    pub length: f64,
    pub vth_n: f64,
    pub vth_p: f64,
    pub kp_n: f64,
    pub alpha: f64,
    pub lambda: f64,
    /// p/n transconductance ratio.
    pub mobility_ratio: f64,
}

impl Default for DeviceDefaults {
    fn default() -> Self {
        Self {
            vdd: 1.2,
            length: 65e-9,
            vth_n: 0.35,
            vth_p: -0.35,
            kp_n: 4.0e-5,
            alpha: 1.3,
            lambda: 0.1,
            mobility_ratio: 0.5,
        }
    }
}

impl DeviceDefaults {
    pub fn nmos(&self, width: f64) -> MosParams {
        MosParams::nmos(
            width,
            self.length,
            self.vth_n,
            self.kp_n,
            self.alpha,
            self.lambda,
        )
    }

    pub fn pmos(&self, width: f64) -> MosParams {
        MosParams {
            polarity: Polarity::P,
            width,
            length: self.length,
            vth: self.vth_p,
            kp: self.kp_n * self.mobility_ratio,
            alpha: self.alpha,
            lambda: self.lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.vdd > 0.0) {
            return Err(Error::invalid(format!(
                "vdd must be positive, got {}",
                self.vdd
            )));
        }
        if !(self.vth_n > 0.0) || !(self.vth_p < 0.0) {
            return Err(Error::invalid("vth_n must be positive and vth_p negative"));
        }
        if !(self.mobility_ratio > 0.0) {
            return Err(Error::invalid("mobility_ratio must be positive"));
        }
        self.nmos(1e-7).validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n() -> MosParams {
        DeviceDefaults::default().nmos(150e-9)
    }

    #[test]
    fn cutoff_is_exact_zero() {
        assert_eq!(drain_current(&n(), 0.0, 0.6).unwrap(), 0.0);
        assert_eq!(drain_current(&n(), 0.35, 0.6).unwrap(), 0.0);
    }

    #[test]
    fn zero_vds_is_exact_zero() {
        assert_eq!(drain_current(&n(), 1.2, 0.0).unwrap(), 0.0);
        let p = mirror_p_from_n(&n(), 0.4).unwrap();
        assert_eq!(drain_current(&p, -1.2, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn saturation_matches_closed_form() {
        let p = n();
        // Written out by hand: Kp * (W/L) * (vgs - Vth)^alpha * (1 + lambda*vds).
        let expected = 4.0e-5 * (150.0 / 65.0) * (0.85f64).powf(1.3) * (1.0 + 0.1 * 1.2);
        let got = drain_current(&p, 1.2, 1.2).unwrap();
        assert!(
            ((got - expected) / expected).abs() < 1e-12,
            "{got} vs {expected}"
        );
    }

    #[test]
    fn linear_region_matches_closed_form() {
        let p = n();
        let (vgs, vds) = (1.0, 0.2);
        let vov: f64 = 0.65;
        let x = vds / vov;
        let expected = 4.0e-5 * (150.0 / 65.0) * vov.powf(1.3) * x * (2.0 - x) * (1.0 + 0.1 * vds);
        let got = drain_current(&p, vgs, vds).unwrap();
        assert!(((got - expected) / expected).abs() < 1e-12);
    }

    #[test]
    fn non_finite_bias_rejected() {
        assert!(drain_current(&n(), f64::NAN, 0.1).is_err());
        assert!(drain_current(&n(), 0.1, f64::INFINITY).is_err());
    }

    #[test]
    fn mirror_with_unit_ratio_is_exact() {
        let pn = n();
        let pp = mirror_p_from_n(&pn, 1.0).unwrap();
        for &(vgs, vds) in &[(1.2, 1.2), (0.8, 0.1), (0.5, -0.3), (1.1, 0.6)] {
            let a = drain_current(&pn, vgs, vds).unwrap();
            let b = drain_current(&pp, -vgs, -vds).unwrap();
            assert_eq!(a.abs(), b.abs());
        }
    }

    #[test]
    fn mirror_scales_by_mobility_ratio() {
        let pn = n();
        let pp = mirror_p_from_n(&pn, 0.4).unwrap();
        let i_n = drain_current(&pn, 1.2, 1.2).unwrap();
        let i_p = drain_current(&pp, -1.2, -1.2).unwrap();
        assert!((i_p + 0.4 * i_n).abs() <= 1e-15 * i_n.abs());
    }

    #[test]
    fn mirror_rejects_bad_ratio_and_polarity() {
        assert!(mirror_p_from_n(&n(), 0.0).is_err());
        assert!(mirror_p_from_n(&n(), -1.0).is_err());
        let p = mirror_p_from_n(&n(), 0.4).unwrap();
        assert!(mirror_p_from_n(&p, 0.4).is_err());
    }

    #[test]
    fn reverse_bias_is_antisymmetric_swap() {
        let p = n();
        // Drain below source: current equals the forward current with the
        // terminals exchanged, negated.
        let rev = drain_current(&p, 1.0, -0.3).unwrap();
        let fwd = drain_current(&p, 1.3, 0.3).unwrap();
        assert_eq!(rev, -fwd);
    }

    #[test]
    fn no_jump_across_saturation_boundary() {
        let p = n();
        for vgs_mv in (360..=1200).step_by(20) {
            let vgs = vgs_mv as f64 * 1e-3;
            let vdsat = vgs - p.vth;
            let left = p.eval(vgs, vdsat - 1e-12).id;
            let right = p.eval(vgs, vdsat + 1e-12).id;
            assert!((right - left).abs() < 1e-9);
            let i = |mv: f64| p.eval(vgs, mv * 1e-3).id;
            let mut prev = i(0.0);
            for mv in 1..=1200 {
                let cur = i(mv as f64);
                assert!(cur >= prev);
                prev = cur;
            }
        }
    }

    #[test]
    fn conductances_match_finite_differences() {
        let p = n();
        let h = 1e-6;
        for &(vgs, vds) in &[(1.2, 1.2), (0.9, 0.3), (0.7, -0.2), (1.0, 0.64)] {
            let d = p.eval(vgs, vds);
            let gm = (p.eval(vgs + h, vds).id - p.eval(vgs - h, vds).id) / (2.0 * h);
            let gds = (p.eval(vgs, vds + h).id - p.eval(vgs, vds - h).id) / (2.0 * h);
            assert!((d.gm - gm).abs() <= 1e-5 * gm.abs().max(1e-9));
            assert!((d.gds - gds).abs() <= 1e-5 * gds.abs().max(1e-9));
        }
    }

    #[test]
    fn validation_catches_bad_params() {
        let mut p = n();
        p.width = 0.0;
        assert!(p.validate().is_err());
        let mut p = n();
        p.alpha = 2.5;
        assert!(p.validate().is_err());
        let mut p = n();
        p.lambda = -0.1;
        assert!(p.validate().is_err());
        assert!(n().validate().is_ok());
    }
}

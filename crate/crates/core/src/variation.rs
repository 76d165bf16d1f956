//! Per-transistor threshold mismatch and Monte Carlo populations.
//!
//! Every random draw is addressed by `(seed, cell index, slot)`: the seed
//! keys a ChaCha8 generator, the cell index selects its stream and the slot
//! fixes the word position. Draws therefore do not depend on evaluation
//! order or on how many workers run.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::CellDesign;
use crate::device::MosParams;
use crate::error::{Error, Result};

/// Transistor slots within a cell, in draw order.
pub const SLOT_NAMES: [&str; 6] = ["na", "pa", "txa", "nb", "pb", "txb"];
const WORDS_PER_SLOT: u128 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationModel {
    /// Pelgrom threshold-mismatch coefficient in V*m.
    pub avt: f64,
    /// Independent draws per transistor; when false one draw per cell is
    /// shared by all six devices.
    pub independent: bool,
    /// Relative width sigma; zero disables width variation.
    pub width_sigma: f64,
}

impl Default for VariationModel {
    fn default() -> Self {
        Self {
            avt: 4.5e-9,
            independent: true,
            width_sigma: 0.0,
        }
    }
}

impl VariationModel {
    pub fn none() -> Self {
        Self {
            avt: 0.0,
            ..Self::default()
        }
    }

    /// Threshold sigma of a device with the given gate area.
    pub fn sigma_vth(&self, width: f64, length: f64) -> f64 {
        self.avt / (width * length).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.avt >= 0.0) || !self.avt.is_finite() {
            return Err(Error::invalid("avt must be non-negative"));
        }
        if !(self.width_sigma >= 0.0 && self.width_sigma < 1.0) {
            return Err(Error::invalid("width_sigma must be in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleId {
    pub seed: u64,
    pub index: u64,
}

/// Standard normal draw addressed by `(seed, index, slot)`.
pub fn normal_draw(id: SampleId, slot: u32) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(id.seed);
    rng.set_stream(id.index);
    rng.set_word_pos(slot as u128 * WORDS_PER_SLOT);
    StandardNormal.sample(&mut rng)
}

fn perturb(dev: &MosParams, vm: &VariationModel, z_vth: f64, z_w: f64) -> MosParams {
    let mut out = *dev;
    out.vth += z_vth * vm.sigma_vth(dev.width, dev.length);
    if vm.width_sigma > 0.0 {
        out.width = dev.width * (1.0 + vm.width_sigma * z_w).max(0.1);
    }
    out
}

/// A variation sample of `nominal`.
pub fn sample_cell(nominal: &CellDesign, vm: &VariationModel, id: SampleId) -> CellDesign {
    if vm.avt == 0.0 && vm.width_sigma == 0.0 {
        return *nominal;
    }
    let z = |slot: u32| {
        let vth_slot = if vm.independent { slot } else { 0 };
        let z_vth = if vm.avt > 0.0 {
            normal_draw(id, vth_slot)
        } else {
            0.0
        };
        let z_w = if vm.width_sigma > 0.0 {
            normal_draw(id, 6 + slot)
        } else {
            0.0
        };
        (z_vth, z_w)
    };
    let mut d = *nominal;
    let devices = [
        &mut d.a.pull_down,
        &mut d.a.pull_up,
        &mut d.a.access,
        &mut d.b.pull_down,
        &mut d.b.pull_up,
        &mut d.b.access,
    ];
    for (slot, dev) in devices.into_iter().enumerate() {
        let (z_vth, z_w) = z(slot as u32);
        *dev = perturb(dev, vm, z_vth, z_w);
    }
    d
}

/// Outcome of evaluating one Monte Carlo sample.
#[derive(Debug, Clone, PartialEq)]
pub struct McSample<T> {
    pub id: SampleId,
    pub design: CellDesign,
    /// Evaluation errors are kept per sample as messages.
    pub value: std::result::Result<T, String>,
}

/// Evaluates `metric` on `n` independently sampled designs. The result is
/// ordered by sample index and does not depend on the thread pool.
pub fn monte_carlo<T, F>(
    nominal: &CellDesign,
    vm: &VariationModel,
    seed: u64,
    n: usize,
    metric: F,
) -> Result<Vec<McSample<T>>>
where
    T: Send,
    F: Fn(&CellDesign) -> Result<T> + Sync,
{
    if n == 0 {
        return Err(Error::invalid("Monte Carlo needs at least one sample"));
    }
    vm.validate()?;
    Ok((0..n as u64)
        .into_par_iter()
        .map(|index| {
            let id = SampleId { seed, index };
            let design = sample_cell(nominal, vm, id);
            let value = metric(&design).map_err(|e| e.to_string());
            McSample { id, design, value }
        })
        .collect())
}

fn vth_offsets(nominal: &CellDesign, d: &CellDesign) -> [f64; 6] {
    let pairs = [
        (d.a.pull_down.vth, nominal.a.pull_down.vth),
        (d.a.pull_up.vth, nominal.a.pull_up.vth),
        (d.a.access.vth, nominal.a.access.vth),
        (d.b.pull_down.vth, nominal.b.pull_down.vth),
        (d.b.pull_up.vth, nominal.b.pull_up.vth),
        (d.b.access.vth, nominal.b.access.vth),
    ];
    pairs.map(|(v, n)| v - n)
}

/// Writes `seed, cell_index, vth_na_mV, ..., vth_txb_mV` threshold offsets.
pub fn write_population_csv<W: Write>(
    nominal: &CellDesign,
    samples: &[(SampleId, CellDesign)],
    out: W,
) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    let mut header = vec!["seed".to_string(), "cell_index".to_string()];
    header.extend(SLOT_NAMES.iter().map(|s| format!("vth_{s}_mV")));
    wr.write_record(&header)?;
    for (id, d) in samples {
        let mut row = vec![id.seed.to_string(), id.index.to_string()];
        row.extend(
            vth_offsets(nominal, d)
                .iter()
                .map(|v| format!("{:.6}", v * 1e3)),
        );
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::DeviceDefaults;

    fn cell_a() -> CellDesign {
        CellDesign::from_widths(&DeviceDefaults::default(), 150e-9, 150e-9, 150e-9)
    }

    #[test]
    fn zero_avt_returns_nominal() {
        let d = cell_a();
        let s = sample_cell(&d, &VariationModel::none(), SampleId { seed: 3, index: 9 });
        assert_eq!(s, d);
    }

    #[test]
    fn same_id_same_design() {
        let d = cell_a();
        let vm = VariationModel::default();
        let id = SampleId {
            seed: 11,
            index: 42,
        };
        assert_eq!(sample_cell(&d, &vm, id), sample_cell(&d, &vm, id));
        assert_ne!(
            sample_cell(&d, &vm, id),
            sample_cell(
                &d,
                &vm,
                SampleId {
                    seed: 11,
                    index: 43
                }
            )
        );
    }

    #[test]
    fn shared_draw_when_not_independent() {
        let d = cell_a();
        let vm = VariationModel {
            independent: false,
            ..VariationModel::default()
        };
        let s = sample_cell(&d, &vm, SampleId { seed: 1, index: 0 });
        let off = vth_offsets(&d, &s);
        assert!(off.iter().all(|o| (o - off[0]).abs() < 1e-15));
    }

    #[test]
    fn pelgrom_scaling() {
        let vm = VariationModel::default();
        let s1 = vm.sigma_vth(150e-9, 65e-9);
        let s4 = vm.sigma_vth(300e-9, 130e-9);
        assert!((s1 / s4 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn width_variation_changes_widths_only_when_enabled() {
        let d = cell_a();
        let vm = VariationModel {
            width_sigma: 0.05,
            ..VariationModel::default()
        };
        let s = sample_cell(&d, &vm, SampleId { seed: 2, index: 5 });
        assert_ne!(s.a.access.width, d.a.access.width);
        let s = sample_cell(
            &d,
            &VariationModel::default(),
            SampleId { seed: 2, index: 5 },
        );
        assert_eq!(s.a.access.width, d.a.access.width);
    }

    #[test]
    fn draws_have_unit_variance() {
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|k| normal_draw(SampleId { seed: 7, index: k }, 2))
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.02, "std {}", var.sqrt());
    }

    #[test]
    fn slots_are_uncorrelated() {
        let n = 10_000;
        for (s1, s2) in [(0, 1), (0, 3), (2, 5)] {
            let pairs: Vec<(f64, f64)> = (0..n)
                .map(|k| {
                    let id = SampleId { seed: 1, index: k };
                    (normal_draw(id, s1), normal_draw(id, s2))
                })
                .collect();
            let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n as f64;
            let my = pairs.iter().map(|p| p.1).sum::<f64>() / n as f64;
            let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
            for (x, y) in &pairs {
                sxy += (x - mx) * (y - my);
                sxx += (x - mx).powi(2);
                syy += (y - my).powi(2);
            }
            let r = sxy / (sxx * syy).sqrt();
            assert!(r.abs() < 0.05, "slots {s1},{s2}: r = {r}");
        }
    }

    #[test]
    fn sampled_sigma_follows_area() {
        let d = cell_a();
        let vm = VariationModel::default();
        let n = 20_000;
        let offs: Vec<f64> = (0..n)
            .map(|k| {
                let s = sample_cell(&d, &vm, SampleId { seed: 4, index: k });
                s.a.access.vth - d.a.access.vth
            })
            .collect();
        let std = (offs.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
        let expected = 4.5e-9 / (150e-9f64 * 65e-9).sqrt();
        assert!((std / expected - 1.0).abs() < 0.03, "{std} vs {expected}");
    }

    #[test]
    fn monte_carlo_is_ordered_and_reports_errors() {
        let d = cell_a();
        let out = monte_carlo(&d, &VariationModel::default(), 5, 8, |c| {
            if c.a.access.vth > 0.35 {
                Err(Error::invalid("weak access"))
            } else {
                Ok(c.a.access.vth)
            }
        })
        .unwrap();
        assert_eq!(out.len(), 8);
        assert!(out.iter().enumerate().all(|(k, s)| s.id.index == k as u64));
        assert!(out.iter().any(|s| s.value.is_err()));
        assert!(monte_carlo(&d, &VariationModel::default(), 5, 0, |_| Ok(())).is_err());
    }
}

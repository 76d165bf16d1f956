//! Word-line voltage margin search over a memory array.
//!
//! The array is written one unit (bit, word, block or the whole memory) at
//! a time while the word-line level is lowered in steps of `delta`. A unit
//! fails at a level when any of its cells fails to take the new value; its
//! margin is the first level at which that happens.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::CellDesign;
use crate::error::{Error, Result};
use crate::metrics::{attempt_write, never_failed_steps, Direction, WriteSetup};
use crate::variation::{sample_cell, SampleId, VariationModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Bit,
    Word,
    Block,
    Memory,
}

impl Granularity {
    pub const ALL: [Granularity; 4] = [
        Granularity::Bit,
        Granularity::Word,
        Granularity::Block,
        Granularity::Memory,
    ];
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::Bit => "bit",
            Granularity::Word => "word",
            Granularity::Block => "block",
            Granularity::Memory => "memory",
        })
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bit" => Ok(Granularity::Bit),
            "word" => Ok(Granularity::Word),
            "block" => Ok(Granularity::Block),
            "memory" => Ok(Granularity::Memory),
            other => Err(Error::invalid(format!(
                "unknown granularity '{other}' (expected bit, word, block or memory)"
            ))),
        }
    }
}

/// Geometry and sweep settings of an array experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub rows: usize,
    pub cols: usize,
    /// Cells per word; must divide `cols`.
    pub word_width: usize,
    /// Words per block.
    pub block_words: usize,
}

impl ArrayGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.word_width == 0 || self.block_words == 0 {
            return Err(Error::invalid("array dimensions must be positive"));
        }
        if !self.cols.is_multiple_of(self.word_width) {
            return Err(Error::invalid(format!(
                "word width {} does not divide {} columns",
                self.word_width, self.cols
            )));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn words(&self) -> usize {
        self.cells() / self.word_width
    }

    /// Cell indices of every unit at the given granularity, in address order.
    pub fn units(&self, g: Granularity) -> Vec<Vec<usize>> {
        let n = self.cells();
        let size = match g {
            Granularity::Bit => 1,
            Granularity::Word => self.word_width,
            Granularity::Block => self.word_width * self.block_words,
            Granularity::Memory => n,
        };
        (0..n)
            .step_by(size)
            .map(|start| (start..(start + size).min(n)).collect())
            .collect()
    }

    pub fn position(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayModel {
    pub geometry: ArrayGeometry,
    /// Row-major cell designs.
    pub cells: Vec<CellDesign>,
    pub setup: WriteSetup,
    /// Word-line reduction step in volts.
    pub delta: f64,
    /// Lowest word-line level tried.
    pub floor: f64,
}

impl ArrayModel {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.cells.len() != self.geometry.cells() {
            return Err(Error::invalid(
                "cell count does not match the array geometry",
            ));
        }
        if !(self.delta > 0.0) {
            return Err(Error::invalid("delta must be positive"));
        }
        if !(self.floor >= 0.0 && self.floor < self.setup.vdd) {
            return Err(Error::invalid("floor must be in [0, vdd)"));
        }
        Ok(())
    }

    pub fn max_steps(&self) -> u32 {
        ((self.setup.vdd - self.floor) / self.delta + 1e-9).floor() as u32
    }
}

/// Samples every cell of the array from `nominal`; cell `k` uses sample index `k`.
pub fn build_array(
    nominal: &CellDesign,
    vm: &VariationModel,
    seed: u64,
    geometry: ArrayGeometry,
    setup: WriteSetup,
    delta: f64,
    floor: f64,
) -> Result<ArrayModel> {
    geometry.validate()?;
    vm.validate()?;
    let cells = (0..geometry.cells() as u64)
        .map(|index| sample_cell(nominal, vm, SampleId { seed, index }))
        .collect();
    let a = ArrayModel {
        geometry,
        cells,
        setup,
        delta,
        floor,
    };
    a.validate()?;
    Ok(a)
}

type Outcome = std::result::Result<bool, String>;

/// Write outcomes per `(cell, direction, step)`. A write outcome does not
/// depend on which unit the cell is accessed with, so coarser searches can
/// reuse the results of finer ones.
#[derive(Debug, Default, Clone)]
pub struct OutcomeCache {
    map: HashMap<(usize, Direction, u32), Outcome>,
    evaluated: usize,
}

impl OutcomeCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of write simulations run through this cache.
    pub fn evaluated(&self) -> usize {
        self.evaluated
    }

    fn ensure(&mut self, a: &ArrayModel, dir: Direction, j: u32, cells: &[usize]) {
        let missing: Vec<usize> = cells
            .iter()
            .copied()
            .filter(|&c| !self.map.contains_key(&(c, dir, j)))
            .collect();
        let v_wl = (a.setup.vdd - j as f64 * a.delta).max(0.0);
        let outcomes: Vec<Outcome> = missing
            .par_iter()
            .map(|&c| {
                attempt_write(&a.cells[c], &a.setup, v_wl, dir)
                    .map(|w| w.success)
                    .map_err(|e| e.to_string())
            })
            .collect();
        self.evaluated += missing.len();
        for (c, o) in missing.into_iter().zip(outcomes) {
            self.map.insert((c, dir, j), o);
        }
    }
}

/// Margin of one unit in one direction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitMargin {
    /// First failing step; the full supply in steps when it never failed
    /// above the floor.
    pub steps: u32,
    pub error: Option<String>,
}

/// Runs the stepped word-line search for every unit in address order.
///
/// At each level only units that have not failed yet are written; the
/// search stops when no unit succeeds any more or the floor is reached.
pub fn wlvm_search(
    a: &ArrayModel,
    g: Granularity,
    dir: Direction,
    cache: &mut OutcomeCache,
) -> Result<Vec<UnitMargin>> {
    a.validate()?;
    let units = a.geometry.units(g);
    let max = a.max_steps();
    let never = never_failed_steps(a.setup.vdd, a.delta);
    let mut first_fail: Vec<Option<u32>> = vec![None; units.len()];
    let mut errors: Vec<Option<String>> = vec![None; units.len()];
    for j in 0..=max {
        let active: Vec<usize> = (0..units.len())
            .filter(|&u| first_fail[u].is_none() && errors[u].is_none())
            .collect();
        if active.is_empty() {
            break;
        }
        let cells: Vec<usize> = active
            .iter()
            .flat_map(|&u| units[u].iter().copied())
            .collect();
        cache.ensure(a, dir, j, &cells);
        let mut successes = 0;
        for &u in &active {
            let mut ok = true;
            for c in &units[u] {
                match &cache.map[&(*c, dir, j)] {
                    Ok(true) => {}
                    Ok(false) => ok = false,
                    Err(e) => {
                        errors[u] = Some(format!("cell {c}: {e}"));
                        ok = false;
                    }
                }
            }
            if errors[u].is_some() {
                continue;
            }
            if ok {
                successes += 1;
            } else {
                first_fail[u] = Some(first_fail[u].map_or(j, |f| f.min(j)));
            }
        }
        if successes == 0 {
            break;
        }
    }
    Ok(first_fail
        .into_iter()
        .zip(errors)
        .map(|(f, error)| UnitMargin {
            steps: f.unwrap_or(never),
            error,
        })
        .collect())
}

/// Margin of one unit in both directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WlvmRecord {
    pub index: usize,
    pub row: usize,
    pub col: usize,
    pub steps_0to1: u32,
    pub steps_1to0: u32,
    /// The smaller of the two directions.
    pub steps: u32,
    pub error: Option<String>,
}

impl WlvmRecord {
    pub fn is_valid(&self) -> bool {
        self.error.is_none()
    }
}

pub fn combine_directions(
    geometry: &ArrayGeometry,
    g: Granularity,
    zero_to_one: &[UnitMargin],
    one_to_zero: &[UnitMargin],
) -> Result<Vec<WlvmRecord>> {
    if zero_to_one.len() != one_to_zero.len() {
        return Err(Error::invalid(format!(
            "direction results cover different units ({} vs {})",
            zero_to_one.len(),
            one_to_zero.len()
        )));
    }
    let units = geometry.units(g);
    if units.len() != zero_to_one.len() {
        return Err(Error::invalid(
            "unit count does not match the array geometry",
        ));
    }
    Ok(units
        .iter()
        .zip(zero_to_one.iter().zip(one_to_zero))
        .enumerate()
        .map(|(index, (cells, (u, v)))| {
            let (row, col) = geometry.position(cells[0]);
            WlvmRecord {
                index,
                row,
                col,
                steps_0to1: u.steps,
                steps_1to0: v.steps,
                steps: u.steps.min(v.steps),
                error: u.error.clone().or_else(|| v.error.clone()),
            }
        })
        .collect())
}

/// Searches both directions at granularity `g` and combines them.
pub fn wlvm_array(
    a: &ArrayModel,
    g: Granularity,
    cache: &mut OutcomeCache,
) -> Result<Vec<WlvmRecord>> {
    let up = wlvm_search(a, g, Direction::ZeroToOne, cache)?;
    let down = wlvm_search(a, g, Direction::OneToZero, cache)?;
    combine_directions(&a.geometry, g, &up, &down)
}

/// Writes `index,row,col,wlvm_0to1_mV,wlvm_1to0_mV,wlvm_mV[,error]` rows.
pub fn write_records_csv<W: Write>(records: &[WlvmRecord], delta: f64, out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record([
        "index",
        "row",
        "col",
        "wlvm_0to1_mV",
        "wlvm_1to0_mV",
        "wlvm_mV",
        "error",
    ])?;
    let mv = |s: u32| format!("{:.3}", s as f64 * delta * 1e3);
    for r in records {
        wr.write_record([
            r.index.to_string(),
            r.row.to_string(),
            r.col.to_string(),
            mv(r.steps_0to1),
            mv(r.steps_1to0),
            mv(r.steps),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

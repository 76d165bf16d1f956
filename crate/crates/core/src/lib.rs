//! Transistor-level write-stability characterization of 6T SRAM cells.

pub mod array;
pub mod cell;
pub mod cli;
pub mod device;
pub mod error;
pub mod metrics;
pub mod stats;
pub mod variation;

pub use error::{Error, Result};

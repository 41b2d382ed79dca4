//! Simulation and analysis of parametric frequency conversion between two
//! dissipative cavity modes coupled through a flux-pumped reactance.
//!
//! The crate integrates the coupled-mode equations of motion for a readout
//! mode A (with a port) and a storage mode B, runs timed pulse sequences
//! (load, swap, delay, retrieve, read out) and extracts oscillation
//! frequencies, decay constants, efficiencies and phase response from the
//! simulated traces.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod analysis;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod flux;
pub mod model;
pub mod sequencer;
pub mod units;

pub use error::{Error, Result};

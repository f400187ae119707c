//! Desk-scale SQUID radiation-test bench.
//!
//! The crate simulates a complete beam campaign against known ground truth:
//!
//! * [`device`] renders the drive and readout channels of an unperturbed SQUID.
//! * [`injection`] samples radiation faults (burst, peak) and spurious events
//!   (sawtooth, oscillating) and renders them onto the channels.
//! * [`acquisition`] emulates the oscilloscope trigger and 2 ms captures.
//! * [`analysis`] extracts onset, end, duration and amplitude features.
//! * [`classification`] separates radiation from spurious events and splits
//!   radiation faults into bursts and peaks.
//! * [`statistics`] turns event counts into cross sections with exact Poisson
//!   confidence intervals.
//! * [`transport`] is a simplified particle-transport and phonon-cascade
//!   Monte Carlo comparing neutron and gamma primaries.
//! * [`campaign`] wires everything into an end-to-end run.

pub mod acquisition;
pub mod analysis;
pub mod campaign;
pub mod classification;
pub mod device;
pub mod error;
pub mod injection;
pub mod plot;
pub mod report;
pub mod rng;
pub mod signal;
pub mod statistics;
pub mod transport;
pub mod units;

pub use error::{Error, Result};

/// Version string embedded in every run output.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

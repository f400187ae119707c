//! Unit conversion factors. Everything inside the crate is SI (seconds,
//! volts, amperes); configuration files and reports use the lab units below.

pub const MILLIVOLT: f64 = 1e-3;
pub const MICROAMP: f64 = 1e-6;
pub const MILLISECOND: f64 = 1e-3;
pub const MICROSECOND: f64 = 1e-6;
pub const NANOSECOND: f64 = 1e-9;
pub const HOUR: f64 = 3600.0;

pub const MEV_TO_EV: f64 = 1e6;

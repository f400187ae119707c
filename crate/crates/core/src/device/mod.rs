//! Electrical model of the SQUID under test.
//!
//! The device is driven with a periodic current below its critical current,
//! so an unperturbed device produces a flat (noise-only) voltage channel. Both
//! recorded channels pass through the readout electronics, which multiply
//! them by a fixed gain before they reach the oscilloscope.

mod noise;
mod trace_io;

pub use noise::{NoiseField, NOISE_BLOCK};
pub use trace_io::{read_trace, read_trace_file, write_trace, write_trace_file, TRACE_MAGIC, TRACE_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::rng::purpose;
use crate::units::{MICROAMP, MILLIVOLT, NANOSECOND};

/// Shape of the voltage branch above the critical current.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ViModel {
    /// `V = R * sign(I) * (|I| - Ic)`.
    #[default]
    Ohmic,
    /// Resistively-shunted junction: `V = R * sign(I) * sqrt(I^2 - Ic^2)`.
    Rsj,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceParams {
    /// Critical current in microamps, taken at its flux-tuned maximum.
    pub critical_current_ua: f64,
    pub normal_resistance_ohm: f64,
    /// Multiplier applied by the readout electronics to both channels.
    pub readout_gain: f64,
    /// Post-gain voltage-channel noise, millivolts.
    pub noise_sigma_voltage_mv: f64,
    /// Post-gain current-channel noise, millivolts as read on the scope.
    pub noise_sigma_current_mv: f64,
    pub vi_model: ViModel,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            critical_current_ua: 54.3,
            normal_resistance_ohm: 2.0,
            readout_gain: 1e4,
            noise_sigma_voltage_mv: 1.0,
            noise_sigma_current_mv: 1.0,
            vi_model: ViModel::Ohmic,
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.critical_current_ua > 0.0 && self.critical_current_ua.is_finite()) {
            return Err(Error::invalid("critical_current_ua", "must be positive"));
        }
        if !(self.normal_resistance_ohm > 0.0 && self.normal_resistance_ohm.is_finite()) {
            return Err(Error::invalid("normal_resistance_ohm", "must be positive"));
        }
        if !(self.readout_gain > 0.0 && self.readout_gain.is_finite()) {
            return Err(Error::invalid("readout_gain", "must be positive"));
        }
        for (name, v) in [
            ("noise_sigma_voltage_mv", self.noise_sigma_voltage_mv),
            ("noise_sigma_current_mv", self.noise_sigma_current_mv),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn noise_sigma_voltage(&self) -> f64 {
        self.noise_sigma_voltage_mv * MILLIVOLT
    }

    pub fn noise_sigma_current(&self) -> f64 {
        self.noise_sigma_current_mv * MILLIVOLT
    }
}

/// Device voltage (volts, pre-gain) for a drive current in microamps.
///
/// The superconducting branch includes its boundary: `|i| == Ic` gives 0.
pub fn vi_characteristic(current_ua: f64, params: &DeviceParams) -> Result<f64> {
    ensure_finite(current_ua, "drive current")?;
    Ok(vi_volts(current_ua, params))
}

#[inline]
pub(crate) fn vi_volts(current_ua: f64, params: &DeviceParams) -> f64 {
    let ic = params.critical_current_ua;
    let mag = current_ua.abs();
    if mag <= ic {
        return 0.0;
    }
    let excess_ua = match params.vi_model {
        ViModel::Ohmic => mag - ic,
        ViModel::Rsj => (mag * mag - ic * ic).sqrt(),
    };
    current_ua.signum() * params.normal_resistance_ohm * excess_ua * MICROAMP
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DriveShape {
    #[default]
    Triangle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriveConfig {
    pub shape: DriveShape,
    pub frequency_khz: f64,
    /// Peak drive current, microamps.
    pub amplitude_ua: f64,
}

impl Default for DriveConfig {
    fn default() -> Self {
        Self {
            shape: DriveShape::Triangle,
            frequency_khz: 20.0,
            amplitude_ua: 50.0,
        }
    }
}

impl DriveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.frequency_khz > 0.0 && self.frequency_khz.is_finite()) {
            return Err(Error::invalid("frequency_khz", "must be positive"));
        }
        if !(self.amplitude_ua >= 0.0 && self.amplitude_ua.is_finite()) {
            return Err(Error::invalid("amplitude_ua", "must be non-negative"));
        }
        Ok(())
    }

    pub fn period_s(&self) -> f64 {
        1.0 / (self.frequency_khz * 1e3)
    }

    /// True when the drive never leaves the superconducting branch.
    pub fn is_unperturbed(&self, params: &DeviceParams) -> bool {
        self.amplitude_ua <= params.critical_current_ua
    }

    /// Drive current in microamps at `t` seconds after the phase origin.
    #[inline]
    pub fn value_ua(&self, t: f64) -> f64 {
        match self.shape {
            DriveShape::Triangle => {
                let y = t * self.frequency_khz * 1e3;
                let x = y - y.floor();
                let unit = if x < 0.25 {
                    4.0 * x
                } else if x < 0.75 {
                    2.0 - 4.0 * x
                } else {
                    4.0 * x - 4.0
                };
                self.amplitude_ua * unit
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleClock {
    /// Sampling interval, nanoseconds.
    pub dt_ns: f64,
    /// Absolute time of sample 0, seconds.
    pub t0_s: f64,
}

impl Default for SampleClock {
    fn default() -> Self {
        Self {
            dt_ns: 4.0,
            t0_s: 0.0,
        }
    }
}

impl SampleClock {
    pub fn new(dt_ns: f64, t0_s: f64) -> Result<Self> {
        let clock = Self { dt_ns, t0_s };
        clock.validate()?;
        Ok(clock)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_ns > 0.0 && self.dt_ns.is_finite()) {
            return Err(Error::invalid("dt_ns", "must be positive"));
        }
        ensure_finite(self.t0_s, "clock origin")?;
        Ok(())
    }

    #[inline]
    pub fn dt_s(&self) -> f64 {
        self.dt_ns * NANOSECOND
    }

    /// Absolute time of sample `index`.
    #[inline]
    pub fn time_of(&self, index: i64) -> f64 {
        self.t0_s + index as f64 * self.dt_s()
    }

    /// Number of whole samples spanning `duration` seconds.
    pub fn samples_in(&self, duration: f64) -> Result<usize> {
        ensure_finite(duration, "duration")?;
        let n = (duration / self.dt_s()).floor();
        if n < 0.0 || n > (isize::MAX as f64) / 8.0 {
            return Err(Error::SizeOverflow(format!(
                "{duration} s at {} ns per sample",
                self.dt_ns
            )));
        }
        Ok(n as usize)
    }

    /// Nearest whole number of samples in `duration` seconds.
    pub fn round_samples(&self, duration: f64) -> usize {
        (duration / self.dt_s()).round().max(0.0) as usize
    }
}

/// Paired current/voltage traces as read on the oscilloscope (post-gain volts).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPair {
    pub clock: SampleClock,
    pub current: Vec<f32>,
    pub voltage: Vec<f32>,
}

impl ChannelPair {
    pub fn new(clock: SampleClock, current: Vec<f32>, voltage: Vec<f32>) -> Result<Self> {
        clock.validate()?;
        if current.len() != voltage.len() {
            return Err(Error::invalid(
                "channels",
                format!("length mismatch {} vs {}", current.len(), voltage.len()),
            ));
        }
        if current.iter().chain(voltage.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("channel samples"));
        }
        Ok(Self {
            clock,
            current,
            voltage,
        })
    }

    pub fn len(&self) -> usize {
        self.voltage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voltage.is_empty()
    }
}

/// Samples one drive trace (pre-gain microamps) with phase zero at `clock.t0_s`.
pub fn synthesize_drive(drive: &DriveConfig, clock: &SampleClock, duration: f64) -> Result<Vec<f64>> {
    drive.validate()?;
    clock.validate()?;
    if !(duration > 0.0) {
        return Err(Error::invalid("duration", "must be positive"));
    }
    let n = clock.samples_in(duration)?;
    let dt = clock.dt_s();
    Ok((0..n).map(|i| drive.value_ua(i as f64 * dt)).collect())
}

/// Applies the readout chain and additive Gaussian noise to a drive trace.
///
/// Requires the unperturbed regime (drive below the critical current), in
/// which the voltage channel carries noise only.
pub fn render_channels(
    drive_ua: &[f64],
    params: &DeviceParams,
    clock: &SampleClock,
    seed: u64,
) -> Result<ChannelPair> {
    params.validate()?;
    clock.validate()?;
    let ic = params.critical_current_ua;
    if let Some(bad) = drive_ua.iter().find(|i| !i.is_finite()) {
        return Err(Error::invalid("drive", format!("non-finite sample {bad}")));
    }
    if drive_ua.iter().any(|i| i.abs() > ic) {
        return Err(Error::invalid(
            "drive",
            format!("amplitude exceeds critical current {ic} uA"),
        ));
    }
    let n = drive_ua.len();
    let gain = params.readout_gain;
    let v_noise = NoiseField::gaussian(seed, purpose::NOISE_VOLTAGE, params.noise_sigma_voltage());
    let i_noise = NoiseField::gaussian(seed, purpose::NOISE_CURRENT, params.noise_sigma_current());
    let mut nv = vec![0.0; n];
    let mut ni = vec![0.0; n];
    v_noise.fill(0, &mut nv);
    i_noise.fill(0, &mut ni);
    let current = drive_ua
        .iter()
        .zip(&ni)
        .map(|(&i, &e)| (gain * i * MICROAMP + e) as f32)
        .collect();
    let voltage = drive_ua
        .iter()
        .zip(&nv)
        .map(|(&i, &e)| (gain * vi_volts(i, params) + e) as f32)
        .collect();
    ChannelPair::new(*clock, current, voltage)
}

//! Per-sample signal source for whole campaigns.
//!
//! A [`SignalSource`] evaluates the two scope channels at any absolute sample
//! index without materializing the campaign. Each sample is a pure function
//! of its index: drive, readout, noise and the plan's perturbations in plan
//! order, then optional quantization. Any two renderings of the same index
//! therefore agree bit for bit, whatever ranges they were requested in.

use serde::{Deserialize, Serialize};

use crate::device::{vi_volts, ChannelPair, DeviceParams, DriveConfig, NoiseField, SampleClock, NOISE_BLOCK};
use crate::error::{Error, Result};
use crate::injection::{InjectionConfig, InjectionPlan, RenderedEvent};
use crate::rng::purpose;
use crate::units::MICROAMP;

/// Uniform mid-tread quantizer emulating the digitizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quantization {
    pub bits: u32,
    /// Full-scale range `[-fs, fs]` of the voltage channel, volts.
    pub voltage_full_scale_v: f64,
    pub current_full_scale_v: f64,
}

impl Default for Quantization {
    fn default() -> Self {
        Self {
            bits: 12,
            voltage_full_scale_v: 0.5,
            current_full_scale_v: 1.0,
        }
    }
}

impl Quantization {
    pub fn validate(&self) -> Result<()> {
        if !(1..=24).contains(&self.bits) {
            return Err(Error::invalid("bits", "must lie in 1..=24"));
        }
        if !(self.voltage_full_scale_v > 0.0 && self.current_full_scale_v > 0.0) {
            return Err(Error::invalid("full_scale", "must be positive"));
        }
        Ok(())
    }

    pub fn step(&self, full_scale: f64) -> f64 {
        2.0 * full_scale / (1u64 << self.bits) as f64
    }

    #[inline]
    fn apply(&self, x: f64, full_scale: f64) -> f64 {
        let step = self.step(full_scale);
        (x.clamp(-full_scale, full_scale) / step).round() * step
    }
}

#[derive(Debug, Clone)]
struct Placed {
    /// Position in the plan; perturbations are summed in this order.
    rank: usize,
    start: i64,
    end: i64,
    event: RenderedEvent,
}

#[derive(Debug, Clone)]
pub struct SignalSource {
    clock: SampleClock,
    span: i64,
    drive: DriveConfig,
    device: DeviceParams,
    v_noise: NoiseField,
    i_noise: NoiseField,
    seed: u64,
    /// Sorted by support start.
    events: Vec<Placed>,
    longest: i64,
    quantization: Option<Quantization>,
    trigger_cut: Option<f64>,
}

impl SignalSource {
    /// Unperturbed source over samples `[0, span)` of `clock`.
    pub fn new(device: &DeviceParams, drive: &DriveConfig, clock: SampleClock, span: i64, seed: u64) -> Result<Self> {
        device.validate()?;
        drive.validate()?;
        clock.validate()?;
        if span <= 0 {
            return Err(Error::invalid("span", "must be positive"));
        }
        Ok(Self {
            clock,
            span,
            drive: drive.clone(),
            device: device.clone(),
            v_noise: NoiseField::gaussian(seed, purpose::NOISE_VOLTAGE, device.noise_sigma_voltage()),
            i_noise: NoiseField::gaussian(seed, purpose::NOISE_CURRENT, device.noise_sigma_current()),
            seed,
            events: Vec::new(),
            longest: 0,
            quantization: None,
            trigger_cut: None,
        })
    }

    /// Adds every entry of `plan`. Entries must start inside the span.
    pub fn with_plan(mut self, plan: &InjectionPlan, config: &InjectionConfig) -> Result<Self> {
        let t_end = self.clock.time_of(self.span);
        let mut placed = Vec::with_capacity(plan.entries.len());
        let base = self.events.len();
        for entry in &plan.entries {
            if !(entry.time_s >= self.clock.t0_s && entry.time_s < t_end) {
                return Err(Error::invalid(
                    "plan",
                    format!("entry {} at {} s outside the campaign", entry.id, entry.time_s),
                ));
            }
            let event = RenderedEvent::prepare(entry, config, &self.clock)?;
            let (start, end) = event.support(&self.clock);
            placed.push(Placed {
                rank: base + placed.len(),
                start,
                end,
                event,
            });
        }
        self.events.extend(placed);
        self.events.sort_by_key(|p| (p.start, p.rank));
        self.longest = self.events.iter().map(|p| p.end - p.start).max().unwrap_or(0);
        Ok(self)
    }

    pub fn with_quantization(mut self, q: Quantization) -> Result<Self> {
        q.validate()?;
        self.quantization = Some(q);
        if let Some(cut) = self.trigger_cut {
            self = self.with_trigger_cut(cut)?;
        }
        Ok(self)
    }

    /// Cuts the voltage noise body just below `threshold_v` and enumerates
    /// the samples beyond it, so that [`Self::candidate_regions`] lists every
    /// place a trigger can occur. Requires the drive to stay on the
    /// superconducting branch.
    pub fn with_trigger_cut(mut self, threshold_v: f64) -> Result<Self> {
        if !self.drive.is_unperturbed(&self.device) {
            return Err(Error::invalid(
                "drive",
                "trigger enumeration needs the drive below the critical current",
            ));
        }
        if !(threshold_v > 0.0 && threshold_v.is_finite()) {
            return Err(Error::invalid("threshold", "must be positive"));
        }
        // margin for f32 storage and quantization rounding
        let mut cut = threshold_v * (1.0 - 1e-6);
        if let Some(q) = self.quantization {
            cut -= q.step(q.voltage_full_scale_v);
        }
        if cut <= 0.0 {
            return Err(Error::invalid("threshold", "below one quantization step"));
        }
        self.v_noise = NoiseField::with_cut(
            self.seed,
            purpose::NOISE_VOLTAGE,
            self.device.noise_sigma_voltage(),
            cut,
            0,
            self.span,
        )?;
        self.trigger_cut = Some(threshold_v);
        Ok(self)
    }

    pub fn clock(&self) -> SampleClock {
        self.clock
    }

    pub fn span(&self) -> i64 {
        self.span
    }

    pub fn drive(&self) -> &DriveConfig {
        &self.drive
    }

    pub fn device(&self) -> &DeviceParams {
        &self.device
    }

    pub fn event_count(&self) -> usize {
        self.events.len()
    }

    /// Writes both channels for samples `start .. start + voltage.len()`.
    /// Indices outside `[0, span)` are synthesized the same way.
    pub fn render_range(&self, start: i64, current: &mut [f32], voltage: &mut [f32]) {
        assert_eq!(current.len(), voltage.len(), "channel buffers differ in length");
        let end = start + voltage.len() as i64;
        let lo = self.events.partition_point(|p| p.start < start - self.longest);
        let hi = self.events.partition_point(|p| p.start < end);
        let mut hits: Vec<&Placed> = self.events[lo..hi].iter().filter(|p| p.end > start).collect();
        // summation follows plan order
        hits.sort_by_key(|p| p.rank);

        const CHUNK: usize = NOISE_BLOCK as usize;
        let mut v = [0.0f64; CHUNK];
        let mut c = [0.0f64; CHUNK];
        let gain = self.device.readout_gain;
        let dt = self.clock.dt_s();
        let mut s = start;
        while s < end {
            // chunks follow noise blocks so each block is generated once
            let m = ((CHUNK as i64 - s.rem_euclid(CHUNK as i64)).min(end - s)) as usize;
            let off = (s - start) as usize;
            let (cur, vol) = (&mut current[off..off + m], &mut voltage[off..off + m]);
            let (v, c) = (&mut v[..m], &mut c[..m]);
            self.v_noise.fill(s, v);
            self.i_noise.fill(s, c);
            for k in 0..m {
                let i_ua = self.drive.value_ua((s + k as i64) as f64 * dt);
                c[k] += gain * i_ua * MICROAMP;
                v[k] += gain * vi_volts(i_ua, &self.device);
            }
            for p in hits.iter().filter(|p| p.start < s + m as i64 && p.end > s) {
                p.event.add_into(&self.clock, s, v, c);
            }
            match self.quantization {
                Some(q) => {
                    for k in 0..m {
                        vol[k] = q.apply(v[k], q.voltage_full_scale_v) as f32;
                        cur[k] = q.apply(c[k], q.current_full_scale_v) as f32;
                    }
                }
                None => {
                    for k in 0..m {
                        vol[k] = v[k] as f32;
                        cur[k] = c[k] as f32;
                    }
                }
            }
            s += m as i64;
        }
    }

    /// Channels for samples `start .. start + len`, with the clock origin
    /// moved to sample `start`.
    pub fn channels(&self, start: i64, len: usize) -> Result<ChannelPair> {
        let mut current = vec![0.0f32; len];
        let mut voltage = vec![0.0f32; len];
        self.render_range(start, &mut current, &mut voltage);
        let clock = SampleClock::new(self.clock.dt_ns, self.clock.time_of(start))?;
        ChannelPair::new(clock, current, voltage)
    }

    /// Sorted, merged sample ranges outside which the voltage channel stays
    /// strictly below the trigger threshold. Adjacent ranges are merged too,
    /// so the sample before each range start is always quiet.
    pub fn candidate_regions(&self) -> Result<Vec<(i64, i64)>> {
        if self.trigger_cut.is_none() {
            return Err(Error::invalid("source", "candidate regions need a trigger cut"));
        }
        let mut ranges: Vec<(i64, i64)> = self
            .events
            .iter()
            .map(|p| (p.start.max(0), p.end.min(self.span)))
            .chain(self.v_noise.tails().iter().map(|&(i, _)| (i, i + 1)))
            .filter(|r| r.0 < r.1)
            .collect();
        ranges.sort_unstable();
        let mut merged: Vec<(i64, i64)> = Vec::with_capacity(ranges.len());
        for (s, e) in ranges {
            match merged.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => merged.push((s, e)),
            }
        }
        Ok(merged)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{render_channels, synthesize_drive};
    use crate::injection::{apply_plan, EventKind, PlanEntry};

    fn source(span: i64) -> SignalSource {
        SignalSource::new(&DeviceParams::default(), &DriveConfig::default(), SampleClock::default(), span, 7).unwrap()
    }

    fn plan() -> InjectionPlan {
        let e = |id, t, kind, d, a| PlanEntry {
            id,
            time_s: t,
            kind,
            duration_s: d,
            amplitude_mv: a,
            sign: 1.0,
            seed: 100 + id as u64,
        };
        InjectionPlan {
            entries: vec![
                e(0, 10e-6, EventKind::Burst, 60e-6, 80.0),
                e(1, 30e-6, EventKind::Peak, 1e-6, 120.0),
                e(2, 150e-6, EventKind::Sawtooth, 20e-6, 33.0),
                e(3, 300e-6, EventKind::Oscillating, 2.5e-6, 33.0),
            ],
        }
    }

    #[test]
    fn matches_device_and_injection_composition() {
        let n = 100_000;
        let src = source(n).with_plan(&plan(), &InjectionConfig::default()).unwrap();
        let clock = SampleClock::default();
        let drive = synthesize_drive(&DriveConfig::default(), &clock, n as f64 * clock.dt_s()).unwrap();
        let base = render_channels(&drive, &DeviceParams::default(), &clock, 7).unwrap();
        let (expected, _) = apply_plan(&base, &plan(), &InjectionConfig::default()).unwrap();
        let got = src.channels(0, n as usize).unwrap();
        let worst = got
            .voltage
            .iter()
            .zip(&expected.voltage)
            .chain(got.current.iter().zip(&expected.current))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        // the two routes round to f32 at different stages
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn rendering_is_independent_of_chunking() {
        let src = source(100_000).with_plan(&plan(), &InjectionConfig::default()).unwrap();
        let whole = src.channels(0, 100_000).unwrap();
        let mut v = Vec::new();
        let mut c = Vec::new();
        let mut start = 0i64;
        for len in [1usize, 4095, 4097, 333, 20_000, 71_474] {
            let mut cb = vec![0.0; len];
            let mut vb = vec![0.0; len];
            src.render_range(start, &mut cb, &mut vb);
            v.extend(vb);
            c.extend(cb);
            start += len as i64;
        }
        assert_eq!(v, whole.voltage);
        assert_eq!(c, whole.current);
    }

    #[test]
    fn candidate_regions_cover_every_crossing() {
        let threshold = 0.0035;
        let src = source(400_000)
            .with_plan(&plan(), &InjectionConfig::default())
            .unwrap()
            .with_trigger_cut(threshold)
            .unwrap();
        let regions = src.candidate_regions().unwrap();
        assert!(regions.windows(2).all(|w| w[0].1 < w[1].0));
        let ch = src.channels(0, 400_000).unwrap();
        for (i, v) in ch.voltage.iter().enumerate() {
            if (*v as f64).abs() >= threshold {
                let i = i as i64;
                assert!(regions.iter().any(|r| r.0 <= i && i < r.1), "uncovered crossing at {i}");
            }
        }
    }

    #[test]
    fn trigger_cut_rejects_overdriven_device() {
        let mut drive = DriveConfig::default();
        drive.amplitude_ua = 80.0;
        let src = SignalSource::new(&DeviceParams::default(), &drive, SampleClock::default(), 1000, 1).unwrap();
        assert!(src.with_trigger_cut(0.03).is_err());
    }

    #[test]
    fn quantization_lands_on_grid() {
        let q = Quantization::default();
        let src = source(10_000).with_quantization(q).unwrap();
        let ch = src.channels(0, 10_000).unwrap();
        let step = q.step(q.current_full_scale_v);
        for &c in &ch.current {
            let r = c as f64 / step;
            assert!((r - r.round()).abs() < 1e-3);
        }
    }
}

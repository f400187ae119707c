//! Oscilloscope emulation: voltage-channel trigger, 2 ms captures around
//! each trigger, and capture persistence.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::device::{read_trace, write_trace, ChannelPair, SampleClock};
use crate::error::{Error, Result};
use crate::signal::SignalSource;
use crate::units::{MILLISECOND, MILLIVOLT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// `|V| >= threshold`.
    #[default]
    Absolute,
    /// `V >= threshold`.
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriggerConfig {
    /// Post-gain voltage threshold.
    pub threshold_mv: f64,
    pub polarity: Polarity,
    /// Re-trigger suppression after each trigger, seconds.
    pub dead_time_s: f64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            threshold_mv: 30.0,
            polarity: Polarity::Absolute,
            dead_time_s: 1e-3,
        }
    }
}

impl TriggerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_mv > 0.0 && self.threshold_mv.is_finite()) {
            return Err(Error::invalid("threshold_mv", "must be positive"));
        }
        if !(self.dead_time_s >= 0.0 && self.dead_time_s.is_finite()) {
            return Err(Error::invalid("dead_time_s", "must be non-negative"));
        }
        Ok(())
    }

    pub fn threshold_v(&self) -> f64 {
        self.threshold_mv * MILLIVOLT
    }

    #[inline]
    pub fn fires(&self, v: f32) -> bool {
        let v = v as f64;
        let level = self.threshold_v();
        match self.polarity {
            Polarity::Absolute => v.abs() >= level,
            Polarity::Positive => v >= level,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaptureWindow {
    pub pre_s: f64,
    pub post_s: f64,
}

impl Default for CaptureWindow {
    fn default() -> Self {
        Self {
            pre_s: MILLISECOND,
            post_s: MILLISECOND,
        }
    }
}

impl CaptureWindow {
    pub fn validate(&self) -> Result<()> {
        if !(self.pre_s > 0.0 && self.post_s > 0.0 && self.pre_s.is_finite() && self.post_s.is_finite()) {
            return Err(Error::invalid("capture window", "pre and post must be positive"));
        }
        Ok(())
    }

    /// `(pre, post)` sample counts; the trigger sample is the first post sample.
    pub fn samples(&self, clock: &SampleClock) -> Result<(usize, usize)> {
        self.validate()?;
        let pre = clock.round_samples(self.pre_s);
        let post = clock.round_samples(self.post_s);
        if pre == 0 || post == 0 {
            return Err(Error::invalid("capture window", "shorter than one sample"));
        }
        clock.samples_in((pre + post) as f64 * clock.dt_s())?;
        Ok((pre, post))
    }
}

/// Where a capture came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaptureContext {
    pub facility: String,
    pub schedule_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureMeta {
    pub capture_id: usize,
    /// Absolute trigger time, seconds.
    pub trigger_time_s: f64,
    /// Absolute trigger sample index in the source trace.
    pub trigger_index: i64,
    pub threshold_mv: f64,
    pub polarity: Polarity,
    pub dead_time_s: f64,
    pub facility: String,
    pub schedule_id: String,
    /// Part of the window lay outside the recorded trace and was padded.
    pub truncated: bool,
    pub pre_samples: usize,
    pub post_samples: usize,
    /// Drive period, when known; lets the baseline fold the current channel.
    pub drive_period_s: Option<f64>,
    pub readout_gain: f64,
}

/// One oscilloscope capture. The local clock puts the trigger at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventCapture {
    pub meta: CaptureMeta,
    pub channels: ChannelPair,
}

impl EventCapture {
    pub fn trigger_sample(&self) -> usize {
        self.meta.pre_samples
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn dt_s(&self) -> f64 {
        self.channels.clock.dt_s()
    }

    /// Local time of sample `k`.
    pub fn time_of(&self, k: usize) -> f64 {
        (k as f64 - self.meta.pre_samples as f64) * self.dt_s()
    }
}

/// Stateful edge trigger with dead time, fed in increasing sample order.
#[derive(Debug, Clone)]
pub struct TriggerScanner {
    cfg: TriggerConfig,
    dead: i64,
    last: Option<i64>,
    prev_fired: bool,
    next: i64,
}

impl TriggerScanner {
    pub fn new(cfg: TriggerConfig, clock: &SampleClock) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            dead: clock.round_samples(cfg.dead_time_s) as i64,
            last: None,
            prev_fired: false,
            next: i64::MIN,
        })
    }

    /// Scans samples `start .. start + voltage.len()`. A gap since the last
    /// fed sample is taken to be below threshold.
    pub fn feed(&mut self, start: i64, voltage: &[f32], out: &mut Vec<i64>) {
        if start != self.next {
            self.prev_fired = false;
        }
        for (k, &v) in voltage.iter().enumerate() {
            let i = start + k as i64;
            let fired = self.cfg.fires(v);
            if fired && !self.prev_fired && self.last.is_none_or(|l| i - l >= self.dead) {
                self.last = Some(i);
                out.push(i);
            }
            self.prev_fired = fired;
        }
        self.next = start + voltage.len() as i64;
    }
}

/// Indices of all triggers in `channels`.
pub fn scan_trigger_indices(channels: &ChannelPair, cfg: &TriggerConfig) -> Result<Vec<i64>> {
    let mut scanner = TriggerScanner::new(*cfg, &channels.clock)?;
    let mut out = Vec::new();
    scanner.feed(0, &channels.voltage, &mut out);
    Ok(out)
}

/// Absolute times of all triggers in `channels`.
pub fn scan_trigger(channels: &ChannelPair, cfg: &TriggerConfig) -> Result<Vec<f64>> {
    Ok(scan_trigger_indices(channels, cfg)?
        .into_iter()
        .map(|i| channels.clock.time_of(i))
        .collect())
}

fn reflect(i: i64, n: i64) -> i64 {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i.rem_euclid(period);
    if r < n {
        r
    } else {
        period - r
    }
}

/// Copies the window around `t_trigger` out of a recorded trace. Samples
/// outside the trace are filled by mirroring it at its edge, which keeps the
/// baseline statistics of both channels, and the capture is flagged truncated.
pub fn capture(
    channels: &ChannelPair,
    t_trigger: f64,
    window: &CaptureWindow,
    cfg: &TriggerConfig,
) -> Result<EventCapture> {
    cfg.validate()?;
    if channels.is_empty() {
        return Err(Error::invalid("channels", "empty trace"));
    }
    let clock = channels.clock;
    let (pre, post) = window.samples(&clock)?;
    let idx = ((t_trigger - clock.t0_s) / clock.dt_s()).round() as i64;
    let n = channels.len() as i64;
    if !(0..n).contains(&idx) {
        return Err(Error::invalid("t_trigger", "outside the trace"));
    }
    let first = idx - pre as i64;
    let last = idx + post as i64;
    let truncated = first < 0 || last > n;
    let mut current = Vec::with_capacity(pre + post);
    let mut voltage = Vec::with_capacity(pre + post);
    for i in first..last {
        let j = reflect(i, n) as usize;
        current.push(channels.current[j]);
        voltage.push(channels.voltage[j]);
    }
    let local = SampleClock::new(clock.dt_ns, -(pre as f64) * clock.dt_s())?;
    Ok(EventCapture {
        meta: CaptureMeta {
            capture_id: 0,
            trigger_time_s: clock.time_of(idx),
            trigger_index: idx,
            threshold_mv: cfg.threshold_mv,
            polarity: cfg.polarity,
            dead_time_s: cfg.dead_time_s,
            facility: String::new(),
            schedule_id: String::new(),
            truncated,
            pre_samples: pre,
            post_samples: post,
            drive_period_s: None,
            readout_gain: 1.0,
        },
        channels: ChannelPair::new(local, current, voltage)?,
    })
}

/// How a campaign is searched for triggers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    /// Only planned-event supports and enumerated noise tails are rendered.
    #[default]
    Sparse,
    /// Every sample of the campaign is rendered and scanned.
    Dense,
}

const DENSE_CHUNK: usize = 1 << 20;

/// Trigger indices over the source span `[0, span)`.
pub fn campaign_triggers(source: &SignalSource, cfg: &TriggerConfig, mode: ScanMode) -> Result<Vec<i64>> {
    let clock = source.clock();
    let mut scanner = TriggerScanner::new(*cfg, &clock)?;
    let mut out = Vec::new();
    let regions = match mode {
        ScanMode::Sparse => source.candidate_regions()?,
        ScanMode::Dense => vec![(0, source.span())],
    };
    let mut current = vec![0.0f32; DENSE_CHUNK];
    let mut voltage = vec![0.0f32; DENSE_CHUNK];
    for (start, end) in regions {
        let mut s = start;
        while s < end {
            let len = ((end - s) as usize).min(DENSE_CHUNK);
            source.render_range(s, &mut current[..len], &mut voltage[..len]);
            scanner.feed(s, &voltage[..len], &mut out);
            s += len as i64;
        }
    }
    Ok(out)
}

/// Renders the capture around absolute trigger sample `index`.
pub fn capture_from_source(
    source: &SignalSource,
    index: i64,
    window: &CaptureWindow,
    cfg: &TriggerConfig,
    ctx: &CaptureContext,
    capture_id: usize,
) -> Result<EventCapture> {
    let clock = source.clock();
    let (pre, post) = window.samples(&clock)?;
    let first = index - pre as i64;
    let mut current = vec![0.0f32; pre + post];
    let mut voltage = vec![0.0f32; pre + post];
    source.render_range(first, &mut current, &mut voltage);
    let local = SampleClock::new(clock.dt_ns, -(pre as f64) * clock.dt_s())?;
    Ok(EventCapture {
        meta: CaptureMeta {
            capture_id,
            trigger_time_s: clock.time_of(index),
            trigger_index: index,
            threshold_mv: cfg.threshold_mv,
            polarity: cfg.polarity,
            dead_time_s: cfg.dead_time_s,
            facility: ctx.facility.clone(),
            schedule_id: ctx.schedule_id.clone(),
            truncated: first < 0 || index + post as i64 > source.span(),
            pre_samples: pre,
            post_samples: post,
            drive_period_s: Some(source.drive().period_s()),
            readout_gain: source.device().readout_gain,
        },
        channels: ChannelPair::new(local, current, voltage)?,
    })
}

/// Lazily rendered captures of a campaign, in trigger order.
pub struct CaptureStream<'a> {
    source: &'a SignalSource,
    triggers: Vec<i64>,
    next: usize,
    window: CaptureWindow,
    cfg: TriggerConfig,
    ctx: CaptureContext,
}

impl CaptureStream<'_> {
    pub fn triggers(&self) -> &[i64] {
        &self.triggers
    }
}

impl Iterator for CaptureStream<'_> {
    type Item = Result<EventCapture>;

    fn next(&mut self) -> Option<Self::Item> {
        let &index = self.triggers.get(self.next)?;
        let id = self.next;
        self.next += 1;
        Some(capture_from_source(self.source, index, &self.window, &self.cfg, &self.ctx, id))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.triggers.len() - self.next;
        (left, Some(left))
    }
}

/// Captures of a campaign found by rendering only candidate regions. Needs a
/// source with a trigger cut at `cfg`'s threshold.
pub fn sparse_campaign<'a>(
    source: &'a SignalSource,
    cfg: &TriggerConfig,
    window: &CaptureWindow,
    ctx: &CaptureContext,
) -> Result<CaptureStream<'a>> {
    run_campaign_scan(source, cfg, window, ctx, ScanMode::Sparse)
}

/// Captures of a campaign found by scanning every sample.
pub fn dense_campaign<'a>(
    source: &'a SignalSource,
    cfg: &TriggerConfig,
    window: &CaptureWindow,
    ctx: &CaptureContext,
) -> Result<CaptureStream<'a>> {
    run_campaign_scan(source, cfg, window, ctx, ScanMode::Dense)
}

pub fn run_campaign_scan<'a>(
    source: &'a SignalSource,
    cfg: &TriggerConfig,
    window: &CaptureWindow,
    ctx: &CaptureContext,
    mode: ScanMode,
) -> Result<CaptureStream<'a>> {
    window.validate()?;
    let triggers = campaign_triggers(source, cfg, mode)?;
    Ok(CaptureStream {
        source,
        triggers,
        next: 0,
        window: *window,
        cfg: *cfg,
        ctx: ctx.clone(),
    })
}

fn sidecar_path(trace: &Path) -> PathBuf {
    trace.with_extension("json")
}

/// Writes `<dir>/<stem>.sqtr` and its JSON metadata sidecar; returns the
/// trace path.
pub fn write_capture(dir: &Path, stem: &str, capture: &EventCapture) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let trace = dir.join(format!("{stem}.sqtr"));
    write_trace(BufWriter::new(File::create(&trace)?), &capture.channels, capture.meta.readout_gain)?;
    let meta = serde_json::to_string_pretty(&capture.meta)?;
    std::fs::write(sidecar_path(&trace), meta + "\n")?;
    Ok(trace)
}

pub fn read_capture(trace: &Path) -> Result<EventCapture> {
    let (channels, _gain) = read_trace(BufReader::new(File::open(trace)?))?;
    let meta: CaptureMeta = serde_json::from_reader(BufReader::new(File::open(sidecar_path(trace))?))?;
    if meta.pre_samples + meta.post_samples != channels.len() {
        return Err(Error::Format(format!(
            "sidecar expects {} samples, trace has {}",
            meta.pre_samples + meta.post_samples,
            channels.len()
        )));
    }
    Ok(EventCapture { meta, channels })
}

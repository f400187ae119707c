//! Feature extraction on a capture: reference-window baseline, fault onset,
//! fault end by the 80 µs compatibility search, and rolling peak-to-peak
//! amplitude.

use std::collections::VecDeque;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::EventCapture;
use crate::error::{Error, Result};
use crate::units::MILLIVOLT;

/// Version tag of the compatibility test and amplitude statistic, written
/// into every feature export.
pub const ANALYSIS_CONVENTION: &str = "meanstd-compat/p2p-rolling/v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Departure from baseline, in baseline sigmas, that counts as activity.
    pub k_sigma: f64,
    /// Quiet run that must precede the onset, seconds.
    pub quiet_run_s: f64,
    pub end_window_s: f64,
    /// Mean tolerance of the end test, in standard errors.
    pub k_mean: f64,
    /// Allowed ratio of window sigma to baseline sigma.
    pub k_std: f64,
    pub rolling_width_s: f64,
    /// Lower bound on any baseline sigma, volts.
    pub sigma_floor_v: f64,
    /// Reference-window sigma above which the baseline is considered dirty.
    pub dirty_sigma_mv: f64,
    /// Current-channel samples beyond `k_sigma` needed to call both channels affected.
    pub min_current_samples: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            k_sigma: 5.0,
            quiet_run_s: 1e-6,
            end_window_s: 80e-6,
            k_mean: 4.0,
            k_std: 2.0,
            rolling_width_s: 100e-9,
            sigma_floor_v: 1e-6,
            dirty_sigma_mv: 2.5,
            min_current_samples: 3,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("k_sigma", self.k_sigma),
            ("quiet_run_s", self.quiet_run_s),
            ("end_window_s", self.end_window_s),
            ("k_mean", self.k_mean),
            ("k_std", self.k_std),
            ("rolling_width_s", self.rolling_width_s),
            ("sigma_floor_v", self.sigma_floor_v),
            ("dirty_sigma_mv", self.dirty_sigma_mv),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats {
    pub voltage: ChannelStats,
    /// Mean of the raw current channel; sigma is that of the residual after
    /// removing the drive template when one was fitted.
    pub current: ChannelStats,
    pub reference_samples: usize,
    pub dirty: bool,
    /// Per-phase current template over one drive period, when folded.
    #[serde(skip)]
    pub current_template: Option<Vec<f64>>,
}

impl BaselineStats {
    fn floor(&self, floor: f64) -> (f64, f64) {
        (self.voltage.sigma.max(floor), self.current.sigma.max(floor))
    }
}

/// Baseline over the first quarter of the capture.
///
/// The voltage channel is summarized by a constant mean. The current channel
/// carries the drive; when the drive period is known and at least two periods
/// fit in the reference window, a per-phase template is folded out of it
/// first, so the sigma describes noise rather than the triangle.
pub fn baseline(capture: &EventCapture, cfg: &AnalysisConfig) -> Result<BaselineStats> {
    cfg.validate()?;
    let n = capture.len();
    let m = n / 4;
    if m < 2 {
        return Err(Error::invalid("capture", "too short for a reference window"));
    }
    let ch = &capture.channels;
    let (vm, vs) = mean_sd(ch.voltage[..m].iter().map(|&x| x as f64));
    let (cm, mut cs) = mean_sd(ch.current[..m].iter().map(|&x| x as f64));
    let period = capture
        .meta
        .drive_period_s
        .map(|p| (p / capture.dt_s()).round() as usize)
        .filter(|&p| p >= 1 && 2 * p <= m);
    let template = period.map(|p| {
        let mut sum = vec![0.0; p];
        let mut count = vec![0usize; p];
        for period in ch.current[..m].chunks(p) {
            for (k, &x) in period.iter().enumerate() {
                sum[k] += x as f64;
                count[k] += 1;
            }
        }
        sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect::<Vec<f64>>()
    });
    if let Some(t) = &template {
        let p = t.len();
        let ss: f64 = ch.current[..m]
            .chunks(p)
            .flat_map(|period| period.iter().zip(t))
            .map(|(&x, &mu)| (x as f64 - mu).powi(2))
            .sum();
        cs = (ss / (m - p) as f64).sqrt();
    }
    let bound = cfg.dirty_sigma_mv * MILLIVOLT;
    Ok(BaselineStats {
        voltage: ChannelStats { mean: vm, sigma: vs },
        current: ChannelStats { mean: cm, sigma: cs },
        reference_samples: m,
        dirty: vs > bound || cs > bound,
        current_template: template,
    })
}

fn mean_sd(x: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let mut n = 0usize;
    let mut sum = 0.0;
    for v in x.clone() {
        n += 1;
        sum += v;
    }
    let mean = sum / n as f64;
    let ss: f64 = x.map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n.max(2) - 1) as f64).sqrt())
}

/// Channel residuals against the baseline.
#[derive(Debug, Clone)]
pub struct Residuals {
    pub voltage: Vec<f64>,
    pub current: Vec<f64>,
}

pub fn residuals(capture: &EventCapture, base: &BaselineStats) -> Residuals {
    let mut res = Residuals {
        voltage: Vec::new(),
        current: Vec::new(),
    };
    fill_residuals(capture, base, &mut res);
    res
}

fn fill_residuals(capture: &EventCapture, base: &BaselineStats, res: &mut Residuals) {
    let ch = &capture.channels;
    res.voltage.clear();
    res.voltage.extend(ch.voltage.iter().map(|&x| x as f64 - base.voltage.mean));
    res.current.clear();
    match &base.current_template {
        Some(t) => {
            let mut phase = 0;
            res.current.extend(ch.current.iter().map(|&x| {
                let r = x as f64 - t[phase];
                phase += 1;
                if phase == t.len() {
                    phase = 0;
                }
                r
            }));
        }
        None => res.current.extend(ch.current.iter().map(|&x| x as f64 - base.current.mean)),
    }
}

/// Working buffers reused across captures on one thread.
struct Scratch {
    res: Residuals,
    loud: Vec<u32>,
    v: Moments,
    c: Moments,
}

thread_local! {
    static SCRATCH: std::cell::RefCell<Scratch> = std::cell::RefCell::new(Scratch {
        res: Residuals { voltage: Vec::new(), current: Vec::new() },
        loud: Vec::new(),
        v: Moments { s1: Vec::new(), s2: Vec::new() },
        c: Moments { s1: Vec::new(), s2: Vec::new() },
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Onset {
    pub index: usize,
    pub time_s: f64,
    /// No quiet run was found in the second quarter.
    pub undetermined: bool,
}

fn loud_prefix(res: &Residuals, base: &BaselineStats, cfg: &AnalysisConfig, prefix: &mut Vec<u32>) {
    let (sv, sc) = base.floor(cfg.sigma_floor_v);
    let (lv, lc) = (cfg.k_sigma * sv, cfg.k_sigma * sc);
    prefix.clear();
    let mut acc = 0u32;
    prefix.push(0);
    for (v, c) in res.voltage.iter().zip(&res.current) {
        acc += (v.abs() > lv || c.abs() > lc) as u32;
        prefix.push(acc);
    }
}

fn onset_from(capture: &EventCapture, prefix: &[u32], cfg: &AnalysisConfig) -> Onset {
    let n = capture.len();
    let trig = capture.trigger_sample().min(n - 1);
    let lo = n / 4;
    let run = ((cfg.quiet_run_s / capture.dt_s()).round() as usize).max(1);
    let mut j = trig;
    loop {
        if j >= run && prefix[j] == prefix[j - run] {
            return Onset {
                index: j,
                time_s: capture.time_of(j),
                undetermined: false,
            };
        }
        if j <= lo {
            break;
        }
        j -= 1;
    }
    Onset {
        index: lo,
        time_s: capture.time_of(lo),
        undetermined: true,
    }
}

/// Latest sample at or before the trigger that follows a quiet run of
/// `quiet_run_s` on both channels, searched over the second quarter.
pub fn find_onset(capture: &EventCapture, base: &BaselineStats, cfg: &AnalysisConfig) -> Result<Onset> {
    cfg.validate()?;
    let res = residuals(capture, base);
    let mut prefix = Vec::new();
    loud_prefix(&res, base, cfg, &mut prefix);
    Ok(onset_from(capture, &prefix, cfg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct End {
    /// Start sample of the first compatible window.
    pub index: Option<usize>,
    pub time_s: Option<f64>,
}

impl End {
    pub fn is_determined(&self) -> bool {
        self.index.is_some()
    }
}

/// Windowed sums of `x` and `x^2` via prefix sums.
#[derive(Default)]
struct Moments {
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl Moments {
    fn fill(&mut self, x: &[f64]) {
        let (s1, s2) = (&mut self.s1, &mut self.s2);
        s1.clear();
        s2.clear();
        let (mut a, mut b) = (0.0, 0.0);
        s1.push(0.0);
        s2.push(0.0);
        for &v in x {
            a += v;
            b += v * v;
            s1.push(a);
            s2.push(b);
        }
    }

    /// `(mean, sd)` of `x[s .. s + w]`.
    #[inline]
    fn window(&self, s: usize, w: usize) -> (f64, f64) {
        let sum = self.s1[s + w] - self.s1[s];
        let sq = self.s2[s + w] - self.s2[s];
        let mean = sum / w as f64;
        let var = ((sq - sum * mean) / (w - 1) as f64).max(0.0);
        (mean, var.sqrt())
    }
}

struct EndSearch<'a> {
    v: &'a Moments,
    c: &'a Moments,
    w: usize,
    sv: f64,
    sc: f64,
    k_mean: f64,
    k_std: f64,
}

impl<'a> EndSearch<'a> {
    fn new(v: &'a Moments, c: &'a Moments, base: &BaselineStats, cfg: &AnalysisConfig, dt: f64) -> Self {
        let (sv, sc) = base.floor(cfg.sigma_floor_v);
        Self {
            v,
            c,
            w: ((cfg.end_window_s / dt).round() as usize).max(2),
            sv,
            sc,
            k_mean: cfg.k_mean,
            k_std: cfg.k_std,
        }
    }

    fn compatible(&self, s: usize) -> bool {
        let root = (self.w as f64).sqrt();
        let (mv, dv) = self.v.window(s, self.w);
        let (mc, dc) = self.c.window(s, self.w);
        mv.abs() <= self.k_mean * self.sv / root
            && mc.abs() <= self.k_mean * self.sc / root
            && dv <= self.k_std * self.sv
            && dc <= self.k_std * self.sc
    }

    fn first_from(&self, start: usize, n: usize) -> Option<usize> {
        if n < self.w {
            return None;
        }
        (start..=n - self.w).find(|&s| self.compatible(s))
    }
}

/// Start of the first window after the trigger whose residual mean and sigma
/// are both compatible with the reference window on both channels.
pub fn find_end(capture: &EventCapture, base: &BaselineStats, cfg: &AnalysisConfig) -> Result<End> {
    cfg.validate()?;
    let res = residuals(capture, base);
    let (mut v, mut c) = (Moments::default(), Moments::default());
    v.fill(&res.voltage);
    c.fill(&res.current);
    Ok(end_from(capture, &v, &c, base, cfg))
}

fn end_from(capture: &EventCapture, v: &Moments, c: &Moments, base: &BaselineStats, cfg: &AnalysisConfig) -> End {
    let search = EndSearch::new(v, c, base, cfg, capture.dt_s());
    let index = search.first_from(capture.trigger_sample(), capture.len());
    End {
        index,
        time_s: index.map(|k| capture.time_of(k)),
    }
}

/// Whether the window starting at `s` passes the end test; exposed for
/// checking the first-window property.
pub fn window_compatible(capture: &EventCapture, base: &BaselineStats, cfg: &AnalysisConfig, s: usize) -> bool {
    let res = residuals(capture, base);
    let (mut v, mut c) = (Moments::default(), Moments::default());
    v.fill(&res.voltage);
    c.fill(&res.current);
    let search = EndSearch::new(&v, &c, base, cfg, capture.dt_s());
    s + search.w <= capture.len() && search.compatible(s)
}

/// Peak-to-peak variation of every `width`-sample window, in window order.
pub fn rolling_amplitude(x: &[f32], width: usize) -> Result<Vec<f64>> {
    if width == 0 {
        return Err(Error::invalid("width", "must be at least one sample"));
    }
    if x.len() < width {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(x.len() - width + 1);
    let mut maxq: VecDeque<usize> = VecDeque::with_capacity(width);
    let mut minq: VecDeque<usize> = VecDeque::with_capacity(width);
    for i in 0..x.len() {
        while maxq.back().is_some_and(|&j| x[j] <= x[i]) {
            maxq.pop_back();
        }
        maxq.push_back(i);
        while minq.back().is_some_and(|&j| x[j] >= x[i]) {
            minq.pop_back();
        }
        minq.push_back(i);
        if i + 1 >= width {
            let s = i + 1 - width;
            while maxq.front().is_some_and(|&j| j < s) {
                maxq.pop_front();
            }
            while minq.front().is_some_and(|&j| j < s) {
                minq.pop_front();
            }
            out.push(x[maxq[0]] as f64 - x[minq[0]] as f64);
        }
    }
    Ok(out)
}

/// Largest rolling variation over the `width`-sample windows of `x` that
/// intersect samples `[lo, hi]`.
pub fn max_amplitude_between(x: &[f32], width: usize, lo: usize, hi: usize) -> Result<f64> {
    if width == 0 {
        return Err(Error::invalid("width", "must be at least one sample"));
    }
    if x.len() < width || lo > hi {
        return Ok(0.0);
    }
    let first = lo.saturating_sub(width - 1).min(x.len() - width);
    let last = hi.min(x.len() - width).max(first);
    let series = rolling_amplitude(&x[first..last + width], width)?;
    Ok(series.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelsAffected {
    VoltageOnly,
    Both,
}

impl ChannelsAffected {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelsAffected::VoltageOnly => "voltage_only",
            ChannelsAffected::Both => "both",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeTag {
    Ramp,
    Oscillation,
    Pulse,
    Telegraph,
    Other,
}

impl ShapeTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ShapeTag::Ramp => "ramp",
            ShapeTag::Oscillation => "oscillation",
            ShapeTag::Pulse => "pulse",
            ShapeTag::Telegraph => "telegraph",
            ShapeTag::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureFlags {
    pub dirty_baseline: bool,
    pub onset_undetermined: bool,
    pub end_undetermined: bool,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventFeatures {
    pub capture_id: usize,
    /// Absolute trigger time, seconds.
    pub trigger_time_s: f64,
    /// Local times; the trigger is at zero.
    pub onset_s: f64,
    pub end_s: Option<f64>,
    /// `end - onset`, or a lower bound reaching the window edge when the end
    /// is undetermined.
    pub duration_s: f64,
    pub max_amplitude_mv: f64,
    pub channels: ChannelsAffected,
    pub shape: ShapeTag,
    pub threshold_mv: f64,
    pub flags: FeatureFlags,
}

impl EventFeatures {
    pub fn end_determined(&self) -> bool {
        self.end_s.is_some()
    }
}

/// Shape of the voltage residual over `[lo, hi)`.
pub fn shape_tag(v: &[f64], dt: f64) -> ShapeTag {
    let Some((argmax, peak)) = v
        .iter()
        .enumerate()
        .map(|(k, x)| (k, x.abs()))
        .max_by(|a, b| a.1.total_cmp(&b.1))
    else {
        return ShapeTag::Other;
    };
    if peak == 0.0 {
        return ShapeTag::Other;
    }
    let (hi, lo) = (0.5 * peak, 0.25 * peak);

    let mut flips = 0;
    let mut last_sign = 0.0;
    for &x in v.iter().filter(|x| x.abs() >= hi) {
        let s = x.signum();
        if last_sign != 0.0 && s != last_sign {
            flips += 1;
        }
        last_sign = s;
    }
    if flips >= 2 {
        return ShapeTag::Oscillation;
    }

    let polarity = v[argmax].signum();
    let mut on = false;
    let mut rises = 0;
    for &x in v {
        let y = x * polarity;
        if !on && y >= hi {
            on = true;
            rises += 1;
        } else if on && y < lo {
            on = false;
        }
    }
    if rises >= 4 {
        return ShapeTag::Telegraph;
    }

    let tenth = 0.1 * peak;
    let before = v[..argmax].iter().rposition(|&x| x * polarity < tenth).map_or(0, |k| k + 1);
    let after = v[argmax..]
        .iter()
        .position(|&x| x * polarity < tenth)
        .map_or(v.len() - argmax, |k| k);
    let rise = (argmax - before) as f64 * dt;
    let fall = after as f64 * dt;
    if rise >= 4.0 * fall {
        ShapeTag::Ramp
    } else if fall >= rise {
        ShapeTag::Pulse
    } else {
        ShapeTag::Other
    }
}

/// Composes baseline, onset, end, amplitude, channel and shape features.
pub fn extract_features(capture: &EventCapture, cfg: &AnalysisConfig) -> Result<EventFeatures> {
    SCRATCH.with(|cell| extract_with(capture, cfg, &mut cell.borrow_mut()))
}

fn extract_with(capture: &EventCapture, cfg: &AnalysisConfig, scratch: &mut Scratch) -> Result<EventFeatures> {
    let base = baseline(capture, cfg)?;
    let Scratch { res, loud, v, c } = scratch;
    fill_residuals(capture, &base, res);
    loud_prefix(res, &base, cfg, loud);
    let onset = onset_from(capture, loud, cfg);
    v.fill(&res.voltage);
    c.fill(&res.current);
    let end = end_from(capture, v, c, &base, cfg);
    let n = capture.len();
    let dt = capture.dt_s();

    let width = ((cfg.rolling_width_s / dt).round() as usize).max(1);
    let last = end.index.unwrap_or(n - 1);
    let max_amplitude = max_amplitude_between(&capture.channels.voltage, width, onset.index, last)?;

    let (_, sc) = base.floor(cfg.sigma_floor_v);
    let loud_current = res.current[onset.index..=last.min(n - 1)]
        .iter()
        .filter(|c| c.abs() > cfg.k_sigma * sc)
        .count();
    let channels = if loud_current >= cfg.min_current_samples {
        ChannelsAffected::Both
    } else {
        ChannelsAffected::VoltageOnly
    };
    // the first compatible window may still hold a decaying remnant
    let end_window = ((cfg.end_window_s / dt).round() as usize).max(2);
    let shape_end = end.index.map_or(n, |e| (e + end_window).min(n));
    let shape = shape_tag(&res.voltage[onset.index..shape_end], dt);

    let end_bound = end.time_s.unwrap_or(capture.time_of(n));
    Ok(EventFeatures {
        capture_id: capture.meta.capture_id,
        trigger_time_s: capture.meta.trigger_time_s,
        onset_s: onset.time_s,
        end_s: end.time_s,
        duration_s: end_bound - onset.time_s,
        max_amplitude_mv: max_amplitude / MILLIVOLT,
        channels,
        shape,
        threshold_mv: capture.meta.threshold_mv,
        flags: FeatureFlags {
            dirty_baseline: base.dirty,
            onset_undetermined: onset.undetermined,
            end_undetermined: !end.is_determined(),
            truncated: capture.meta.truncated,
        },
    })
}

/// Features of many captures, in input order.
pub fn extract_all(captures: &[EventCapture], cfg: &AnalysisConfig) -> Result<Vec<EventFeatures>> {
    captures.par_iter().map(|c| extract_features(c, cfg)).collect()
}

/// One row per capture.
pub fn write_features_csv<W: Write>(features: &[EventFeatures], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "capture_id",
        "onset_s",
        "end_s",
        "end_determined",
        "duration_s",
        "max_amp_mV",
        "channels",
        "shape_tag",
        "dirty_baseline",
        "convention",
    ])?;
    for f in features {
        out.write_record([
            f.capture_id.to_string(),
            format!("{:.9e}", f.onset_s),
            f.end_s.map_or("NaN".to_string(), |e| format!("{e:.9e}")),
            f.end_determined().to_string(),
            format!("{:.9e}", f.duration_s),
            format!("{:.4}", f.max_amplitude_mv),
            f.channels.as_str().to_string(),
            f.shape.as_str().to_string(),
            f.flags.dirty_baseline.to_string(),
            ANALYSIS_CONVENTION.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

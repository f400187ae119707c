//! Radiation/spurious separation, burst/peak classification and separation
//! diagnostics.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::analysis::{ChannelsAffected, EventFeatures, ShapeTag};
use crate::error::{Error, Result};
use crate::injection::BeamSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    /// Durations below this are peaks.
    pub duration_boundary_s: f64,
    /// Multiple of the trigger threshold below which an event "barely crosses".
    pub amplitude_margin_factor: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            duration_boundary_s: 10e-6,
            amplitude_margin_factor: 1.5,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_boundary_s > 0.0 && self.duration_boundary_s.is_finite()) {
            return Err(Error::invalid("duration_boundary_s", "must be positive"));
        }
        if !(self.amplitude_margin_factor > 0.0 && self.amplitude_margin_factor.is_finite()) {
            return Err(Error::invalid("amplitude_margin_factor", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Separation {
    Radiation,
    Spurious,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultClass {
    Burst,
    Peak,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventClass {
    RadiationBurst,
    RadiationPeak,
    SpuriousSawtooth,
    SpuriousOscillating,
    Unknown,
}

impl EventClass {
    pub const ALL: [EventClass; 5] = [
        EventClass::RadiationBurst,
        EventClass::RadiationPeak,
        EventClass::SpuriousSawtooth,
        EventClass::SpuriousOscillating,
        EventClass::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventClass::RadiationBurst => "radiation_burst",
            EventClass::RadiationPeak => "radiation_peak",
            EventClass::SpuriousSawtooth => "spurious_sawtooth",
            EventClass::SpuriousOscillating => "spurious_oscillating",
            EventClass::Unknown => "unknown",
        }
    }

    pub fn is_radiation(self) -> bool {
        matches!(self, EventClass::RadiationBurst | EventClass::RadiationPeak)
    }

    pub fn separation(self) -> Separation {
        match self {
            EventClass::RadiationBurst | EventClass::RadiationPeak => Separation::Radiation,
            EventClass::SpuriousSawtooth | EventClass::SpuriousOscillating => Separation::Spurious,
            EventClass::Unknown => Separation::Unknown,
        }
    }
}

/// The four separation criteria as seen on one event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriteriaScores {
    /// Clears the trigger by at least the margin factor.
    pub amplitude_margin: bool,
    pub both_channels: bool,
    pub shape_incompatible_with_spurious: bool,
    /// Triggered while the beam was on. Diagnostic only.
    pub beam_correlated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedEvent {
    pub features: EventFeatures,
    pub class: EventClass,
    pub criteria: CriteriaScores,
}

pub fn separate_radiation(f: &EventFeatures, cfg: &ClassifierConfig) -> Separation {
    if f.flags.dirty_baseline {
        return Separation::Unknown;
    }
    let margin = f.max_amplitude_mv >= cfg.amplitude_margin_factor * f.threshold_mv;
    let both = f.channels == ChannelsAffected::Both;
    let spurious_shape = matches!(f.shape, ShapeTag::Ramp | ShapeTag::Oscillation);
    if !both && spurious_shape && !margin {
        Separation::Spurious
    } else if both && margin {
        Separation::Radiation
    } else {
        Separation::Unknown
    }
}

/// Peak below the duration boundary; an undetermined end always means burst.
pub fn classify_fault(f: &EventFeatures, cfg: &ClassifierConfig) -> FaultClass {
    if f.end_determined() && f.duration_s < cfg.duration_boundary_s {
        FaultClass::Peak
    } else {
        FaultClass::Burst
    }
}

pub fn classify(f: &EventFeatures, cfg: &ClassifierConfig, schedule: Option<&BeamSchedule>) -> ClassifiedEvent {
    let class = match separate_radiation(f, cfg) {
        Separation::Radiation => match classify_fault(f, cfg) {
            FaultClass::Burst => EventClass::RadiationBurst,
            FaultClass::Peak => EventClass::RadiationPeak,
        },
        Separation::Spurious => match f.shape {
            ShapeTag::Oscillation => EventClass::SpuriousOscillating,
            _ => EventClass::SpuriousSawtooth,
        },
        Separation::Unknown => EventClass::Unknown,
    };
    ClassifiedEvent {
        features: f.clone(),
        class,
        criteria: CriteriaScores {
            amplitude_margin: f.max_amplitude_mv >= cfg.amplitude_margin_factor * f.threshold_mv,
            both_channels: f.channels == ChannelsAffected::Both,
            shape_incompatible_with_spurious: !matches!(f.shape, ShapeTag::Ramp | ShapeTag::Oscillation),
            beam_correlated: schedule.is_some_and(|s| s.beam_on(f.trigger_time_s)),
        },
    }
}

/// `(mean_a - mean_b)^2 / (var_a + var_b)` with sample variances. Zero
/// combined variance gives 0 for equal means and infinity otherwise.
pub fn fisher_discriminant_ratio(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("fdr", "each class needs at least two samples"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fdr samples"));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let num = (ma - mb).powi(2);
    let den = va + vb;
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(num / den)
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// FDR of log10 durations, bursts against peaks.
pub fn duration_fdr(events: &[ClassifiedEvent]) -> Result<f64> {
    let logs = |class| -> Vec<f64> {
        events
            .iter()
            .filter(|e| e.class == class)
            .map(|e| e.features.duration_s.log10())
            .collect()
    };
    fisher_discriminant_ratio(&logs(EventClass::RadiationBurst), &logs(EventClass::RadiationPeak))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRates {
    pub class: EventClass,
    pub on_count: usize,
    pub off_count: usize,
    /// Events per hour.
    pub rate_on_per_h: f64,
    pub rate_off_per_h: Option<f64>,
    /// `rate_on / rate_off`; absent when either side is undefined or zero.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamCorrelation {
    pub on_time_s: f64,
    pub off_time_s: f64,
    /// No beam-off time, so off rates are undefined.
    pub off_time_zero: bool,
    pub classes: Vec<ClassRates>,
    /// `(trigger time, class)` in time order.
    pub timeline: Vec<(f64, EventClass)>,
}

pub fn beam_correlation(events: &[ClassifiedEvent], schedule: &BeamSchedule) -> Result<BeamCorrelation> {
    schedule.validate()?;
    let on_time = schedule.on_time();
    let off_time = schedule.off_time();
    let mut counts: BTreeMap<EventClass, (usize, usize)> = EventClass::ALL.iter().map(|&c| (c, (0, 0))).collect();
    for e in events {
        let t = e.features.trigger_time_s;
        if !(0.0..=schedule.span_s).contains(&t) {
            return Err(Error::invalid("events", format!("trigger at {t} s outside the schedule")));
        }
        let slot = counts.entry(e.class).or_default();
        if schedule.beam_on(t) {
            slot.0 += 1;
        } else {
            slot.1 += 1;
        }
    }
    let hours = |s: f64| s / crate::units::HOUR;
    let classes = counts
        .into_iter()
        .map(|(class, (on, off))| {
            let rate_on = if on_time > 0.0 { on as f64 / hours(on_time) } else { 0.0 };
            let rate_off = (off_time > 0.0).then(|| off as f64 / hours(off_time));
            let ratio = rate_off.filter(|&r| r > 0.0 && on_time > 0.0).map(|r| rate_on / r);
            ClassRates {
                class,
                on_count: on,
                off_count: off,
                rate_on_per_h: rate_on,
                rate_off_per_h: rate_off,
                ratio,
            }
        })
        .collect();
    let mut timeline: Vec<(f64, EventClass)> = events.iter().map(|e| (e.features.trigger_time_s, e.class)).collect();
    timeline.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(BeamCorrelation {
        on_time_s: on_time,
        off_time_s: off_time,
        off_time_zero: off_time <= 0.0,
        classes,
        timeline,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixRatio {
    pub peak_pct: f64,
    pub burst_pct: f64,
    pub radiation_events: usize,
}

/// Peak and burst shares of the radiation events.
pub fn mix_ratio(events: &[ClassifiedEvent]) -> Result<MixRatio> {
    let peaks = events.iter().filter(|e| e.class == EventClass::RadiationPeak).count();
    let bursts = events.iter().filter(|e| e.class == EventClass::RadiationBurst).count();
    let n = peaks + bursts;
    if n == 0 {
        return Err(Error::Undefined("mix ratio needs at least one radiation event".into()));
    }
    let peak_pct = 100.0 * peaks as f64 / n as f64;
    Ok(MixRatio {
        peak_pct,
        burst_pct: 100.0 - peak_pct,
        radiation_events: n,
    })
}

pub fn write_classified_csv<W: Write>(events: &[ClassifiedEvent], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "capture_id",
        "trigger_time_s",
        "class",
        "duration_s",
        "end_determined",
        "max_amp_mV",
        "amplitude_margin",
        "both_channels",
        "shape_incompatible_with_spurious",
        "beam_correlated",
    ])?;
    for e in events {
        let c = e.criteria;
        out.write_record([
            e.features.capture_id.to_string(),
            format!("{:.9}", e.features.trigger_time_s),
            e.class.as_str().to_string(),
            format!("{:.9e}", e.features.duration_s),
            e.features.end_determined().to_string(),
            format!("{:.4}", e.features.max_amplitude_mv),
            c.amplitude_margin.to_string(),
            c.both_channels.to_string(),
            c.shape_incompatible_with_spurious.to_string(),
            c.beam_correlated.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::{EventKind, FaultShape, FaultTemplate, InjectionConfig, InjectionPlan, PlanEntry, SpuriousTemplate};
use crate::device::{ChannelPair, SampleClock};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::units::MILLIVOLT;

/// Fraction of the maximum at which a peak's nominal duration is its full
/// width. At mid-range amplitudes this is where the pulse meets the analysis
/// activity level, so the nominal duration is the one the pipeline measures.
pub const PEAK_WIDTH_LEVEL: f64 = 0.05;

/// A rendered entry, evaluable at any absolute sample index.
///
/// Values depend only on the entry and the sample time, never on the range
/// being rendered, so sparse and dense synthesis agree bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub enum RenderedEvent {
    Burst {
        start_s: f64,
        /// `(start, end, level)` of each on-segment, relative to `start_s`.
        segments: Vec<(f64, f64, f64)>,
        duration_s: f64,
        amplitude_v: f64,
        coupling: f64,
    },
    Peak {
        start_s: f64,
        peak_s: f64,
        rise_tau_s: f64,
        fall_tau_s: f64,
        /// Support, relative to `peak_s`.
        before_s: f64,
        after_s: f64,
        amplitude_v: f64,
        coupling: f64,
    },
    Sawtooth {
        first: i64,
        last: i64,
        amplitude_v: f64,
    },
    Oscillating {
        start_s: f64,
        duration_s: f64,
        omega: f64,
        tau_s: f64,
        norm: f64,
        amplitude_v: f64,
    },
}

/// Dense additive perturbation over `start .. start + voltage.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub start: i64,
    pub voltage: Vec<f64>,
    /// Empty for voltage-only events.
    pub current: Vec<f64>,
}

impl Perturbation {
    pub fn len(&self) -> usize {
        self.voltage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voltage.is_empty()
    }
}

fn first_index_at_or_after(clock: &SampleClock, t: f64) -> i64 {
    ((t - clock.t0_s) / clock.dt_s()).ceil() as i64
}

fn first_index_after(clock: &SampleClock, t: f64) -> i64 {
    ((t - clock.t0_s) / clock.dt_s()).floor() as i64 + 1
}

/// Exclusive end index of the samples strictly before `t`.
fn first_index_not_before(clock: &SampleClock, t: f64) -> i64 {
    let x = (t - clock.t0_s) / clock.dt_s();
    let c = x.ceil();
    c as i64
}

impl RenderedEvent {
    /// Prepares an entry for rendering with its template from `config`.
    pub fn prepare(entry: &PlanEntry, config: &InjectionConfig, clock: &SampleClock) -> Result<Self> {
        match entry.kind {
            EventKind::Burst => Self::burst(entry, &config.burst, clock),
            EventKind::Peak => Self::peak(entry, &config.peak, clock),
            EventKind::Sawtooth | EventKind::Oscillating => {
                let template = config
                    .spurious_template(entry.kind)
                    .ok_or_else(|| Error::invalid("plan", format!("no template for {}", entry.kind.as_str())))?;
                Self::spurious(entry, template, clock)
            }
        }
    }

    pub fn burst(entry: &PlanEntry, template: &FaultTemplate, clock: &SampleClock) -> Result<Self> {
        let FaultShape::Burst {
            corruption_interval_s,
            duty_cycle,
            level_floor,
        } = template.shape
        else {
            return Err(Error::invalid("template", "not a burst template"));
        };
        check_duration(entry, clock)?;
        let duration = entry.duration_s;
        let mut rng = stream(entry.seed, &[0]);
        let mut segments = Vec::new();
        if !corruption_interval_s.is_finite() || duty_cycle >= 1.0 {
            segments.push((0.0, duration, 1.0));
        } else {
            let on = Exp::new(1.0 / (2.0 * corruption_interval_s * duty_cycle))
                .map_err(|e| Error::invalid("duty_cycle", e.to_string()))?;
            let off = Exp::new(1.0 / (2.0 * corruption_interval_s * (1.0 - duty_cycle)))
                .map_err(|e| Error::invalid("duty_cycle", e.to_string()))?;
            let mut t = 0.0;
            let mut level = 1.0;
            while t < duration {
                let end = (t + on.sample(&mut rng)).min(duration);
                segments.push((t, end, level));
                t = end + off.sample(&mut rng);
                level = rng.random_range(level_floor..=1.0);
            }
            // the corruption lasts until the sampled end
            if let Some(last) = segments.last_mut() {
                last.1 = duration;
            }
        }
        Ok(RenderedEvent::Burst {
            start_s: entry.time_s,
            segments,
            duration_s: duration,
            amplitude_v: entry.sign * entry.amplitude_mv * MILLIVOLT,
            coupling: template.current_coupling,
        })
    }

    pub fn peak(entry: &PlanEntry, template: &FaultTemplate, clock: &SampleClock) -> Result<Self> {
        let FaultShape::Peak { rise_tau_s, fall_tau_s } = template.shape else {
            return Err(Error::invalid("template", "not a peak template"));
        };
        check_duration(entry, clock)?;
        let edge = (1.0 / PEAK_WIDTH_LEVEL).ln();
        let scale = entry.duration_s / ((rise_tau_s + fall_tau_s) * edge);
        let (rise, fall) = (rise_tau_s * scale, fall_tau_s * scale);
        // entry time marks the rising edge at the width level
        let peak_s = entry.time_s + rise * edge;
        let tail = 1000f64.ln();
        Ok(RenderedEvent::Peak {
            start_s: entry.time_s,
            peak_s,
            rise_tau_s: rise,
            fall_tau_s: fall,
            before_s: rise * tail,
            after_s: fall * tail,
            amplitude_v: entry.sign * entry.amplitude_mv * MILLIVOLT,
            coupling: template.current_coupling,
        })
    }

    pub fn spurious(entry: &PlanEntry, template: &SpuriousTemplate, clock: &SampleClock) -> Result<Self> {
        let amplitude_v = entry.amplitude_mv * MILLIVOLT;
        match entry.kind {
            EventKind::Sawtooth => {
                let first = first_index_at_or_after(clock, entry.time_s);
                let ramp = clock.round_samples(entry.duration_s).max(1) as i64;
                Ok(RenderedEvent::Sawtooth {
                    first,
                    last: first + ramp,
                    amplitude_v,
                })
            }
            EventKind::Oscillating => {
                let omega = 2.0 * std::f64::consts::PI * template.frequency_hz;
                let tau_s = template.damping_cycles / template.frequency_hz;
                // maximum of exp(-t/tau) sin(omega t) is at tan(omega t) = omega tau
                let t_star = (omega * tau_s).atan() / omega;
                let norm = 1.0 / ((-t_star / tau_s).exp() * (omega * t_star).sin());
                Ok(RenderedEvent::Oscillating {
                    start_s: entry.time_s,
                    duration_s: entry.duration_s,
                    omega,
                    tau_s,
                    norm,
                    amplitude_v,
                })
            }
            _ => Err(Error::invalid("entry", "not a spurious entry")),
        }
    }

    /// Sample range `[start, end)` outside which the event contributes zero.
    pub fn support(&self, clock: &SampleClock) -> (i64, i64) {
        match *self {
            RenderedEvent::Burst { start_s, duration_s, .. } => (
                first_index_at_or_after(clock, start_s),
                first_index_not_before(clock, start_s + duration_s),
            ),
            RenderedEvent::Peak {
                peak_s,
                before_s,
                after_s,
                rise_tau_s,
                ..
            } => {
                let lo = if rise_tau_s > 0.0 {
                    first_index_at_or_after(clock, peak_s - before_s)
                } else {
                    first_index_at_or_after(clock, peak_s)
                };
                (lo, first_index_after(clock, peak_s + after_s))
            }
            RenderedEvent::Sawtooth { first, last, .. } => (first, last + 1),
            RenderedEvent::Oscillating { start_s, duration_s, .. } => (
                first_index_at_or_after(clock, start_s),
                first_index_not_before(clock, start_s + duration_s),
            ),
        }
    }

    pub fn affects_current(&self) -> bool {
        matches!(self, RenderedEvent::Burst { .. } | RenderedEvent::Peak { .. })
    }

    pub fn kind(&self) -> EventKind {
        match self {
            RenderedEvent::Burst { .. } => EventKind::Burst,
            RenderedEvent::Peak { .. } => EventKind::Peak,
            RenderedEvent::Sawtooth { .. } => EventKind::Sawtooth,
            RenderedEvent::Oscillating { .. } => EventKind::Oscillating,
        }
    }

    /// Adds the event to samples `start .. start + voltage.len()`. `current`
    /// must have the same length as `voltage`.
    pub fn add_into(&self, clock: &SampleClock, start: i64, voltage: &mut [f64], current: &mut [f64]) {
        debug_assert_eq!(voltage.len(), current.len());
        let (s0, s1) = self.support(clock);
        let lo = s0.max(start);
        let hi = s1.min(start + voltage.len() as i64);
        if lo >= hi {
            return;
        }
        match self {
            RenderedEvent::Burst {
                start_s,
                segments,
                amplitude_v,
                coupling,
                ..
            } => {
                let mut seg = 0;
                for i in lo..hi {
                    let t = clock.time_of(i) - start_s;
                    while seg < segments.len() && segments[seg].1 <= t {
                        seg += 1;
                    }
                    if seg == segments.len() {
                        break;
                    }
                    let (a, _, level) = segments[seg];
                    if t >= a {
                        let v = amplitude_v * level;
                        let k = (i - start) as usize;
                        voltage[k] += v;
                        current[k] += coupling * v;
                    }
                }
            }
            RenderedEvent::Peak {
                peak_s,
                rise_tau_s,
                fall_tau_s,
                amplitude_v,
                coupling,
                ..
            } => {
                for i in lo..hi {
                    let x = clock.time_of(i) - peak_s;
                    let shape = if x < 0.0 {
                        if *rise_tau_s > 0.0 {
                            (x / rise_tau_s).exp()
                        } else {
                            0.0
                        }
                    } else {
                        (-x / fall_tau_s).exp()
                    };
                    let v = amplitude_v * shape;
                    let k = (i - start) as usize;
                    voltage[k] += v;
                    current[k] += coupling * v;
                }
            }
            RenderedEvent::Sawtooth {
                first,
                last,
                amplitude_v,
            } => {
                let span = (last - first) as f64;
                for i in lo..hi {
                    voltage[(i - start) as usize] += amplitude_v * (i - first) as f64 / span;
                }
            }
            RenderedEvent::Oscillating {
                start_s,
                omega,
                tau_s,
                norm,
                amplitude_v,
                ..
            } => {
                for i in lo..hi {
                    let t = clock.time_of(i) - start_s;
                    voltage[(i - start) as usize] += amplitude_v * norm * (-t / tau_s).exp() * (omega * t).sin();
                }
            }
        }
    }

    /// Renders the whole support as a dense perturbation.
    pub fn render(&self, clock: &SampleClock) -> Perturbation {
        let (s0, s1) = self.support(clock);
        let n = (s1 - s0).max(0) as usize;
        let mut voltage = vec![0.0; n];
        let mut current = vec![0.0; n];
        self.add_into(clock, s0, &mut voltage, &mut current);
        if !self.affects_current() {
            current.clear();
        }
        Perturbation {
            start: s0,
            voltage,
            current,
        }
    }

    /// Fraction of the burst support covered by on-segments.
    pub fn on_fraction(&self) -> Option<f64> {
        match self {
            RenderedEvent::Burst {
                segments, duration_s, ..
            } => Some(segments.iter().map(|(a, b, _)| b - a).sum::<f64>() / duration_s),
            _ => None,
        }
    }
}

fn check_duration(entry: &PlanEntry, clock: &SampleClock) -> Result<()> {
    if !(entry.duration_s >= clock.dt_s()) {
        return Err(Error::invalid(
            "duration_s",
            format!("{} s is shorter than one sample", entry.duration_s),
        ));
    }
    Ok(())
}

pub fn render_burst(entry: &PlanEntry, template: &FaultTemplate, clock: &SampleClock) -> Result<Perturbation> {
    Ok(RenderedEvent::burst(entry, template, clock)?.render(clock))
}

pub fn render_peak(entry: &PlanEntry, template: &FaultTemplate, clock: &SampleClock) -> Result<Perturbation> {
    Ok(RenderedEvent::peak(entry, template, clock)?.render(clock))
}

pub fn render_sawtooth(entry: &PlanEntry, template: &SpuriousTemplate, clock: &SampleClock) -> Result<Perturbation> {
    if entry.kind != EventKind::Sawtooth {
        return Err(Error::invalid("entry", "not a sawtooth"));
    }
    Ok(RenderedEvent::spurious(entry, template, clock)?.render(clock))
}

pub fn render_oscillating(entry: &PlanEntry, template: &SpuriousTemplate, clock: &SampleClock) -> Result<Perturbation> {
    if entry.kind != EventKind::Oscillating {
        return Err(Error::invalid("entry", "not an oscillating event"));
    }
    Ok(RenderedEvent::spurious(entry, template, clock)?.render(clock))
}

pub fn render_entry(entry: &PlanEntry, config: &InjectionConfig, clock: &SampleClock) -> Result<Perturbation> {
    Ok(RenderedEvent::prepare(entry, config, clock)?.render(clock))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSpan {
    pub entry_id: usize,
    pub kind: EventKind,
    /// Sample range `[start, end)` in the indexing of the perturbed trace.
    pub start: i64,
    pub end: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthIndex {
    pub spans: Vec<GroundTruthSpan>,
}

impl GroundTruthIndex {
    /// Entries whose support contains sample `index`.
    pub fn covering(&self, index: i64) -> impl Iterator<Item = &GroundTruthSpan> {
        self.spans.iter().filter(move |s| s.start <= index && index < s.end)
    }
}

/// Adds every plan entry to a copy of `channels`. Entries may overlap; all
/// of them are recorded in the ground-truth index.
pub fn apply_plan(
    channels: &ChannelPair,
    plan: &InjectionPlan,
    config: &InjectionConfig,
) -> Result<(ChannelPair, GroundTruthIndex)> {
    let clock = channels.clock;
    let n = channels.len() as i64;
    let end_s = clock.time_of(n);
    let mut voltage: Vec<f64> = channels.voltage.iter().map(|&x| x as f64).collect();
    let mut current: Vec<f64> = channels.current.iter().map(|&x| x as f64).collect();
    let mut index = GroundTruthIndex::default();
    for entry in &plan.entries {
        if !(entry.time_s >= clock.t0_s && entry.time_s < end_s) {
            return Err(Error::invalid(
                "plan",
                format!("entry {} at {} s outside the trace", entry.id, entry.time_s),
            ));
        }
        let event = RenderedEvent::prepare(entry, config, &clock)?;
        event.add_into(&clock, 0, &mut voltage, &mut current);
        let (s0, s1) = event.support(&clock);
        index.spans.push(GroundTruthSpan {
            entry_id: entry.id,
            kind: entry.kind,
            start: s0.max(0),
            end: s1.min(n),
        });
    }
    let pair = ChannelPair::new(
        clock,
        current.into_iter().map(|x| x as f32).collect(),
        voltage.into_iter().map(|x| x as f32).collect(),
    )?;
    Ok((pair, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{MICROSECOND, NANOSECOND};

    fn clock() -> SampleClock {
        SampleClock::default()
    }

    fn entry(kind: EventKind, time_s: f64, duration_s: f64, amplitude_mv: f64, seed: u64) -> PlanEntry {
        PlanEntry {
            id: 0,
            time_s,
            kind,
            duration_s,
            amplitude_mv,
            sign: 1.0,
            seed,
        }
    }

    fn max_abs(x: &[f64]) -> f64 {
        x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn burst_fig7_exemplar() {
        let t = FaultTemplate::default_burst();
        let e = entry(EventKind::Burst, 1e-4, 900.0 * MICROSECOND, 90.0, 17);
        let p = render_burst(&e, &t, &clock()).unwrap();
        let peak_mv = max_abs(&p.voltage) / MILLIVOLT;
        assert!((81.0..=99.0).contains(&peak_mv), "{peak_mv}");
        let support_s = p.len() as f64 * clock().dt_s();
        assert!((support_s - 900.0 * MICROSECOND).abs() <= clock().dt_s());
        // both channels, same sign
        assert!(p.voltage.iter().zip(&p.current).all(|(v, c)| v * c >= 0.0));
        assert!(max_abs(&p.current) > 0.0);
    }

    #[test]
    fn infinite_corruption_interval_gives_one_block() {
        let mut t = FaultTemplate::default_burst();
        t.shape = FaultShape::Burst {
            corruption_interval_s: f64::INFINITY,
            duty_cycle: 0.5,
            level_floor: 0.6,
        };
        let e = entry(EventKind::Burst, 0.0, 50.0 * MICROSECOND, 100.0, 3);
        let p = render_burst(&e, &t, &clock()).unwrap();
        assert!(p.voltage.iter().all(|&v| (v - 0.1).abs() < 1e-12));
    }

    #[test]
    fn burst_duty_cycle_counting_oracle() {
        let t = FaultTemplate::default_burst();
        let (mut on, mut total) = (0usize, 0usize);
        for seed in 0..100 {
            let e = entry(EventKind::Burst, 0.0, 200.0 * MICROSECOND, 100.0, seed);
            let p = render_burst(&e, &t, &clock()).unwrap();
            on += p.voltage.iter().filter(|&&v| v != 0.0).count();
            total += p.len();
        }
        let frac = on as f64 / total as f64;
        assert!((frac - 0.5).abs() <= 0.05 * 0.5 + 0.02, "{frac}");
    }

    #[test]
    fn burst_shorter_than_sample_rejected() {
        let t = FaultTemplate::default_burst();
        let e = entry(EventKind::Burst, 0.0, 1e-9, 100.0, 1);
        assert!(render_burst(&e, &t, &clock()).is_err());
    }

    #[test]
    fn peak_outlier_renders() {
        let t = FaultTemplate::default_peak();
        let e = entry(EventKind::Peak, 1e-5, 300.0 * NANOSECOND, 400.0, 1);
        let p = render_peak(&e, &t, &clock()).unwrap();
        let peak = max_abs(&p.voltage) / MILLIVOLT;
        assert!(peak <= 400.0 + 1e-9 && peak > 380.0, "{peak}");
        assert_eq!(p.current.len(), p.voltage.len());
    }

    #[test]
    fn peak_width_at_ten_percent_matches_analytic_width() {
        let t = FaultTemplate::default_peak();
        let c = clock();
        for &d in &[200.0 * NANOSECOND, 1.2 * MICROSECOND, 700.0 * NANOSECOND] {
            let e = entry(EventKind::Peak, 3e-6, d, 100.0, 1);
            let p = render_peak(&e, &t, &c).unwrap();
            let level = 0.1 * max_abs(&p.voltage);
            let above: Vec<usize> = (0..p.len()).filter(|&k| p.voltage[k] >= level).collect();
            let width = (above.last().unwrap() - above.first().unwrap()) as f64 * c.dt_s();
            let FaultShape::Peak { rise_tau_s, fall_tau_s } = t.shape else { unreachable!() };
            let scale = d / ((rise_tau_s + fall_tau_s) * 20f64.ln());
            let analytic = (rise_tau_s + fall_tau_s) * scale * std::f64::consts::LN_10;
            assert!((width - analytic).abs() <= c.dt_s(), "{width} vs {analytic}");
        }
    }

    #[test]
    fn zero_rise_peaks_at_onset_sample() {
        let mut t = FaultTemplate::default_peak();
        t.shape = FaultShape::Peak {
            rise_tau_s: 0.0,
            fall_tau_s: 100.0 * NANOSECOND,
        };
        let e = entry(EventKind::Peak, 400.0 * NANOSECOND, 300.0 * NANOSECOND, 100.0, 1);
        let p = render_peak(&e, &t, &clock()).unwrap();
        let argmax = (0..p.len()).max_by(|&a, &b| p.voltage[a].total_cmp(&p.voltage[b])).unwrap();
        assert_eq!(argmax, 0);
        assert_eq!(p.start, 100);
    }

    #[test]
    fn sawtooth_peak_is_trigger_plus_margin_and_current_untouched() {
        let t = SpuriousTemplate::default_sawtooth();
        let amp = t.amplitude_for(30.0);
        let e = entry(EventKind::Sawtooth, 2e-6, t.duration_s, amp, 1);
        let p = render_sawtooth(&e, &t, &clock()).unwrap();
        assert!(p.current.is_empty());
        assert!((max_abs(&p.voltage) / MILLIVOLT - 33.0).abs() < 1e-9);
        // linear ramp: constant increments
        let inc = p.voltage[1] - p.voltage[0];
        assert!(p.voltage.windows(2).all(|w| ((w[1] - w[0]) - inc).abs() < 1e-12));
    }

    #[test]
    fn oscillation_sign_changes_match_cycles() {
        let t = SpuriousTemplate::default_oscillating();
        let e = entry(EventKind::Oscillating, 1e-6, t.duration_s, 33.0, 1);
        let p = render_oscillating(&e, &t, &clock()).unwrap();
        let nz: Vec<f64> = p.voltage.iter().copied().filter(|&v| v != 0.0).collect();
        let changes = nz.windows(2).filter(|w| w[0].signum() != w[1].signum()).count();
        let cycles = t.cycles().round() as usize;
        assert_eq!(changes, 2 * cycles - 1);
        assert!(max_abs(&p.voltage) <= 33.0 * MILLIVOLT + 1e-12);
        assert!(max_abs(&p.voltage) > 0.99 * 33.0 * MILLIVOLT);
    }

    fn flat_pair(n: usize) -> ChannelPair {
        ChannelPair::new(clock(), vec![0.25; n], vec![0.001; n]).unwrap()
    }

    #[test]
    fn empty_plan_is_identity() {
        let ch = flat_pair(1000);
        let (out, gt) = apply_plan(&ch, &InjectionPlan::default(), &InjectionConfig::default()).unwrap();
        assert_eq!(out, ch);
        assert!(gt.spans.is_empty());
    }

    #[test]
    fn burst_and_peak_perturb_exactly_two_regions() {
        let ch = flat_pair(100_000);
        let cfg = InjectionConfig::default();
        let mut b = entry(EventKind::Burst, 20e-6, 40e-6, 100.0, 3);
        let mut p = entry(EventKind::Peak, 300e-6, 500e-9, 80.0, 4);
        b.id = 0;
        p.id = 1;
        let plan = InjectionPlan { entries: vec![b, p] };
        let (out, gt) = apply_plan(&ch, &plan, &cfg).unwrap();
        assert_eq!(gt.spans.len(), 2);
        for i in 0..ch.len() as i64 {
            let inside = gt.covering(i).count() > 0;
            let k = i as usize;
            if !inside {
                assert_eq!(out.voltage[k], ch.voltage[k]);
                assert_eq!(out.current[k], ch.current[k]);
            }
        }
        for span in &gt.spans {
            assert!((span.start..span.end).any(|i| out.voltage[i as usize] != ch.voltage[i as usize]));
        }
    }

    #[test]
    fn applying_twice_doubles_perturbation() {
        let ch = ChannelPair::new(clock(), vec![0.0; 5000], vec![0.0; 5000]).unwrap();
        let cfg = InjectionConfig::default();
        let plan = InjectionPlan {
            entries: vec![entry(EventKind::Peak, 4e-6, 1e-6, 100.0, 4)],
        };
        let (once, _) = apply_plan(&ch, &plan, &cfg).unwrap();
        let (twice, _) = apply_plan(&once, &plan, &cfg).unwrap();
        for (a, b) in once.voltage.iter().zip(&twice.voltage) {
            assert!((2.0 * a - b).abs() <= 1e-6 * a.abs().max(1e-9));
        }
    }

    #[test]
    fn entry_outside_trace_is_rejected() {
        let ch = flat_pair(100);
        let plan = InjectionPlan {
            entries: vec![entry(EventKind::Peak, 1.0, 1e-6, 100.0, 4)],
        };
        assert!(apply_plan(&ch, &plan, &InjectionConfig::default()).is_err());
    }
}

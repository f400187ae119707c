//! Campaign report: versioned JSON document, structural schema check, text
//! summary and the four figure styles.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::campaign::CampaignConfig;
use crate::classification::{BeamCorrelation, EventClass, MixRatio};
use crate::error::{Error, Result};
use crate::plot::{self, MixBar, ScatterPoint, TimelineSeries};
use crate::statistics::{CrossSectionEstimate, FlatnessTest};
use crate::units::{HOUR, MICROSECOND};

pub const REPORT_SCHEMA: &str = "squid-bench/campaign-report";
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Ground-truth rows of the confusion matrix.
pub const TRUTH_LABELS: [&str; 5] = ["burst", "peak", "sawtooth", "oscillating", "none"];

/// Class a capture of the given truth row should receive.
pub fn expected_class(truth_row: usize) -> EventClass {
    match truth_row {
        0 => EventClass::RadiationBurst,
        1 => EventClass::RadiationPeak,
        2 => EventClass::SpuriousSawtooth,
        3 => EventClass::SpuriousOscillating,
        _ => EventClass::Unknown,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSummary {
    pub capture_id: usize,
    pub trigger_time_s: f64,
    pub duration_s: f64,
    pub end_determined: bool,
    pub max_amplitude_mv: f64,
    pub class: EventClass,
    /// Kind of the injected entry the capture landed on, or "none".
    pub truth: String,
    pub truth_entry: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSummary {
    pub truth_labels: Vec<String>,
    pub classes: Vec<EventClass>,
    /// `matrix[truth][class]`, captures counted once each.
    pub matrix: Vec<Vec<usize>>,
    pub captures: usize,
    pub off_diagonal_fraction: f64,
    /// Injected entries no capture landed on, by kind.
    pub missed: BTreeMap<String, usize>,
    /// Radiation as the positive class; missed radiation entries count as
    /// false negatives.
    pub separation_precision: Option<f64>,
    pub separation_recall: Option<f64>,
    /// Burst/peak accuracy over radiation captures classified as radiation
    /// with a determined end.
    pub fault_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub span_s: f64,
    pub samples: i64,
    pub beam_on_s: f64,
    pub scan_mode: crate::acquisition::ScanMode,
    pub triggers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticsSummary {
    pub confidence: f64,
    pub radiation_events: usize,
    pub fluence_cm2: f64,
    pub fluence_neutron_cm2: f64,
    pub fluence_gamma_cm2: f64,
    pub cross_section: Option<CrossSectionEstimate>,
    /// Radiation events over neutron plus gamma fluence.
    pub gamma_inclusive_sigma_cm2: Option<f64>,
    pub flatness: Option<FlatnessTest>,
    pub reference_cross_section_cm2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub schema: String,
    pub schema_version: u32,
    pub tool_version: String,
    pub analysis_convention: String,
    pub name: String,
    pub facility: String,
    pub seed: u64,
    /// Resolved configuration, output directory removed.
    pub config: CampaignConfig,
    pub campaign: CampaignSummary,
    pub injected: BTreeMap<String, usize>,
    pub classified: BTreeMap<String, usize>,
    pub ground_truth: GroundTruthSummary,
    pub statistics: StatisticsSummary,
    pub beam_correlation: BeamCorrelation,
    pub mix: Option<MixRatio>,
    pub duration_fdr: Option<f64>,
    pub curve: Vec<CrossSectionEstimate>,
    pub events: Vec<EventSummary>,
    pub outputs: Vec<String>,
}

impl CampaignReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses and schema-checks a report.
    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        validate_report_value(&v)?;
        Ok(serde_json::from_value(v)?)
    }
}

fn schema_err(path: &str, what: &str) -> Error {
    Error::Config(format!("report schema: `{path}` {what}"))
}

fn field<'a>(v: &'a Value, path: &str, key: &str) -> Result<&'a Value> {
    v.get(key).ok_or_else(|| schema_err(&format!("{path}.{key}"), "missing"))
}

fn expect(v: &Value, path: &str, ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(schema_err(path, &format!("must be {what}, found {v}")))
    }
}

fn number(v: &Value, path: &str, key: &str) -> Result<()> {
    let x = field(v, path, key)?;
    expect(x, &format!("{path}.{key}"), x.is_number(), "a number")
}

fn number_or_null(v: &Value, path: &str, key: &str) -> Result<()> {
    let x = field(v, path, key)?;
    expect(x, &format!("{path}.{key}"), x.is_number() || x.is_null(), "a number or null")
}

fn object_or_null<'a>(v: &'a Value, path: &str, key: &str) -> Result<Option<&'a Value>> {
    let x = field(v, path, key)?;
    expect(x, &format!("{path}.{key}"), x.is_object() || x.is_null(), "an object or null")?;
    Ok(x.as_object().map(|_| x))
}

fn array<'a>(v: &'a Value, path: &str, key: &str) -> Result<&'a Vec<Value>> {
    let x = field(v, path, key)?;
    x.as_array().ok_or_else(|| schema_err(&format!("{path}.{key}"), "must be an array"))
}

fn counts_map(v: &Value, path: &str, key: &str) -> Result<()> {
    let x = field(v, path, key)?;
    let m = x.as_object().ok_or_else(|| schema_err(&format!("{path}.{key}"), "must be an object"))?;
    for (k, n) in m {
        expect(n, &format!("{path}.{key}.{k}"), n.is_u64(), "a count")?;
    }
    Ok(())
}

fn estimate(v: &Value, path: &str) -> Result<()> {
    for key in ["sigma_cm2", "ci_low_cm2", "ci_high_cm2", "ci_half_width_cm2", "std_error_cm2", "fluence_cm2"] {
        number(v, path, key)?;
    }
    let n = field(v, path, "n_events")?;
    expect(n, &format!("{path}.n_events"), n.is_u64(), "a count")
}

/// Structural check of a report document against the current schema.
pub fn validate_report_value(v: &Value) -> Result<()> {
    let r = "$";
    expect(v, r, v.is_object(), "an object")?;
    let schema = field(v, r, "schema")?;
    expect(schema, "$.schema", schema.as_str() == Some(REPORT_SCHEMA), REPORT_SCHEMA)?;
    let version = field(v, r, "schema_version")?;
    expect(
        version,
        "$.schema_version",
        version.as_u64() == Some(REPORT_SCHEMA_VERSION as u64),
        "the supported schema version",
    )?;
    for key in ["tool_version", "analysis_convention", "name", "facility"] {
        let x = field(v, r, key)?;
        expect(x, &format!("$.{key}"), x.is_string(), "a string")?;
    }
    let seed = field(v, r, "seed")?;
    expect(seed, "$.seed", seed.is_u64(), "an unsigned integer")?;
    let config = field(v, r, "config")?;
    expect(config, "$.config", config.is_object(), "an object")?;

    let c = field(v, r, "campaign")?;
    for key in ["span_s", "samples", "beam_on_s", "triggers"] {
        number(c, "$.campaign", key)?;
    }
    counts_map(v, r, "injected")?;
    counts_map(v, r, "classified")?;

    let g = field(v, r, "ground_truth")?;
    let labels = array(g, "$.ground_truth", "truth_labels")?;
    let classes = array(g, "$.ground_truth", "classes")?;
    let matrix = array(g, "$.ground_truth", "matrix")?;
    if matrix.len() != labels.len() {
        return Err(schema_err("$.ground_truth.matrix", "needs one row per truth label"));
    }
    for (i, row) in matrix.iter().enumerate() {
        let row = row
            .as_array()
            .ok_or_else(|| schema_err(&format!("$.ground_truth.matrix[{i}]"), "must be an array"))?;
        if row.len() != classes.len() || !row.iter().all(Value::is_u64) {
            return Err(schema_err(&format!("$.ground_truth.matrix[{i}]"), "needs one count per class"));
        }
    }
    number(g, "$.ground_truth", "captures")?;
    number(g, "$.ground_truth", "off_diagonal_fraction")?;
    counts_map(g, "$.ground_truth", "missed")?;
    for key in ["separation_precision", "separation_recall", "fault_accuracy"] {
        number_or_null(g, "$.ground_truth", key)?;
    }

    let s = field(v, r, "statistics")?;
    let p = "$.statistics";
    for key in ["confidence", "radiation_events", "fluence_cm2", "fluence_neutron_cm2", "fluence_gamma_cm2"] {
        number(s, p, key)?;
    }
    if let Some(e) = object_or_null(s, p, "cross_section")? {
        estimate(e, "$.statistics.cross_section")?;
    }
    number_or_null(s, p, "gamma_inclusive_sigma_cm2")?;
    number_or_null(s, p, "reference_cross_section_cm2")?;
    if let Some(f) = object_or_null(s, p, "flatness")? {
        for key in ["slope", "null_mean", "null_sd", "t", "points"] {
            number(f, "$.statistics.flatness", key)?;
        }
    }

    let b = field(v, r, "beam_correlation")?;
    number(b, "$.beam_correlation", "on_time_s")?;
    number(b, "$.beam_correlation", "off_time_s")?;
    array(b, "$.beam_correlation", "classes")?;
    if let Some(m) = object_or_null(v, r, "mix")? {
        for key in ["peak_pct", "burst_pct", "radiation_events"] {
            number(m, "$.mix", key)?;
        }
    }
    number_or_null(v, r, "duration_fdr")?;
    for (i, e) in array(v, r, "curve")?.iter().enumerate() {
        estimate(e, &format!("$.curve[{i}]"))?;
    }
    for (i, e) in array(v, r, "events")?.iter().enumerate() {
        let p = format!("$.events[{i}]");
        for key in ["capture_id", "trigger_time_s", "duration_s", "max_amplitude_mv"] {
            number(e, &p, key)?;
        }
        let class = field(e, &p, "class")?;
        expect(class, &format!("{p}.class"), class.is_string(), "a class name")?;
    }
    for o in array(v, r, "outputs")? {
        expect(o, "$.outputs[]", o.is_string(), "a file name")?;
    }
    Ok(())
}

/// The four figures of a run, as `(file name, svg)`.
pub fn render_plots(report: &CampaignReport) -> Vec<(&'static str, String)> {
    let span_h = report.campaign.span_s / HOUR;
    let on: Vec<(f64, f64)> = report
        .config
        .schedule
        .on_intervals()
        .iter()
        .map(|&(a, b)| (a / HOUR, b / HOUR))
        .collect();
    let times = |pred: fn(EventClass) -> bool| -> Vec<f64> {
        report
            .events
            .iter()
            .filter(|e| pred(e.class))
            .map(|e| e.trigger_time_s / HOUR)
            .collect()
    };
    let radiation = times(EventClass::is_radiation);
    let other = times(|c| !c.is_radiation());
    let bins = ((span_h * 4.0).ceil() as usize).clamp(1, 400);
    let timeline = plot::timeline_svg(
        &format!("{}: events per bin", report.name),
        span_h.max(f64::MIN_POSITIVE),
        &on,
        &[
            TimelineSeries {
                label: "radiation",
                times_h: &radiation,
            },
            TimelineSeries {
                label: "spurious/unknown",
                times_h: &other,
            },
        ],
        bins,
    );

    let xsec = plot::cross_section_svg(
        &format!("{}: cross section", report.name),
        &report.curve,
        report.statistics.reference_cross_section_cm2,
    );

    let points: Vec<ScatterPoint<'_>> = report
        .events
        .iter()
        .filter(|e| e.class.is_radiation())
        .map(|e| ScatterPoint {
            duration_us: e.duration_s / MICROSECOND,
            amplitude_mv: e.max_amplitude_mv,
            class: e.class.as_str(),
        })
        .collect();
    let scatter = plot::scatter_svg(&format!("{}: radiation events", report.name), &points);

    let bars: Vec<MixBar<'_>> = report
        .mix
        .iter()
        .map(|m| MixBar {
            label: &report.facility,
            peak_pct: m.peak_pct,
            burst_pct: m.burst_pct,
        })
        .collect();
    let mix = plot::mix_svg(&format!("{}: peak-type share", report.name), &bars);

    vec![
        ("timeline.svg", timeline),
        ("cross_section.svg", xsec),
        ("scatter.svg", scatter),
        ("mix.svg", mix),
    ]
}

fn sci(x: f64) -> String {
    format!("{x:.3e}")
}

fn opt(x: Option<f64>, f: impl Fn(f64) -> String) -> String {
    x.map(f).unwrap_or_else(|| "n/a".into())
}

/// Plain-text summary with the class, rate and confusion tables.
pub fn summary_text(report: &CampaignReport) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    let st = &report.statistics;
    let _ = writeln!(s, "campaign {} ({}), seed {}", report.name, report.facility, report.seed);
    let _ = writeln!(s, "tool {} / analysis {}", report.tool_version, report.analysis_convention);
    let _ = writeln!(
        s,
        "span {:.3} h, beam on {:.3} h, triggers {}",
        report.campaign.span_s / HOUR,
        report.campaign.beam_on_s / HOUR,
        report.campaign.triggers
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<22} {:>8} {:>8} {:>10} {:>10}", "class", "on", "off", "on/h", "off/h");
    for c in &report.beam_correlation.classes {
        let _ = writeln!(
            s,
            "{:<22} {:>8} {:>8} {:>10.3} {:>10}",
            c.class.as_str(),
            c.on_count,
            c.off_count,
            c.rate_on_per_h,
            opt(c.rate_off_per_h, |r| format!("{r:.3}"))
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "radiation events  {}", st.radiation_events);
    let _ = writeln!(s, "fluence           {} cm^-2", sci(st.fluence_cm2));
    match &st.cross_section {
        Some(x) => {
            let _ = writeln!(
                s,
                "cross section     {} cm^2, {:.0}% CI [{}, {}], half-width {}, std error {}",
                sci(x.sigma_cm2),
                100.0 * st.confidence,
                sci(x.ci_low_cm2),
                sci(x.ci_high_cm2),
                sci(x.ci_half_width_cm2),
                sci(x.std_error_cm2)
            );
        }
        None => {
            let _ = writeln!(s, "cross section     n/a (no fluence)");
        }
    }
    let _ = writeln!(s, "gamma-inclusive   {}", opt(st.gamma_inclusive_sigma_cm2, sci));
    if let Some(f) = &st.flatness {
        let _ = writeln!(
            s,
            "flatness          t = {:.2} over {} points ({})",
            f.t,
            f.points,
            if f.consistent_with_flat() { "flat" } else { "trend" }
        );
    }
    match &report.mix {
        Some(m) => {
            let _ = writeln!(s, "mix               peak {:.1}%, burst {:.1}%", m.peak_pct, m.burst_pct);
        }
        None => {
            let _ = writeln!(s, "mix               n/a");
        }
    }
    let _ = writeln!(s, "duration FDR      {}", opt(report.duration_fdr, |x| format!("{x:.3}")));
    let _ = writeln!(s);
    let g = &report.ground_truth;
    let _ = write!(s, "{:<12}", "truth\\class");
    for c in &g.classes {
        let _ = write!(s, " {:>21}", c.as_str());
    }
    let _ = writeln!(s);
    for (label, row) in g.truth_labels.iter().zip(&g.matrix) {
        let _ = write!(s, "{label:<12}");
        for n in row {
            let _ = write!(s, " {n:>21}");
        }
        let _ = writeln!(s);
    }
    let _ = writeln!(s, "off-diagonal      {:.4}", g.off_diagonal_fraction);
    let _ = writeln!(
        s,
        "precision/recall  {} / {}",
        opt(g.separation_precision, |x| format!("{x:.4}")),
        opt(g.separation_recall, |x| format!("{x:.4}"))
    );
    let _ = writeln!(s, "fault accuracy    {}", opt(g.fault_accuracy, |x| format!("{x:.4}")));
    s
}

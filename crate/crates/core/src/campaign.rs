//! End-to-end campaign: injection, acquisition, analysis, classification and
//! statistics against known ground truth.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    campaign_triggers, capture_from_source, read_capture, write_capture, CaptureContext, CaptureWindow, ScanMode,
    TriggerConfig,
};
use crate::analysis::{extract_features, write_features_csv, AnalysisConfig, EventFeatures, ANALYSIS_CONVENTION};
use crate::classification::{
    beam_correlation, classify, duration_fdr, mix_ratio, write_classified_csv, ClassifiedEvent, ClassifierConfig,
    EventClass,
};
use crate::device::{DeviceParams, DriveConfig, SampleClock};
use crate::error::{Error, Result};
use crate::injection::{
    sample_arrivals, BeamInterval, BeamSchedule, EventKind, InjectionConfig, InjectionPlan, RenderedEvent, Species,
};
use crate::report::{
    expected_class, render_plots, summary_text, CampaignReport, CampaignSummary, EventSummary, GroundTruthSummary,
    StatisticsSummary, REPORT_SCHEMA, REPORT_SCHEMA_VERSION, TRUTH_LABELS,
};
use crate::signal::{Quantization, SignalSource};
use crate::statistics::{
    cross_section, cross_section_curve, flatness_test, gamma_inclusive_sigma, write_curve_csv, CrossSectionEstimate,
    FluenceLedger, FluxConvention, SpeciesFilter,
};
use crate::transport::TransportConfig;
use crate::units::HOUR;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatisticsConfig {
    pub confidence: f64,
    /// Intervals counted in the fluence ledger.
    pub fluence_species: SpeciesFilter,
    pub flux_convention: FluxConvention,
    /// Drawn as a horizontal line on the cross-section plot.
    pub reference_cross_section_cm2: Option<f64>,
    pub flatness_min_k: usize,
    pub flatness_trials: usize,
}

impl Default for StatisticsConfig {
    fn default() -> Self {
        Self {
            confidence: 0.95,
            fluence_species: SpeciesFilter::Neutrons,
            flux_convention: FluxConvention::Facility,
            reference_cross_section_cm2: None,
            flatness_min_k: 10,
            flatness_trials: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionConfig {
    pub scan_mode: ScanMode,
    pub write_captures: bool,
    pub quantization: Option<Quantization>,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            scan_mode: ScanMode::Sparse,
            write_captures: true,
            quantization: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignConfig {
    pub name: String,
    pub facility: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub device: DeviceParams,
    pub drive: DriveConfig,
    pub clock: SampleClock,
    pub schedule: BeamSchedule,
    pub templates: InjectionConfig,
    pub trigger: TriggerConfig,
    pub window: CaptureWindow,
    pub analysis: AnalysisConfig,
    pub classifier: ClassifierConfig,
    pub statistics: StatisticsConfig,
    pub acquisition: AcquisitionConfig,
    pub transport: TransportConfig,
    /// Free-form run annotations, copied into the report.
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        let on = 4.5 * HOUR;
        Self {
            name: "campaign".into(),
            facility: "NILE".into(),
            seed: 0,
            output_dir: None,
            device: DeviceParams::default(),
            drive: DriveConfig::default(),
            clock: SampleClock::default(),
            schedule: BeamSchedule {
                span_s: on,
                intervals: vec![BeamInterval::new(0.0, on, Species::Neutron14Mev, 3.3e6)],
            },
            templates: InjectionConfig::default(),
            trigger: TriggerConfig::default(),
            window: CaptureWindow::default(),
            analysis: AnalysisConfig::default(),
            classifier: ClassifierConfig::default(),
            statistics: StatisticsConfig::default(),
            acquisition: AcquisitionConfig::default(),
            transport: TransportConfig::default(),
            metadata: BTreeMap::new(),
        }
    }
}

/// Shipped presets, by name.
pub const PRESETS: [(&str, &str); 3] = [
    ("nile-e1", include_str!("../../../presets/nile-e1.toml")),
    ("chipir-e2", include_str!("../../../presets/chipir-e2.toml")),
    ("calliope-e3", include_str!("../../../presets/calliope-e3.toml")),
];

impl CampaignConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))?;
        Self::from_toml(text)
    }

    pub fn validate(&self) -> Result<()> {
        self.device.validate()?;
        self.drive.validate()?;
        self.clock.validate()?;
        self.schedule.validate()?;
        self.templates.validate()?;
        self.trigger.validate()?;
        self.window.validate()?;
        self.analysis.validate()?;
        self.classifier.validate()?;
        self.transport.validate()?;
        if let Some(q) = &self.acquisition.quantization {
            q.validate()?;
        }
        let st = &self.statistics;
        if !(st.confidence > 0.0 && st.confidence < 1.0) {
            return Err(Error::invalid("confidence", "must lie in (0, 1)"));
        }
        if st.flatness_min_k < 1 || st.flatness_trials < 10 {
            return Err(Error::invalid("flatness", "need min_k >= 1 and trials >= 10"));
        }
        if self.clock.t0_s != 0.0 {
            return Err(Error::invalid("clock.t0_s", "a campaign starts at zero"));
        }
        Ok(())
    }

    /// Samples in the campaign span.
    pub fn span_samples(&self) -> Result<i64> {
        Ok(self.clock.samples_in(self.schedule.span_s)? as i64)
    }
}

/// Everything a campaign produced, in memory.
#[derive(Debug, Clone)]
pub struct CampaignRun {
    pub plan: InjectionPlan,
    pub triggers: Vec<i64>,
    pub classified: Vec<ClassifiedEvent>,
    /// Plan entry each capture landed on.
    pub truth: Vec<Option<usize>>,
    pub report: CampaignReport,
}

impl CampaignRun {
    pub fn features(&self) -> Vec<EventFeatures> {
        self.classified.iter().map(|e| e.features.clone()).collect()
    }
}

/// Samples the plan from the schedule and runs the campaign. Captures go to
/// `capture_dir` when given.
pub fn run_campaign(cfg: &CampaignConfig, capture_dir: Option<&Path>) -> Result<CampaignRun> {
    cfg.validate()?;
    let plan = sample_arrivals(&cfg.schedule, &cfg.templates, cfg.trigger.threshold_mv, cfg.seed)?;
    run_with_plan(cfg, plan, capture_dir)
}

/// Runs a campaign over an explicit ground-truth plan.
pub fn run_with_plan(cfg: &CampaignConfig, plan: InjectionPlan, capture_dir: Option<&Path>) -> Result<CampaignRun> {
    cfg.validate()?;
    let span = cfg.span_samples()?;
    let mut source = SignalSource::new(&cfg.device, &cfg.drive, cfg.clock, span, cfg.seed)?
        .with_plan(&plan, &cfg.templates)?;
    if let Some(q) = cfg.acquisition.quantization {
        source = source.with_quantization(q)?;
    }
    let source = source.with_trigger_cut(cfg.trigger.threshold_v())?;
    let triggers = campaign_triggers(&source, &cfg.trigger, cfg.acquisition.scan_mode)?;
    log::info!("{}: {} triggers over {span} samples", cfg.name, triggers.len());

    let ctx = CaptureContext {
        facility: cfg.facility.clone(),
        schedule_id: cfg.name.clone(),
    };
    let features: Vec<EventFeatures> = triggers
        .par_iter()
        .enumerate()
        .map(|(id, &index)| {
            let cap = capture_from_source(&source, index, &cfg.window, &cfg.trigger, &ctx, id)?;
            if let Some(dir) = capture_dir {
                write_capture(dir, &capture_stem(id), &cap)?;
            }
            extract_features(&cap, &cfg.analysis)
        })
        .collect::<Result<_>>()?;
    let classified: Vec<ClassifiedEvent> = features
        .iter()
        .map(|f| classify(f, &cfg.classifier, Some(&cfg.schedule)))
        .collect();

    let truth = match_truth(&plan, &triggers, &cfg.templates, &cfg.clock)?;
    let report = build_report(cfg, &plan, &triggers, &classified, &truth)?;
    Ok(CampaignRun {
        plan,
        triggers,
        classified,
        truth,
        report,
    })
}

pub fn capture_stem(id: usize) -> String {
    format!("capture_{id:05}")
}

/// For each trigger, the plan entry whose support covers it, preferring the
/// one that started last.
fn match_truth(
    plan: &InjectionPlan,
    triggers: &[i64],
    templates: &InjectionConfig,
    clock: &SampleClock,
) -> Result<Vec<Option<usize>>> {
    let mut spans: Vec<(i64, i64, usize)> = plan
        .entries
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let (s0, s1) = RenderedEvent::prepare(e, templates, clock)?.support(clock);
            Ok((s0, s1, k))
        })
        .collect::<Result<_>>()?;
    spans.sort_by_key(|s| (s.0, s.2));
    Ok(triggers
        .iter()
        .map(|&t| {
            let upto = spans.partition_point(|s| s.0 <= t);
            spans[..upto].iter().rev().find(|s| t < s.1).map(|s| s.2)
        })
        .collect())
}

fn truth_row(kind: Option<EventKind>) -> usize {
    match kind {
        Some(EventKind::Burst) => 0,
        Some(EventKind::Peak) => 1,
        Some(EventKind::Sawtooth) => 2,
        Some(EventKind::Oscillating) => 3,
        None => 4,
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn ground_truth(plan: &InjectionPlan, classified: &[ClassifiedEvent], truth: &[Option<usize>]) -> GroundTruthSummary {
    let classes = EventClass::ALL.to_vec();
    let mut matrix = vec![vec![0usize; classes.len()]; TRUTH_LABELS.len()];
    let mut hit = vec![false; plan.entries.len()];
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    let (mut fault_ok, mut fault_n) = (0usize, 0usize);
    for (e, t) in classified.iter().zip(truth) {
        let kind = t.map(|k| plan.entries[k].kind);
        if let Some(k) = *t {
            hit[k] = true;
        }
        let row = truth_row(kind);
        let col = classes.iter().position(|&c| c == e.class).unwrap_or(classes.len() - 1);
        matrix[row][col] += 1;
        let is_rad = kind.is_some_and(EventKind::is_radiation);
        match (is_rad, e.class.is_radiation()) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fneg += 1,
            _ => {}
        }
        if is_rad && e.class.is_radiation() && e.features.end_determined() {
            fault_n += 1;
            if e.class == expected_class(row) {
                fault_ok += 1;
            }
        }
    }
    let mut missed = BTreeMap::new();
    for (e, h) in plan.entries.iter().zip(&hit) {
        if !h {
            *missed.entry(e.kind.as_str().to_string()).or_insert(0) += 1;
        }
    }
    let missed_rad = missed.get("burst").copied().unwrap_or(0) + missed.get("peak").copied().unwrap_or(0);
    let captures = classified.len();
    let diagonal: usize = (0..TRUTH_LABELS.len())
        .map(|r| {
            let c = classes.iter().position(|&c| c == expected_class(r)).unwrap_or(0);
            matrix[r][c]
        })
        .sum();
    GroundTruthSummary {
        truth_labels: TRUTH_LABELS.iter().map(|s| s.to_string()).collect(),
        classes,
        matrix,
        captures,
        off_diagonal_fraction: ratio(captures - diagonal, captures).unwrap_or(0.0),
        missed,
        separation_precision: ratio(tp, tp + fp),
        separation_recall: ratio(tp, tp + fneg + missed_rad),
        fault_accuracy: ratio(fault_ok, fault_n),
    }
}

/// Cross section, curve, flatness and gamma-inclusive estimate for sorted
/// radiation event times.
pub fn campaign_statistics(
    cfg: &CampaignConfig,
    radiation_times: &[f64],
) -> Result<(StatisticsSummary, Vec<CrossSectionEstimate>)> {
    let st = &cfg.statistics;
    let n = radiation_times.len() as u64;
    let ledger = FluenceLedger::new(&cfg.schedule, st.fluence_species, st.flux_convention)?;
    let fluence = ledger.total();
    let fluence_n = FluenceLedger::new(&cfg.schedule, SpeciesFilter::Neutrons, st.flux_convention)?.total();
    let fluence_g = FluenceLedger::new(&cfg.schedule, SpeciesFilter::Gammas, st.flux_convention)?.total();
    let estimate = if fluence > 0.0 {
        Some(cross_section(n, fluence, st.confidence)?)
    } else {
        None
    };
    let curve = cross_section_curve(radiation_times, &ledger, st.confidence)?;
    let flatness = if fluence > 0.0 && radiation_times.len() >= st.flatness_min_k + 2 {
        let phis: Vec<f64> = radiation_times.iter().map(|&t| ledger.at(t)).collect();
        match flatness_test(&phis, fluence, st.flatness_min_k, st.flatness_trials, cfg.seed) {
            Ok(f) => Some(f),
            Err(Error::Undefined(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let gamma_inclusive = if fluence_n > 0.0 {
        Some(gamma_inclusive_sigma(n, fluence_n, fluence_g)?)
    } else {
        None
    };
    Ok((
        StatisticsSummary {
            confidence: st.confidence,
            radiation_events: radiation_times.len(),
            fluence_cm2: fluence,
            fluence_neutron_cm2: fluence_n,
            fluence_gamma_cm2: fluence_g,
            cross_section: estimate,
            gamma_inclusive_sigma_cm2: gamma_inclusive,
            flatness,
            reference_cross_section_cm2: st.reference_cross_section_cm2,
        },
        curve,
    ))
}

/// Sorted trigger times of radiation-class rows in a classified-events CSV.
pub fn read_radiation_times(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("{}: no `{name}` column", path.display())))
    };
    let (t_col, c_col) = (col("trigger_time_s")?, col("class")?);
    let mut times = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let class = &row[c_col];
        if class == EventClass::RadiationBurst.as_str() || class == EventClass::RadiationPeak.as_str() {
            let t: f64 = row[t_col]
                .parse()
                .map_err(|_| Error::Format(format!("bad trigger time `{}`", &row[t_col])))?;
            times.push(t);
        }
    }
    times.sort_by(f64::total_cmp);
    Ok(times)
}

fn build_report(
    cfg: &CampaignConfig,
    plan: &InjectionPlan,
    triggers: &[i64],
    classified: &[ClassifiedEvent],
    truth: &[Option<usize>],
) -> Result<CampaignReport> {
    let mut radiation_times: Vec<f64> = classified
        .iter()
        .filter(|e| e.class.is_radiation())
        .map(|e| e.features.trigger_time_s)
        .collect();
    radiation_times.sort_by(f64::total_cmp);
    let (statistics, curve) = campaign_statistics(cfg, &radiation_times)?;

    let mut correlation = beam_correlation(classified, &cfg.schedule)?;
    // the event list below carries the same information
    correlation.timeline.clear();

    let mut injected: BTreeMap<String, usize> = BTreeMap::new();
    for kind in [EventKind::Burst, EventKind::Peak, EventKind::Sawtooth, EventKind::Oscillating] {
        injected.insert(kind.as_str().into(), plan.count(kind));
    }
    let mut class_counts: BTreeMap<String, usize> = EventClass::ALL.iter().map(|c| (c.as_str().into(), 0)).collect();
    for e in classified {
        *class_counts.entry(e.class.as_str().into()).or_insert(0) += 1;
    }
    let events = classified
        .iter()
        .zip(truth)
        .map(|(e, t)| EventSummary {
            capture_id: e.features.capture_id,
            trigger_time_s: e.features.trigger_time_s,
            duration_s: e.features.duration_s,
            end_determined: e.features.end_determined(),
            max_amplitude_mv: e.features.max_amplitude_mv,
            class: e.class,
            truth: t.map_or("none", |k| plan.entries[k].kind.as_str()).into(),
            truth_entry: *t,
        })
        .collect();

    let mut config = cfg.clone();
    config.output_dir = None;
    Ok(CampaignReport {
        schema: REPORT_SCHEMA.into(),
        schema_version: REPORT_SCHEMA_VERSION,
        tool_version: crate::TOOL_VERSION.into(),
        analysis_convention: ANALYSIS_CONVENTION.into(),
        name: cfg.name.clone(),
        facility: cfg.facility.clone(),
        seed: cfg.seed,
        config,
        campaign: CampaignSummary {
            span_s: cfg.schedule.span_s,
            samples: cfg.span_samples()?,
            beam_on_s: cfg.schedule.on_time(),
            scan_mode: cfg.acquisition.scan_mode,
            triggers: triggers.len(),
        },
        injected,
        classified: class_counts,
        ground_truth: ground_truth(plan, classified, truth),
        statistics,
        beam_correlation: correlation,
        mix: mix_ratio(classified).ok(),
        duration_fdr: duration_fdr(classified).ok().filter(|x| x.is_finite()),
        curve,
        events,
        outputs: Vec::new(),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes a report and its four figures plus the text summary; returns the
/// file names written.
pub fn write_report_outputs(report: &CampaignReport, dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    for (name, svg) in render_plots(report) {
        std::fs::write(dir.join(name), svg)?;
        names.push(name.to_string());
    }
    std::fs::write(dir.join("summary.txt"), summary_text(report))?;
    names.push("summary.txt".into());
    Ok(names)
}

/// Runs the campaign and writes every output into `dir`.
pub fn run_campaign_to_dir(cfg: &CampaignConfig, dir: &Path) -> Result<CampaignRun> {
    std::fs::create_dir_all(dir)?;
    let capture_dir = dir.join("captures");
    let run = if cfg.acquisition.write_captures {
        run_campaign(cfg, Some(&capture_dir))?
    } else {
        run_campaign(cfg, None)?
    };
    write_run(run, cfg, dir)
}

/// Writes the tabular outputs, plots and report of a finished run.
pub fn write_run(mut run: CampaignRun, cfg: &CampaignConfig, dir: &Path) -> Result<CampaignRun> {
    std::fs::create_dir_all(dir)?;
    let mut outputs = Vec::new();
    if cfg.acquisition.write_captures {
        outputs.push("captures/".to_string());
    }
    let mut resolved = cfg.clone();
    resolved.output_dir = None;
    std::fs::write(dir.join("config.toml"), resolved.to_toml()?)?;
    outputs.push("config.toml".into());
    run.plan.write_csv(create(&dir.join("plan.csv"))?)?;
    outputs.push("plan.csv".into());
    write_features_csv(&run.features(), create(&dir.join("features.csv"))?)?;
    outputs.push("features.csv".into());
    write_classified_csv(&run.classified, create(&dir.join("classified.csv"))?)?;
    outputs.push("classified.csv".into());
    write_curve_csv(&run.report.curve, create(&dir.join("cross_section.csv"))?)?;
    outputs.push("cross_section.csv".into());
    outputs.extend(write_report_outputs(&run.report, dir)?);
    outputs.push("report.json".into());
    run.report.outputs = outputs;
    std::fs::write(dir.join("report.json"), run.report.to_json()?)?;
    Ok(run)
}

/// Capture trace files in `dir`, sorted by name.
pub fn list_captures(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "sqtr"))
        .collect();
    out.sort();
    Ok(out)
}

/// Re-analyses stored captures. Does not depend on how they were produced.
pub fn analyze_dir(
    dir: &Path,
    analysis: &AnalysisConfig,
    classifier: &ClassifierConfig,
    schedule: Option<&BeamSchedule>,
) -> Result<Vec<ClassifiedEvent>> {
    analysis.validate()?;
    classifier.validate()?;
    list_captures(dir)?
        .par_iter()
        .map(|p| {
            let cap = read_capture(p)?;
            let f = extract_features(&cap, analysis)?;
            Ok(classify(&f, classifier, schedule))
        })
        .collect()
}

/// Writes `features.csv` and `classified.csv` for `events` into `out`.
pub fn write_analysis(events: &[ClassifiedEvent], out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let features: Vec<EventFeatures> = events.iter().map(|e| e.features.clone()).collect();
    write_features_csv(&features, create(&out.join("features.csv"))?)?;
    write_classified_csv(events, create(&out.join("classified.csv"))?)?;
    Ok(())
}

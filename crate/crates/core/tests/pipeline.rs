use std::path::Path;

use squid_bench::acquisition::ScanMode;
use squid_bench::campaign::{analyze_dir, run_campaign, run_campaign_to_dir, write_analysis, CampaignConfig, PRESETS};
use squid_bench::injection::{BeamInterval, BeamSchedule, Species};
use squid_bench::report::{render_plots, CampaignReport};
use squid_bench::transport::TransportConfig;

fn short(seed: u64) -> CampaignConfig {
    let mut cfg = CampaignConfig::default();
    cfg.schedule = BeamSchedule {
        span_s: 1.0,
        intervals: vec![BeamInterval::new(0.1, 0.9, Species::Neutron14Mev, 3.3e6)],
    };
    cfg.templates.cross_section.neutron_cm2 = 3e-6;
    cfg.seed = seed;
    cfg
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn sparse_and_dense_scans_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let mut sparse = short(3);
    sparse.acquisition.scan_mode = ScanMode::Sparse;
    let mut dense = sparse.clone();
    dense.acquisition.scan_mode = ScanMode::Dense;
    let a = run_campaign_to_dir(&sparse, &tmp.path().join("sparse")).unwrap();
    let b = run_campaign_to_dir(&dense, &tmp.path().join("dense")).unwrap();
    assert!(!a.triggers.is_empty());
    assert_eq!(a.triggers, b.triggers);
    for f in ["features.csv", "classified.csv", "plan.csv"] {
        assert_eq!(read(&tmp.path().join("sparse").join(f)), read(&tmp.path().join("dense").join(f)), "{f}");
    }
    for k in 0..a.triggers.len() {
        let name = format!("captures/capture_{k:05}.sqtr");
        assert_eq!(read(&tmp.path().join("sparse").join(&name)), read(&tmp.path().join("dense").join(&name)));
    }
}

#[test]
fn stored_captures_reanalyse_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short(5);
    let run_dir = tmp.path().join("run");
    run_campaign_to_dir(&cfg, &run_dir).unwrap();
    let events = analyze_dir(&run_dir.join("captures"), &cfg.analysis, &cfg.classifier, Some(&cfg.schedule)).unwrap();
    let again = tmp.path().join("again");
    write_analysis(&events, &again).unwrap();
    for f in ["features.csv", "classified.csv"] {
        assert_eq!(read(&run_dir.join(f)), read(&again.join(f)), "{f}");
    }
}

#[test]
fn presets_load_and_validate() {
    for (name, _) in PRESETS {
        let cfg = CampaignConfig::preset(name).unwrap();
        cfg.validate().unwrap();
        let back = CampaignConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg, "{name}");
    }
}

#[test]
fn shipped_transport_preset_is_the_default() {
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets/transport.toml")).unwrap();
    assert_eq!(TransportConfig::from_toml(&text).unwrap(), TransportConfig::default());
}

#[test]
fn plots_follow_the_report() {
    let mut cfg = short(8);
    cfg.acquisition.write_captures = false;
    let run = run_campaign(&cfg, None).unwrap();
    let report = &run.report;
    let plots = render_plots(report);
    let svg = |n: &str| plots.iter().find(|p| p.0 == n).unwrap().1.clone();
    let radiation = report.events.iter().filter(|e| e.class.is_radiation()).count();
    assert!(radiation > 0);
    assert_eq!(svg("scatter.svg").matches("<circle").count(), radiation);
    let mix = report.mix.as_ref().unwrap();
    assert!(svg("mix.svg").contains(&format!("{:.1}%", mix.peak_pct)));

    let json = report.to_json().unwrap();
    assert_eq!(&CampaignReport::from_json(&json).unwrap(), report);
}

#[test]
fn empty_campaign_still_plots() {
    let mut cfg = short(1);
    cfg.templates.cross_section.neutron_cm2 = 0.0;
    cfg.templates.spurious.clear();
    cfg.acquisition.write_captures = false;
    let run = run_campaign(&cfg, None).unwrap();
    assert!(run.triggers.is_empty());
    let plots = render_plots(&run.report);
    assert_eq!(plots.len(), 4);
    for (name, svg) in plots {
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"), "{name}");
        assert_eq!(svg.matches("<circle").count(), 0, "{name}");
    }
}

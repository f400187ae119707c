use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use squid_bench::acquisition::ScanMode;
use squid_bench::campaign::{
    analyze_dir, campaign_statistics, read_radiation_times, run_campaign_to_dir, write_analysis, write_report_outputs,
    CampaignConfig, PRESETS,
};
use squid_bench::device::write_trace_file;
use squid_bench::injection::sample_arrivals;
use squid_bench::plot;
use squid_bench::report::{CampaignReport, StatisticsSummary};
use squid_bench::signal::SignalSource;
use squid_bench::statistics::write_curve_csv;
use squid_bench::transport::{compare_species, run_transport, Particle, TransportConfig, TransportTally};
use squid_bench::units::MILLISECOND;
use squid_bench::TOOL_VERSION;

/// Environment variable naming the default config file.
const CONFIG_ENV: &str = "SQUID_BENCH_CONFIG";

#[derive(Parser)]
#[command(name = "squid-bench", version, about = "Simulated SQUID radiation-test bench")]
struct Cli {
    /// Campaign (or transport) config file.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Shipped campaign preset: nile-e1, chipir-e2 or calliope-e3.
    #[arg(long, global = true, conflicts_with = "config")]
    preset: Option<String>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a stretch of the campaign traces, with injected events, to a trace file.
    Synth(SynthArgs),
    /// Run a full campaign: injection, acquisition, analysis, classification, statistics.
    Campaign(CampaignArgs),
    /// Re-analyse a directory of stored captures.
    Analyze {
        captures: PathBuf,
    },
    /// Cross section from a classified-events CSV and the configured schedule.
    Xsec {
        #[arg(long)]
        events: PathBuf,
    },
    /// Phonon transport Monte Carlo.
    Transport(TransportArgs),
    /// Summary and plots from a campaign run directory.
    Report {
        run_dir: PathBuf,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0.0)]
    start_s: f64,
    #[arg(long, default_value_t = 2.0)]
    duration_ms: f64,
    /// Leave out the injected events.
    #[arg(long)]
    no_events: bool,
}

#[derive(Args)]
struct CampaignArgs {
    #[arg(long)]
    threshold_mv: Option<f64>,
    #[arg(long)]
    dead_time_s: Option<f64>,
    #[arg(long)]
    window_pre_ms: Option<f64>,
    #[arg(long)]
    window_post_ms: Option<f64>,
    /// Render and scan every sample.
    #[arg(long, conflicts_with = "sparse")]
    dense: bool,
    /// Render only candidate regions (default).
    #[arg(long)]
    sparse: bool,
    /// Skip writing capture files.
    #[arg(long)]
    no_captures: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpeciesArg {
    Neutron,
    Gamma,
    Both,
}

#[derive(Args)]
struct TransportArgs {
    #[arg(long, value_enum, default_value_t = SpeciesArg::Both)]
    species: SpeciesArg,
    #[arg(long, default_value_t = 100_000)]
    count: u64,
}

fn campaign_config(cli: &Cli) -> anyhow::Result<CampaignConfig> {
    let mut cfg = match (&cli.preset, &cli.config) {
        (Some(name), _) => CampaignConfig::preset(name)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            CampaignConfig::from_toml(&text)?
        }
        (None, None) => CampaignConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn transport_config(cli: &Cli) -> anyhow::Result<TransportConfig> {
    if let Some(name) = &cli.preset {
        return Ok(CampaignConfig::preset(name)?.transport);
    }
    let Some(path) = &cli.config else {
        return Ok(TransportConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match TransportConfig::from_toml(&text) {
        Ok(c) => Ok(c),
        Err(e) => match CampaignConfig::from_toml(&text) {
            Ok(c) => Ok(c.transport),
            Err(_) => Err(e.into()),
        },
    }
}

fn out_dir(cli: &Cli, default: &Path) -> anyhow::Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| default.to_path_buf());
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct SynthMeta<'a> {
    tool_version: &'a str,
    start_s: f64,
    samples: usize,
    events_injected: bool,
    config: &'a CampaignConfig,
}

fn synth(cli: &Cli, args: &SynthArgs) -> anyhow::Result<()> {
    let cfg = campaign_config(cli)?;
    let dir = out_dir(cli, Path::new("out"))?;
    let span = cfg.span_samples()?;
    let clock = cfg.clock;
    let start = (args.start_s / clock.dt_s()).round() as i64;
    let len = clock.samples_in(args.duration_ms * MILLISECOND)?;
    if start < 0 || start >= span {
        bail!("--start-s lies outside the campaign span");
    }
    let plan = sample_arrivals(&cfg.schedule, &cfg.templates, cfg.trigger.threshold_mv, cfg.seed)?;
    let mut source = SignalSource::new(&cfg.device, &cfg.drive, clock, span, cfg.seed)?;
    if !args.no_events {
        source = source.with_plan(&plan, &cfg.templates)?;
    }
    if let Some(q) = cfg.acquisition.quantization {
        source = source.with_quantization(q)?;
    }
    let pair = source.channels(start, len)?;
    write_trace_file(&dir.join("trace.sqtr"), &pair, cfg.device.readout_gain)?;
    plan.write_csv(std::fs::File::create(dir.join("plan.csv"))?)?;
    let mut resolved = cfg.clone();
    resolved.output_dir = None;
    write_json(
        &dir.join("trace.json"),
        &SynthMeta {
            tool_version: TOOL_VERSION,
            start_s: clock.time_of(start),
            samples: len,
            events_injected: !args.no_events,
            config: &resolved,
        },
    )?;
    println!("wrote {} samples and {} plan entries to {}", len, plan.entries.len(), dir.display());
    Ok(())
}

fn campaign(cli: &Cli, args: &CampaignArgs) -> anyhow::Result<()> {
    let mut cfg = campaign_config(cli)?;
    if let Some(v) = args.threshold_mv {
        cfg.trigger.threshold_mv = v;
    }
    if let Some(v) = args.dead_time_s {
        cfg.trigger.dead_time_s = v;
    }
    if let Some(v) = args.window_pre_ms {
        cfg.window.pre_s = v * MILLISECOND;
    }
    if let Some(v) = args.window_post_ms {
        cfg.window.post_s = v * MILLISECOND;
    }
    if args.dense {
        cfg.acquisition.scan_mode = ScanMode::Dense;
    } else if args.sparse {
        cfg.acquisition.scan_mode = ScanMode::Sparse;
    }
    if args.no_captures {
        cfg.acquisition.write_captures = false;
    }
    let dir = out_dir(cli, cfg.output_dir.clone().as_deref().unwrap_or(Path::new("out")))?;
    cfg.validate()?;
    let run = run_campaign_to_dir(&cfg, &dir)?;
    print!("{}", squid_bench::report::summary_text(&run.report));
    Ok(())
}

fn analyze(cli: &Cli, captures: &Path) -> anyhow::Result<()> {
    let cfg = campaign_config(cli)?;
    let dir = out_dir(cli, captures)?;
    let schedule = (cli.config.is_some() || cli.preset.is_some()).then_some(&cfg.schedule);
    let events = analyze_dir(captures, &cfg.analysis, &cfg.classifier, schedule)?;
    write_analysis(&events, &dir)?;
    println!("analysed {} captures into {}", events.len(), dir.display());
    Ok(())
}

#[derive(Serialize)]
struct XsecOutput<'a> {
    tool_version: &'a str,
    events_file: String,
    statistics: &'a StatisticsSummary,
    config: &'a CampaignConfig,
}

fn xsec(cli: &Cli, events: &Path) -> anyhow::Result<()> {
    let cfg = campaign_config(cli)?;
    let dir = out_dir(cli, Path::new("out"))?;
    let times = read_radiation_times(events)?;
    let (stats, curve) = campaign_statistics(&cfg, &times)?;
    write_curve_csv(&curve, std::fs::File::create(dir.join("cross_section.csv"))?)?;
    let svg = plot::cross_section_svg(&format!("{}: cross section", cfg.name), &curve, stats.reference_cross_section_cm2);
    std::fs::write(dir.join("cross_section.svg"), svg)?;
    let mut resolved = cfg.clone();
    resolved.output_dir = None;
    write_json(
        &dir.join("xsec.json"),
        &XsecOutput {
            tool_version: TOOL_VERSION,
            events_file: events.display().to_string(),
            statistics: &stats,
            config: &resolved,
        },
    )?;
    match stats.cross_section {
        Some(x) => println!(
            "{} events, fluence {:.4e} cm^-2, sigma {:.4e} cm^2 [{:.4e}, {:.4e}]",
            x.n_events, x.fluence_cm2, x.sigma_cm2, x.ci_low_cm2, x.ci_high_cm2
        ),
        None => println!("{} events, no fluence", times.len()),
    }
    Ok(())
}

#[derive(Serialize)]
struct TallyOutput<'a> {
    tool_version: &'a str,
    seed: u64,
    count: u64,
    config: &'a TransportConfig,
    tally: &'a TransportTally,
    ledger_residual: f64,
}

fn transport(cli: &Cli, args: &TransportArgs) -> anyhow::Result<()> {
    let cfg = transport_config(cli)?;
    let seed = cli.seed.unwrap_or(0);
    let dir = out_dir(cli, Path::new("out"))?;
    let species: &[Particle] = match args.species {
        SpeciesArg::Neutron => &[Particle::Neutron],
        SpeciesArg::Gamma => &[Particle::Gamma],
        SpeciesArg::Both => &[Particle::Neutron, Particle::Gamma],
    };
    let mut tallies = Vec::new();
    for &p in species {
        let tally = run_transport(p, args.count, &cfg, seed)?;
        write_json(
            &dir.join(format!("tally_{}.json", p.as_str())),
            &TallyOutput {
                tool_version: TOOL_VERSION,
                seed,
                count: args.count,
                config: &cfg,
                tally: &tally,
                ledger_residual: tally.ledger_residual(),
            },
        )?;
        tally.write_histogram_csv(std::fs::File::create(dir.join(format!("histogram_{}.csv", p.as_str())))?)?;
        println!(
            "{}: {} primaries, {} interacting, substrate {:.6e} MeV, film phonons {:.6e}",
            p.as_str(),
            tally.primaries,
            tally.interacting,
            tally.substrate_energy_mev,
            tally.film_phonons
        );
        tallies.push(tally);
    }
    let spectra: Vec<(&str, _, _)> = tallies
        .iter()
        .map(|t| (t.particle.as_str(), &t.deposit_histogram, &t.film_deposit_histogram))
        .collect();
    std::fs::write(dir.join("deposition.svg"), plot::deposition_svg("energy deposition", &spectra))?;
    if let [n, g] = &tallies[..] {
        let report = compare_species(n, g, cfg.bootstrap_resamples, 0.95, seed)?;
        write_json(&dir.join("ratios.json"), &report)?;
        for r in report.ratios() {
            let v = r.value.map_or("n/a".to_string(), |v| format!("{v:.3}"));
            println!("{:<22} {v:>8}   reference {:.2}", r.name, r.reference);
        }
    }
    Ok(())
}

fn report(cli: &Cli, run_dir: &Path) -> anyhow::Result<()> {
    let path = run_dir.join("report.json");
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let report = CampaignReport::from_json(&text)?;
    let dir = out_dir(cli, run_dir)?;
    write_report_outputs(&report, &dir)?;
    print!("{}", squid_bench::report::summary_text(&report));
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(name) = &cli.preset {
        if !PRESETS.iter().any(|(n, _)| n == name) {
            let names: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
            bail!(squid_bench::Error::Config(format!(
                "unknown preset `{name}`; available: {}",
                names.join(", ")
            )));
        }
    }
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Campaign(a) => campaign(cli, a),
        Command::Analyze { captures } => analyze(cli, captures),
        Command::Xsec { events } => xsec(cli, events),
        Command::Transport(a) => transport(cli, a),
        Command::Report { run_dir } => report(cli, run_dir),
    }
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    e.chain()
        .find_map(|c| c.downcast_ref::<squid_bench::Error>().map(|e| e.kind()))
        .or_else(|| e.chain().find_map(|c| c.downcast_ref::<std::io::Error>().map(|_| "io")))
        .unwrap_or("error")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = error_kind(&e);
            let msg = serde_json::json!({
                "error": {
                    "kind": kind,
                    "message": format!("{e:#}"),
                }
            });
            eprintln!("{msg}");
            match kind {
                "config" | "invalid_parameter" => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

//! Fixtures shared by the benchmarks.

use squid_bench::acquisition::{capture_from_source, CaptureContext, CaptureWindow, EventCapture, TriggerConfig};
use squid_bench::device::{DeviceParams, DriveConfig, SampleClock};
use squid_bench::injection::{fixed_plan, EventKind, InjectionConfig};
use squid_bench::signal::SignalSource;

/// A source holding one burst at 1 ms and its capture window.
pub fn burst_source() -> (SignalSource, i64) {
    let cfg = InjectionConfig::default();
    let plan = fixed_plan(&[(EventKind::Burst, 1)], 1e-3, &cfg, 30.0, 7).expect("plan");
    let clock = SampleClock::default();
    let span = clock.samples_in(4e-3).expect("span") as i64;
    let src = SignalSource::new(&DeviceParams::default(), &DriveConfig::default(), clock, span, 7)
        .and_then(|s| s.with_plan(&plan, &cfg))
        .expect("source");
    let trigger = (1e-3 / clock.dt_s()) as i64;
    (src, trigger)
}

pub fn burst_capture() -> EventCapture {
    let (src, trigger) = burst_source();
    capture_from_source(
        &src,
        trigger,
        &CaptureWindow::default(),
        &TriggerConfig::default(),
        &CaptureContext::default(),
        0,
    )
    .expect("capture")
}

//! Minimal SVG figures. Output is plain text with fixed number formatting, so
//! equal inputs give byte-identical files.

use std::fmt::Write as _;

use crate::statistics::CrossSectionEstimate;
use crate::transport::LogHistogram;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

const PALETTE: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#7f7f7f"];

#[derive(Debug, Clone, Copy)]
enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    scale: Scale,
}

impl Axis {
    fn linear(lo: f64, hi: f64) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        Self { lo, hi, scale: Scale::Linear }
    }

    fn log(lo: f64, hi: f64) -> Self {
        let lo = lo.max(f64::MIN_POSITIVE);
        let hi = if hi > lo { hi } else { lo * 10.0 };
        Self { lo, hi, scale: Scale::Log }
    }

    /// Position in [0, 1].
    fn frac(&self, v: f64) -> f64 {
        match self.scale {
            Scale::Linear => (v - self.lo) / (self.hi - self.lo),
            Scale::Log => (v.max(self.lo * 1e-3).ln() - self.lo.ln()) / (self.hi.ln() - self.lo.ln()),
        }
    }

    fn ticks(&self) -> Vec<f64> {
        match self.scale {
            Scale::Linear => {
                let span = self.hi - self.lo;
                let raw = span / 5.0;
                let mag = 10f64.powf(raw.log10().floor());
                let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
                let mut t = (self.lo / step).ceil() * step;
                let mut out = Vec::new();
                while t <= self.hi + 1e-9 * span {
                    out.push(t);
                    t += step;
                }
                out
            }
            Scale::Log => {
                let mut out = Vec::new();
                let mut e = self.lo.log10().ceil() as i32;
                while 10f64.powi(e) <= self.hi * (1.0 + 1e-12) {
                    out.push(10f64.powi(e));
                    e += 1;
                }
                out
            }
        }
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Canvas {
    out: String,
    x: Axis,
    y: Axis,
    // plot area
    px: f64,
    py: f64,
    pw: f64,
    ph: f64,
}

impl Canvas {
    fn new(title: &str, x: Axis, y: Axis, xlabel: &str, ylabel: &str) -> Self {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(out, r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, esc(title));
        let mut c = Self {
            out,
            x,
            y,
            px: LEFT,
            py: TOP,
            pw: W - LEFT - RIGHT,
            ph: H - TOP - BOTTOM,
        };
        c.axes(xlabel, ylabel);
        c
    }

    fn sx(&self, v: f64) -> f64 {
        self.px + self.x.frac(v) * self.pw
    }

    fn sy(&self, v: f64) -> f64 {
        self.py + (1.0 - self.y.frac(v)) * self.ph
    }

    fn axes(&mut self, xlabel: &str, ylabel: &str) {
        let (x0, y0, x1, y1) = (self.px, self.py + self.ph, self.px + self.pw, self.py);
        let _ = writeln!(self.out, r#"<rect x="{x0:.1}" y="{y1:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#, self.pw, self.ph);
        for t in self.x.ticks() {
            let x = self.sx(t);
            let _ = writeln!(
                self.out,
                r#"<line x1="{x:.1}" y1="{y0:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                y0 + 4.0,
                y0 + 16.0,
                fmt_tick(t)
            );
        }
        for t in self.y.ticks() {
            let y = self.sy(t);
            let _ = writeln!(
                self.out,
                r#"<line x1="{:.1}" y1="{y:.1}" x2="{x0:.1}" y2="{y:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                x0 - 4.0,
                x0 - 6.0,
                y + 4.0,
                fmt_tick(t)
            );
        }
        let _ = writeln!(self.out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 12.0, esc(xlabel));
        let _ = writeln!(
            self.out,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            esc(ylabel)
        );
    }

    fn rect(&mut self, x0: f64, x1: f64, y0: f64, y1: f64, fill: &str, opacity: f64) {
        let (a, b) = (self.sx(x0), self.sx(x1));
        let (c, d) = (self.sy(y1), self.sy(y0));
        let _ = writeln!(
            self.out,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}" fill-opacity="{opacity}"/>"#,
            a.min(b),
            c.min(d),
            (b - a).abs(),
            (d - c).abs()
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &str) {
        if pts.is_empty() {
            return;
        }
        let s: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", self.sx(x), self.sy(y))).collect();
        let _ = writeln!(self.out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, s.join(" "));
    }

    fn polygon(&mut self, pts: &[(f64, f64)], color: &str, opacity: f64) {
        if pts.len() < 3 {
            return;
        }
        let s: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", self.sx(x), self.sy(y))).collect();
        let _ = writeln!(self.out, r#"<polygon points="{}" fill="{color}" fill-opacity="{opacity}" stroke="none"/>"#, s.join(" "));
    }

    fn point(&mut self, x: f64, y: f64, color: &str, class: &str) {
        let _ = writeln!(
            self.out,
            r#"<circle class="{class}" cx="{:.2}" cy="{:.2}" r="3" fill="{color}" fill-opacity="0.7"/>"#,
            self.sx(x),
            self.sy(y)
        );
    }

    fn legend(&mut self, entries: &[(&str, &str)]) {
        for (k, (label, color)) in entries.iter().enumerate() {
            let y = self.py + 14.0 + 16.0 * k as f64;
            let x = self.px + self.pw - 150.0;
            let _ = writeln!(
                self.out,
                r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{color}"/><text x="{:.1}" y="{y:.1}">{}</text>"#,
                y - 9.0,
                x + 14.0,
                esc(label)
            );
        }
    }

    fn text(&mut self, x: f64, y: f64, s: &str, anchor: &str) {
        let _ = writeln!(self.out, r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}">{}</text>"#, esc(s));
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

/// One labelled series of event times, in hours.
pub struct TimelineSeries<'a> {
    pub label: &'a str,
    pub times_h: &'a [f64],
}

/// Event counts per time bin with beam-on periods shaded.
pub fn timeline_svg(title: &str, span_h: f64, beam_on_h: &[(f64, f64)], series: &[TimelineSeries<'_>], bins: usize) -> String {
    let bins = bins.max(1);
    let width = span_h / bins as f64;
    let counts: Vec<Vec<u64>> = series
        .iter()
        .map(|s| {
            let mut c = vec![0u64; bins];
            for &t in s.times_h {
                let k = ((t / width) as usize).min(bins - 1);
                c[k] += 1;
            }
            c
        })
        .collect();
    let ymax = counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    let mut c = Canvas::new(title, Axis::linear(0.0, span_h), Axis::linear(0.0, ymax * 1.1), "time (h)", "events per bin");
    for &(a, b) in beam_on_h {
        c.rect(a, b, 0.0, ymax * 1.1, "#ffd700", 0.25);
    }
    for (k, cs) in counts.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut pts = Vec::with_capacity(2 * bins);
        for (i, &n) in cs.iter().enumerate() {
            pts.push((i as f64 * width, n as f64));
            pts.push(((i + 1) as f64 * width, n as f64));
        }
        c.polyline(&pts, color);
    }
    let mut legend: Vec<(&str, &str)> = series.iter().enumerate().map(|(k, s)| (s.label, PALETTE[k % PALETTE.len()])).collect();
    legend.push(("beam on", "#ffd700"));
    c.legend(&legend);
    c.finish()
}

/// Cross section against fluence with the confidence band shaded.
pub fn cross_section_svg(title: &str, curve: &[CrossSectionEstimate], reference_cm2: Option<f64>) -> String {
    let xmax = curve.iter().map(|e| e.fluence_cm2).fold(0.0, f64::max);
    let ymax = curve.iter().map(|e| e.ci_high_cm2).fold(reference_cm2.unwrap_or(0.0), f64::max);
    // the first estimates have enormous intervals; cap the view
    let last = curve.last().map(|e| e.ci_high_cm2 * 3.0).unwrap_or(1.0);
    let ytop = ymax.min(last).max(f64::MIN_POSITIVE);
    let mut c = Canvas::new(title, Axis::linear(0.0, xmax.max(1.0)), Axis::linear(0.0, ytop), "fluence (cm^-2)", "cross section (cm^2)");
    let mut band: Vec<(f64, f64)> = curve.iter().map(|e| (e.fluence_cm2, e.ci_high_cm2.min(ytop))).collect();
    band.extend(curve.iter().rev().map(|e| (e.fluence_cm2, e.ci_low_cm2.min(ytop))));
    c.polygon(&band, PALETTE[0], 0.25);
    let line: Vec<(f64, f64)> = curve.iter().map(|e| (e.fluence_cm2, e.sigma_cm2.min(ytop))).collect();
    c.polyline(&line, PALETTE[0]);
    if let Some(r) = reference_cm2 {
        c.polyline(&[(0.0, r), (xmax.max(1.0), r)], PALETTE[4]);
    }
    c.legend(&[("estimate", PALETTE[0]), ("reference", PALETTE[4])]);
    c.finish()
}

/// One point of the amplitude/duration scatter.
pub struct ScatterPoint<'a> {
    pub duration_us: f64,
    pub amplitude_mv: f64,
    pub class: &'a str,
}

/// Amplitude against duration on a log duration axis. Every point is one
/// `<circle>` element carrying its class name.
pub fn scatter_svg(title: &str, points: &[ScatterPoint<'_>]) -> String {
    let dmin = points.iter().map(|p| p.duration_us).filter(|d| *d > 0.0).fold(f64::INFINITY, f64::min);
    let dmax = points.iter().map(|p| p.duration_us).fold(0.0, f64::max);
    let amax = points.iter().map(|p| p.amplitude_mv).fold(0.0, f64::max);
    let (lo, hi) = if dmin.is_finite() { (dmin / 2.0, dmax * 2.0) } else { (0.1, 1000.0) };
    let mut c = Canvas::new(title, Axis::log(lo, hi), Axis::linear(0.0, (amax * 1.1).max(1.0)), "duration (us)", "max amplitude (mV)");
    let mut classes: Vec<&str> = points.iter().map(|p| p.class).collect();
    classes.sort_unstable();
    classes.dedup();
    for p in points {
        let k = classes.binary_search(&p.class).unwrap_or(0);
        c.point(p.duration_us.max(lo), p.amplitude_mv, PALETTE[k % PALETTE.len()], p.class);
    }
    let legend: Vec<(&str, &str)> = classes.iter().enumerate().map(|(k, s)| (*s, PALETTE[k % PALETTE.len()])).collect();
    c.legend(&legend);
    c.finish()
}

/// One bar group: percentages of peak- and burst-type radiation events.
pub struct MixBar<'a> {
    pub label: &'a str,
    pub peak_pct: f64,
    pub burst_pct: f64,
}

/// Stacked percentage bars. The percentages are printed as given.
pub fn mix_svg(title: &str, bars: &[MixBar<'_>]) -> String {
    let n = bars.len().max(1) as f64;
    let mut c = Canvas::new(title, Axis::linear(0.0, n), Axis::linear(0.0, 100.0), "", "percentage of radiation events");
    for (k, b) in bars.iter().enumerate() {
        let x0 = k as f64 + 0.2;
        let x1 = k as f64 + 0.8;
        c.rect(x0, x1, 0.0, b.peak_pct, PALETTE[0], 0.9);
        c.rect(x0, x1, b.peak_pct, b.peak_pct + b.burst_pct, PALETTE[1], 0.9);
        let xm = c.sx(k as f64 + 0.5);
        let ym = c.sy(b.peak_pct / 2.0);
        c.text(xm, ym, &format!("{:.1}%", b.peak_pct), "middle");
        let yb = c.sy(100.0) - 4.0;
        c.text(xm, yb, b.label, "middle");
    }
    c.legend(&[("peak", PALETTE[0]), ("burst", PALETTE[1])]);
    c.finish()
}

fn histogram_steps(h: &LogHistogram, floor: f64) -> Vec<(f64, f64)> {
    let e = h.edges();
    let mut pts = Vec::with_capacity(2 * h.counts.len());
    for (k, &n) in h.counts.iter().enumerate() {
        let y = (n as f64).max(floor);
        pts.push((e[k], y));
        pts.push((e[k + 1], y));
    }
    pts
}

/// Log-log deposition spectra, with an inset of the deposits that led to
/// film absorption.
pub fn deposition_svg(title: &str, spectra: &[(&str, &LogHistogram, &LogHistogram)]) -> String {
    let xmin = spectra.iter().map(|s| s.1.min).fold(f64::INFINITY, f64::min);
    let xmax = spectra.iter().map(|s| s.1.max).fold(0.0, f64::max);
    let ymax = spectra.iter().flat_map(|s| s.1.counts.iter()).copied().max().unwrap_or(1).max(1) as f64;
    let (xmin, xmax) = if xmin.is_finite() { (xmin, xmax) } else { (1e-3, 10.0) };
    let mut c = Canvas::new(title, Axis::log(xmin, xmax), Axis::log(0.5, ymax * 2.0), "deposited energy (MeV)", "counts");
    for (k, (_, h, _)) in spectra.iter().enumerate() {
        c.polyline(&histogram_steps(h, 0.5), PALETTE[k % PALETTE.len()]);
    }
    let legend: Vec<(&str, &str)> = spectra.iter().enumerate().map(|(k, s)| (s.0, PALETTE[k % PALETTE.len()])).collect();
    c.legend(&legend);
    // inset in the lower left corner
    let fmax = spectra.iter().flat_map(|s| s.2.counts.iter()).copied().max().unwrap_or(1).max(1) as f64;
    let mut inset = Canvas {
        out: String::new(),
        x: Axis::log(xmin, xmax),
        y: Axis::log(0.5, fmax * 2.0),
        px: LEFT + 40.0,
        py: TOP + (H - TOP - BOTTOM) * 0.55,
        pw: (W - LEFT - RIGHT) * 0.35,
        ph: (H - TOP - BOTTOM) * 0.35,
    };
    let _ = writeln!(
        inset.out,
        r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="white" stroke="black"/>"#,
        inset.px, inset.py, inset.pw, inset.ph
    );
    for (k, (_, _, f)) in spectra.iter().enumerate() {
        inset.polyline(&histogram_steps(f, 0.5), PALETTE[k % PALETTE.len()]);
    }
    let (ix, iy) = (inset.px + 4.0, inset.py + 12.0);
    inset.text(ix, iy, "film-absorbing deposits", "start");
    c.out.push_str(&inset.out);
    c.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_inputs_render() {
        for s in [
            timeline_svg("t", 4.5, &[], &[], 10),
            cross_section_svg("x", &[], None),
            scatter_svg("s", &[]),
            mix_svg("m", &[]),
            deposition_svg("d", &[]),
        ] {
            assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        }
    }

    #[test]
    fn scatter_has_one_circle_per_point() {
        let pts: Vec<ScatterPoint> = (0..17)
            .map(|k| ScatterPoint {
                duration_us: 1.0 + k as f64 * 30.0,
                amplitude_mv: 40.0 + k as f64,
                class: if k % 2 == 0 { "radiation_burst" } else { "radiation_peak" },
            })
            .collect();
        let s = scatter_svg("s", &pts);
        assert_eq!(s.matches("<circle").count(), 17);
    }

    #[test]
    fn mix_prints_given_percentages() {
        let s = mix_svg("m", &[MixBar { label: "E1", peak_pct: 9.5, burst_pct: 90.5 }]);
        assert!(s.contains("9.5%"));
    }

    #[test]
    fn ticks_cover_range() {
        let a = Axis::linear(0.0, 4.5);
        assert_eq!(a.ticks(), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let l = Axis::log(1e-3, 20.0);
        assert_eq!(l.ticks().len(), 5);
    }
}

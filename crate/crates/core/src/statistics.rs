//! Fluence accounting, cross sections with exact Poisson intervals, and the
//! cross-section-versus-fluence curve.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur};

use crate::error::{Error, Result};
use crate::injection::{BeamSchedule, Species};
use crate::rng::{purpose, stream};

/// Which intervals of a schedule contribute to a ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeciesFilter {
    Neutrons,
    Gammas,
    All,
}

impl SpeciesFilter {
    pub fn admits(self, s: Species) -> bool {
        match self {
            SpeciesFilter::Neutrons => s.is_neutron(),
            SpeciesFilter::Gammas => !s.is_neutron(),
            SpeciesFilter::All => true,
        }
    }
}

/// How an interval's flux is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxConvention {
    /// The facility's quoted flux (above 10 MeV for atmospheric spectra).
    #[default]
    Facility,
    /// The whole spectrum, where an interval provides it.
    FullSpectrum,
}

/// Cumulative fluence, piecewise linear in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluenceLedger {
    /// `(start, end, flux)` of every contributing interval.
    segments: Vec<(f64, f64, f64)>,
    span_s: f64,
}

impl FluenceLedger {
    pub fn new(schedule: &BeamSchedule, filter: SpeciesFilter, convention: FluxConvention) -> Result<Self> {
        schedule.validate()?;
        let mut segments: Vec<(f64, f64, f64)> = schedule
            .intervals
            .iter()
            .filter(|iv| filter.admits(iv.species))
            .map(|iv| {
                let flux = match convention {
                    FluxConvention::Facility => iv.flux,
                    FluxConvention::FullSpectrum => iv.full_spectrum_flux.unwrap_or(iv.flux),
                };
                (iv.start_s, iv.end_s, flux)
            })
            .collect();
        segments.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self {
            segments,
            span_s: schedule.span_s,
        })
    }

    pub fn span(&self) -> f64 {
        self.span_s
    }

    /// Fluence delivered in `[0, t]`, particles per cm^2.
    pub fn at(&self, t: f64) -> f64 {
        self.segments
            .iter()
            .take_while(|s| s.0 < t)
            .map(|&(a, b, flux)| flux * (t.min(b) - a))
            .sum()
    }

    pub fn total(&self) -> f64 {
        self.at(self.span_s) + 0.0
    }
}

/// Fluence delivered by `schedule` up to `t` for the selected species.
pub fn fluence(schedule: &BeamSchedule, t: f64, filter: SpeciesFilter) -> Result<f64> {
    if !(0.0..=schedule.span_s).contains(&t) {
        return Err(Error::invalid("t", format!("{t} s outside [0, {}]", schedule.span_s)));
    }
    Ok(FluenceLedger::new(schedule, filter, FluxConvention::Facility)?.at(t))
}

fn bisect(mut lo: f64, mut hi: f64, increasing: bool, f: impl Fn(f64) -> f64) -> f64 {
    // root of f, which is monotone on [lo, hi] and changes sign there
    while hi - lo > 1e-9 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if (f(mid) < 0.0) == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact (Garwood) two-sided interval for a Poisson mean given `n` counts.
pub fn poisson_ci(n: u64, confidence: f64) -> Result<(f64, f64)> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::invalid("confidence", "must lie in (0, 1)"));
    }
    let half = 0.5 * (1.0 - confidence);
    let nf = n as f64;
    let mut hi = (nf + 1.0).max(1.0);
    // P(X <= n | lambda) falls with lambda; widen until it drops below half
    while gamma_ur(nf + 1.0, hi) > half {
        hi *= 2.0;
    }
    let upper = bisect(0.0, hi, false, |l| gamma_ur(nf + 1.0, l) - half);
    let lower = if n == 0 {
        0.0
    } else {
        // P(X >= n | lambda) rises with lambda
        bisect(0.0, upper, true, |l| gamma_lr(nf, l) - half)
    };
    Ok((lower, upper))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossSectionEstimate {
    pub sigma_cm2: f64,
    pub ci_low_cm2: f64,
    pub ci_high_cm2: f64,
    /// Half the interval width; the upper and lower arms differ for small counts.
    pub ci_half_width_cm2: f64,
    /// `sqrt(n) / fluence`.
    pub std_error_cm2: f64,
    pub n_events: u64,
    pub fluence_cm2: f64,
}

pub fn cross_section(n: u64, fluence: f64, confidence: f64) -> Result<CrossSectionEstimate> {
    if !(fluence > 0.0 && fluence.is_finite()) {
        return Err(Error::invalid("fluence", "must be positive"));
    }
    let (lo, hi) = poisson_ci(n, confidence)?;
    Ok(CrossSectionEstimate {
        sigma_cm2: n as f64 / fluence,
        ci_low_cm2: lo / fluence,
        ci_high_cm2: hi / fluence,
        ci_half_width_cm2: 0.5 * (hi - lo) / fluence,
        std_error_cm2: (n as f64).sqrt() / fluence,
        n_events: n,
        fluence_cm2: fluence,
    })
}

/// Estimate after each event: `sigma_k = k / fluence(t_k)`. Events before any
/// fluence has accumulated are skipped.
pub fn cross_section_curve(
    event_times: &[f64],
    ledger: &FluenceLedger,
    confidence: f64,
) -> Result<Vec<CrossSectionEstimate>> {
    if event_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("event_times", "must be sorted"));
    }
    let mut out = Vec::with_capacity(event_times.len());
    for (k, &t) in event_times.iter().enumerate() {
        let phi = ledger.at(t);
        if phi <= 0.0 {
            log::warn!("event {} at {t} s precedes any fluence; skipped", k + 1);
            continue;
        }
        out.push(cross_section(k as u64 + 1, phi, confidence)?);
    }
    Ok(out)
}

/// Cross section counting gamma fluence as if it were neutron fluence.
pub fn gamma_inclusive_sigma(n_events: u64, fluence_neutron: f64, fluence_gamma: f64) -> Result<f64> {
    if !(fluence_neutron > 0.0) || !(fluence_gamma >= 0.0) {
        return Err(Error::invalid("fluence", "neutron fluence must be positive, gamma non-negative"));
    }
    Ok(n_events as f64 / (fluence_neutron + fluence_gamma))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatnessTest {
    /// OLS slope of sigma_k against fluence, cm^2 per (particle/cm^2).
    pub slope: f64,
    pub null_mean: f64,
    pub null_sd: f64,
    /// `(slope - null_mean) / null_sd`.
    pub t: f64,
    pub points: usize,
}

impl FlatnessTest {
    pub fn consistent_with_flat(&self) -> bool {
        self.t.abs() < 2.0
    }
}

fn curve_slope(fluences: &[f64], min_k: usize) -> Option<f64> {
    let pts: Vec<(f64, f64)> = fluences
        .iter()
        .enumerate()
        .skip(min_k.saturating_sub(1))
        .filter(|(_, &phi)| phi > 0.0)
        .map(|(k, &phi)| (phi, (k + 1) as f64 / phi))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Tests whether the cross-section curve is flat in fluence.
///
/// Successive curve points share all earlier events, so ordinary regression
/// errors do not apply. The slope is instead compared with its distribution
/// under a stationary process: given `n` events, their fluences are uniform
/// order statistics on `[0, total]`, which is simulated `trials` times.
/// Points with `k < min_k` are left out of every fit.
pub fn flatness_test(
    event_fluences: &[f64],
    total_fluence: f64,
    min_k: usize,
    trials: usize,
    seed: u64,
) -> Result<FlatnessTest> {
    if !(total_fluence > 0.0) {
        return Err(Error::invalid("total_fluence", "must be positive"));
    }
    if trials < 10 {
        return Err(Error::invalid("trials", "need at least 10"));
    }
    let slope = curve_slope(event_fluences, min_k)
        .ok_or_else(|| Error::Undefined("too few curve points for a slope".into()))?;
    let n = event_fluences.len();
    let mut rng = stream(seed, &[purpose::BOOTSTRAP]);
    let mut null = Vec::with_capacity(trials);
    let mut sim = vec![0.0; n];
    for _ in 0..trials {
        for x in sim.iter_mut() {
            *x = rng.random_range(0.0..total_fluence);
        }
        sim.sort_by(f64::total_cmp);
        if let Some(s) = curve_slope(&sim, min_k) {
            null.push(s);
        }
    }
    let m = null.len() as f64;
    let null_mean = null.iter().sum::<f64>() / m;
    let null_sd = (null.iter().map(|s| (s - null_mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
    Ok(FlatnessTest {
        slope,
        null_mean,
        null_sd,
        t: (slope - null_mean) / null_sd,
        points: n.saturating_sub(min_k.saturating_sub(1)),
    })
}

pub fn write_curve_csv<W: Write>(curve: &[CrossSectionEstimate], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["k", "fluence_cm2", "sigma_cm2", "ci_low_cm2", "ci_high_cm2"])?;
    for e in curve {
        out.write_record([
            e.n_events.to_string(),
            format!("{:.6e}", e.fluence_cm2),
            format!("{:.6e}", e.sigma_cm2),
            format!("{:.6e}", e.ci_low_cm2),
            format!("{:.6e}", e.ci_high_cm2),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::injection::BeamInterval;
    use crate::units::HOUR;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Poisson};

    /// Poisson CDF by direct summation of the pmf in log space.
    fn cdf_oracle(n: u64, lambda: f64) -> f64 {
        if lambda == 0.0 {
            return 1.0;
        }
        let mut log_fact = 0.0;
        let mut total = 0.0;
        for k in 0..=n {
            if k > 0 {
                log_fact += (k as f64).ln();
            }
            total += (k as f64 * lambda.ln() - lambda - log_fact).exp();
        }
        total.min(1.0)
    }

    fn oracle_ci(n: u64) -> (f64, f64) {
        let solve = |target: &dyn Fn(f64) -> f64| {
            let (mut lo, mut hi) = (0.0f64, 5000.0f64);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if target(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        // upper: P(X <= n) = 0.025, decreasing in lambda
        let upper = solve(&|l| cdf_oracle(n, l) - 0.025);
        // lower: P(X >= n) = 1 - P(X <= n-1) = 0.025
        let lower = if n == 0 { 0.0 } else { solve(&|l| cdf_oracle(n - 1, l) - 0.975) };
        (lower, upper)
    }

    #[test]
    fn ci_matches_series_oracle() {
        for n in [0u64, 1, 5, 10, 100, 1000] {
            let (lo, hi) = poisson_ci(n, 0.95).unwrap();
            let (olo, ohi) = oracle_ci(n);
            assert!((lo - olo).abs() < 1e-3 && (hi - ohi).abs() < 1e-3, "n={n}: ({lo},{hi}) vs ({olo},{ohi})");
        }
    }

    #[test]
    fn ci_reference_values() {
        let (lo, hi) = poisson_ci(0, 0.95).unwrap();
        assert_eq!(lo, 0.0);
        assert!((hi - 3.6889).abs() < 1e-3);
        let (lo, hi) = poisson_ci(100, 0.95).unwrap();
        assert!((lo - 81.36).abs() < 0.05 && (hi - 121.63).abs() < 0.05);
    }

    #[test]
    fn ci_rejects_bad_confidence() {
        assert!(poisson_ci(3, 1.0).is_err());
        assert!(poisson_ci(3, 0.0).is_err());
    }

    #[test]
    fn ci_is_monotone_and_contains_n() {
        let mut prev = (0.0, 0.0);
        for n in 0..300u64 {
            let (lo, hi) = poisson_ci(n, 0.95).unwrap();
            assert!(lo >= prev.0 && hi >= prev.1);
            if n >= 1 {
                assert!(lo <= n as f64 && n as f64 <= hi);
            }
            prev = (lo, hi);
        }
    }

    #[test]
    fn ci_coverage_at_twenty() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20);
        let pois = Poisson::new(20.0).unwrap();
        let table: Vec<(f64, f64)> = (0..100).map(|n| poisson_ci(n, 0.95).unwrap()).collect();
        let hits = (0..10_000)
            .filter(|_| {
                let n = pois.sample(&mut rng) as usize;
                table[n].0 <= 20.0 && 20.0 <= table[n].1
            })
            .count();
        let cov = hits as f64 / 1e4;
        assert!((0.94..=0.97).contains(&cov), "{cov}");
    }

    fn nile() -> BeamSchedule {
        BeamSchedule {
            span_s: 4.5 * HOUR,
            intervals: vec![BeamInterval::new(0.0, 4.5 * HOUR, Species::Neutron14Mev, 3.3e6)],
        }
    }

    #[test]
    fn nile_fluence() {
        let s = nile();
        assert_eq!(fluence(&s, 0.0, SpeciesFilter::Neutrons).unwrap(), 0.0);
        let phi = fluence(&s, s.span_s, SpeciesFilter::Neutrons).unwrap();
        assert!((phi / 5.3e10 - 1.0).abs() < 0.02, "{phi}");
        assert_eq!(fluence(&s, s.span_s, SpeciesFilter::Gammas).unwrap(), 0.0);
        assert!(fluence(&s, -1.0, SpeciesFilter::All).is_err());
    }

    #[test]
    fn ledger_matches_quadrature() {
        let s = BeamSchedule::alternating(5, 1234.5, 321.0, Species::Neutron14Mev, 2.7e6);
        let ledger = FluenceLedger::new(&s, SpeciesFilter::Neutrons, FluxConvention::Facility).unwrap();
        for &t in &[0.0, 100.0, 400.0, 2000.0, 5555.5, s.span_s] {
            // midpoint rule on a fine grid, exact for piecewise constant flux
            // up to the cells straddling an edge
            let steps = 2_000_000;
            let h = t / steps as f64;
            let mut q = 0.0;
            let mut comp = 0.0;
            for i in 0..steps {
                let x = (i as f64 + 0.5) * h;
                let y = if s.beam_on(x) { 2.7e6 * h } else { 0.0 } - comp;
                let tmp = q + y;
                comp = (tmp - q) - y;
                q = tmp;
            }
            let exact = ledger.at(t);
            let tol = 2.0 * 2.7e6 * h * 10.0 + 1e-12 * exact;
            assert!((q - exact).abs() <= tol, "t={t}: {q} vs {exact}");
        }
    }

    #[test]
    fn ledger_against_closed_form() {
        let s = BeamSchedule::alternating(3, 100.0, 50.0, Species::Neutron14Mev, 1e6);
        let ledger = FluenceLedger::new(&s, SpeciesFilter::Neutrons, FluxConvention::Facility).unwrap();
        // off 50, on 100, off 50, on 100, ...
        for (t, expected) in [(0.0, 0.0), (50.0, 0.0), (75.0, 25e6), (150.0, 100e6), (175.0, 100e6), (250.0, 150e6), (500.0, 300e6)] {
            let got = ledger.at(t);
            assert!((got - expected).abs() <= 1e-12 * expected.max(1.0), "{t}: {got}");
        }
        assert!((0..500).map(|i| ledger.at(i as f64)).collect::<Vec<_>>().windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn fluence_is_additive_over_concatenation() {
        let a = BeamSchedule::alternating(2, 100.0, 30.0, Species::Neutron14Mev, 1e6);
        let b = BeamSchedule::alternating(3, 70.0, 10.0, Species::Neutron14Mev, 2e6);
        let ab = a.concat(&b);
        let f = |s: &BeamSchedule| FluenceLedger::new(s, SpeciesFilter::All, FluxConvention::Facility).unwrap().total();
        assert!((f(&ab) - f(&a) - f(&b)).abs() <= 1e-12 * f(&ab));
    }

    #[test]
    fn full_spectrum_convention() {
        let mut iv = BeamInterval::new(0.0, 10.0, Species::NeutronAtmospheric, 1.9e6);
        iv.full_spectrum_flux = Some(5.4e6);
        let s = BeamSchedule {
            span_s: 10.0,
            intervals: vec![iv],
        };
        let fac = FluenceLedger::new(&s, SpeciesFilter::Neutrons, FluxConvention::Facility).unwrap();
        let full = FluenceLedger::new(&s, SpeciesFilter::Neutrons, FluxConvention::FullSpectrum).unwrap();
        assert_eq!(fac.total(), 1.9e7);
        assert_eq!(full.total(), 5.4e7);
    }

    #[test]
    fn gamma_inclusive_conjecture() {
        let phi_n = 5.3e10;
        let n = (2.0e-9 * phi_n) as u64;
        let only = gamma_inclusive_sigma(n, phi_n, 0.0).unwrap();
        assert_eq!(only, n as f64 / phi_n);
        // generator sigma divided by 1.07
        let s = 2.0e-9 * phi_n / (phi_n + 0.07 * phi_n);
        assert!((s / 1.87e-9 - 1.0).abs() < 0.005);
        assert!(gamma_inclusive_sigma(n, phi_n, 0.07 * phi_n).unwrap() < only);
    }

    #[test]
    fn curve_single_event_and_skip() {
        let s = BeamSchedule::alternating(1, 100.0, 10.0, Species::Neutron14Mev, 1e6);
        let ledger = FluenceLedger::new(&s, SpeciesFilter::Neutrons, FluxConvention::Facility).unwrap();
        let c = cross_section_curve(&[5.0, 60.0], &ledger, 0.95).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].n_events, 2);
        let c = cross_section_curve(&[60.0], &ledger, 0.95).unwrap();
        assert_eq!(c[0].sigma_cm2, 1.0 / 50e6);
        assert!(cross_section_curve(&[60.0, 20.0], &ledger, 0.95).is_err());
    }

    #[test]
    fn relative_ci_width_follows_root_k() {
        for k in [10u64, 20, 50, 100, 400] {
            let e = cross_section(k, 1e10, 0.95).unwrap();
            let rel = (e.ci_high_cm2 - e.ci_low_cm2) / e.sigma_cm2 * (k as f64).sqrt();
            assert!((rel / 3.92 - 1.0).abs() < 0.2, "k={k}: {rel}");
        }
    }

    #[test]
    fn flatness_of_stationary_arrivals() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut ok = 0;
        for trial in 0..200 {
            let mut phi: Vec<f64> = (0..107).map(|_| rng.random_range(0.0..5.3e10)).collect();
            phi.sort_by(f64::total_cmp);
            let t = flatness_test(&phi, 5.3e10, 10, 200, trial).unwrap();
            ok += t.consistent_with_flat() as usize;
        }
        assert!(ok >= 180, "{ok}");
    }

    #[test]
    fn flatness_flags_a_growing_cross_section() {
        // rate growing linearly in fluence: arrival fluence density ~ x
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut phi: Vec<f64> = (0..400).map(|_| 5.3e10 * rng.random::<f64>().sqrt()).collect();
        phi.sort_by(f64::total_cmp);
        let t = flatness_test(&phi, 5.3e10, 10, 400, 1).unwrap();
        assert!(t.t > 2.0, "{t:?}");
    }
}

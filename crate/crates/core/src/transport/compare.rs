//! Neutron/gamma comparison metrics with bootstrap uncertainties.

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{purpose, stream};

use super::tally::{nearest_rank, PrimaryRecord, TransportTally};

/// Neutron over gamma ratio of one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub name: String,
    /// `None` when the gamma metric is zero.
    pub value: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub std_error: Option<f64>,
    pub reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub primaries_neutron: u64,
    pub primaries_gamma: u64,
    pub resamples: usize,
    pub confidence: f64,
    pub substrate_energy: Ratio,
    pub film_phonons: Ratio,
    pub film_primaries: Ratio,
    pub absorption_time_p995: Ratio,
}

impl RatioReport {
    pub fn ratios(&self) -> [&Ratio; 4] {
        [&self.substrate_energy, &self.film_phonons, &self.film_primaries, &self.absorption_time_p995]
    }
}

/// Reference values the calibrated model is tuned towards.
pub const REFERENCE_RATIOS: [f64; 4] = [1.33, 1.10, 0.41, 1.07];

/// Time quantile used for the persistence comparison.
pub const TIME_QUANTILE: f64 = 0.995;

/// The four metrics of a set of records, each record weighted.
fn metrics(records: &[PrimaryRecord], weights: Option<&[u32]>, times: &[(f64, usize)]) -> [f64; 4] {
    let w = |i: usize| weights.map_or(1.0, |w| w[i] as f64);
    let mut energy = 0.0;
    let mut phonons = 0.0;
    let mut film = 0.0;
    for (i, r) in records.iter().enumerate() {
        let wi = w(i);
        if wi == 0.0 {
            continue;
        }
        energy += wi * r.deposit_mev;
        phonons += wi * r.film_phonons;
        if !r.film_times_ns.is_empty() {
            film += wi;
        }
    }
    let total: f64 = times.iter().map(|&(_, i)| w(i)).sum();
    let mut q = f64::NAN;
    if total > 0.0 {
        let target = (TIME_QUANTILE * total).ceil().max(1.0);
        let mut acc = 0.0;
        for &(t, i) in times {
            acc += w(i);
            if acc >= target {
                q = t;
                break;
            }
        }
    }
    [energy, phonons, film, q]
}

fn sorted_times(records: &[PrimaryRecord]) -> Vec<(f64, usize)> {
    let mut t: Vec<(f64, usize)> = records
        .iter()
        .enumerate()
        .flat_map(|(i, r)| r.film_times_ns.iter().map(move |&t| (t, i)))
        .collect();
    t.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    t
}

fn ratio(a: f64, b: f64) -> Option<f64> {
    (b != 0.0 && b.is_finite() && a.is_finite()).then(|| a / b)
}

/// Compares two tallies built from equal primary counts. Uncertainties come
/// from a Poisson bootstrap over primaries.
pub fn compare_species(n: &TransportTally, g: &TransportTally, resamples: usize, confidence: f64, seed: u64) -> Result<RatioReport> {
    if n.primaries != g.primaries {
        return Err(Error::invalid("tallies", "need equal primary counts"));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::invalid("confidence", "must lie in (0, 1)"));
    }
    let (tn, tg) = (sorted_times(&n.records), sorted_times(&g.records));
    let mn = metrics(&n.records, None, &tn);
    let mg = metrics(&g.records, None, &tg);
    let point: Vec<Option<f64>> = (0..4).map(|k| ratio(mn[k], mg[k])).collect();
    let mut reps: Vec<Vec<f64>> = vec![Vec::with_capacity(resamples); 4];
    let mut rng = stream(seed, &[purpose::BOOTSTRAP, 0x7a11]);
    let pois = Poisson::new(1.0).expect("unit mean");
    let mut wn = vec![0u32; n.records.len()];
    let mut wg = vec![0u32; g.records.len()];
    for _ in 0..resamples {
        wn.iter_mut().for_each(|w| *w = pois.sample(&mut rng) as u32);
        wg.iter_mut().for_each(|w| *w = pois.sample(&mut rng) as u32);
        let a = metrics(&n.records, Some(&wn), &tn);
        let b = metrics(&g.records, Some(&wg), &tg);
        for k in 0..4 {
            if let Some(r) = ratio(a[k], b[k]) {
                reps[k].push(r);
            }
        }
    }
    let names = ["substrate_energy", "film_phonons", "film_primaries", "absorption_time_p995"];
    let mut out = Vec::with_capacity(4);
    for k in 0..4 {
        let r = &mut reps[k];
        r.sort_by(f64::total_cmp);
        let (lo, hi, se) = if r.len() >= 2 && point[k].is_some() {
            let m = r.iter().sum::<f64>() / r.len() as f64;
            let sd = (r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (r.len() - 1) as f64).sqrt();
            let a = 0.5 * (1.0 - confidence);
            (nearest_rank(r, a), nearest_rank(r, 1.0 - a), Some(sd))
        } else {
            (None, None, None)
        };
        out.push(Ratio {
            name: names[k].into(),
            value: point[k],
            ci_low: lo,
            ci_high: hi,
            std_error: se,
            reference: REFERENCE_RATIOS[k],
        });
    }
    let mut it = out.into_iter();
    Ok(RatioReport {
        primaries_neutron: n.primaries,
        primaries_gamma: g.primaries,
        resamples,
        confidence,
        substrate_energy: it.next().unwrap(),
        film_phonons: it.next().unwrap(),
        film_primaries: it.next().unwrap(),
        absorption_time_p995: it.next().unwrap(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::tally::PrimaryOutcome;
    use crate::transport::Particle;
    use rand::{Rng, SeedableRng};

    fn synthetic(particle: Particle, n: u64, scale: f64, seed: u64) -> TransportTally {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let outcomes = (0..n)
            .map(|i| {
                if rng.random::<f64>() < 0.3 {
                    let dep = scale * rng.random_range(0.1..2.0);
                    let times = if rng.random::<f64>() < 0.5 { vec![rng.random_range(100.0..500.0) * scale] } else { vec![] };
                    PrimaryOutcome::Interacted(PrimaryRecord {
                        index: i,
                        deposit_mev: dep,
                        prompt_loss_mev: 0.0,
                        film_energy_mev: 0.0,
                        film_phonons: dep * 10.0,
                        frame_energy_mev: dep,
                        decayed_energy_mev: 0.0,
                        escaped_energy_mev: 0.0,
                        film_times_ns: times,
                    })
                } else {
                    PrimaryOutcome::Passed
                }
            })
            .collect();
        TransportTally::from_outcomes(particle, 1, (1e-3, 20.0, 10), outcomes)
    }

    #[test]
    fn identical_tallies_give_unit_ratios() {
        let a = synthetic(Particle::Neutron, 2000, 1.0, 1);
        let r = compare_species(&a, &a, 50, 0.95, 1).unwrap();
        for x in r.ratios() {
            assert_eq!(x.value, Some(1.0));
        }
    }

    #[test]
    fn zero_denominator_is_undefined() {
        let a = synthetic(Particle::Neutron, 100, 1.0, 1);
        let empty = TransportTally::from_outcomes(Particle::Gamma, 1, (1e-3, 20.0, 10), vec![PrimaryOutcome::Passed; 100]);
        let r = compare_species(&a, &empty, 20, 0.95, 1).unwrap();
        assert!(r.ratios().iter().all(|x| x.value.is_none() && x.ci_low.is_none()));
        assert!(compare_species(&a, &synthetic(Particle::Gamma, 99, 1.0, 2), 10, 0.95, 1).is_err());
    }

    #[test]
    fn bootstrap_width_shrinks_as_root_n() {
        let mut widths = Vec::new();
        for &n in &[1_000u64, 10_000, 100_000] {
            let a = synthetic(Particle::Neutron, n, 1.5, n);
            let b = synthetic(Particle::Gamma, n, 1.0, n + 1);
            let r = compare_species(&a, &b, 400, 0.95, 3).unwrap();
            let s = &r.substrate_energy;
            widths.push(s.ci_high.unwrap() - s.ci_low.unwrap());
        }
        for k in 0..2 {
            let factor = widths[k] / widths[k + 1];
            assert!((factor / 10f64.sqrt() - 1.0).abs() < 0.25, "{widths:?}");
        }
    }
}

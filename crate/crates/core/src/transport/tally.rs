use serde::{Deserialize, Serialize};

use super::geometry::Particle;

/// Compensated (Neumaier) summation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &Neumaier) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Histogram with logarithmically spaced bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHistogram {
    pub min: f64,
    pub max: f64,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl LogHistogram {
    pub fn new(min: f64, max: f64, bins: usize) -> Self {
        assert!(0.0 < min && min < max && bins > 0);
        Self {
            min,
            max,
            counts: vec![0; bins],
            underflow: 0,
            overflow: 0,
        }
    }

    pub fn add(&mut self, x: f64) {
        if x < self.min {
            self.underflow += 1;
        } else if x >= self.max {
            self.overflow += 1;
        } else {
            let bins = self.counts.len();
            let k = ((x / self.min).ln() / (self.max / self.min).ln() * bins as f64) as usize;
            self.counts[k.min(bins - 1)] += 1;
        }
    }

    pub fn edges(&self) -> Vec<f64> {
        let bins = self.counts.len();
        (0..=bins)
            .map(|k| self.min * (self.max / self.min).powf(k as f64 / bins as f64))
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }
}

/// What happened to one primary.
#[derive(Debug, Clone, PartialEq)]
pub enum PrimaryOutcome {
    /// Interacted in a shielding layer.
    Shielded { layer: usize },
    /// Crossed the substrate without interacting.
    Passed,
    Interacted(PrimaryRecord),
}

/// Per-primary summary of an interacting primary, kept for resampling.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimaryRecord {
    pub index: u64,
    pub deposit_mev: f64,
    pub prompt_loss_mev: f64,
    pub film_energy_mev: f64,
    pub film_phonons: f64,
    pub frame_energy_mev: f64,
    pub decayed_energy_mev: f64,
    pub escaped_energy_mev: f64,
    pub film_times_ns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportTally {
    pub particle: Particle,
    pub primaries: u64,
    pub interacting: u64,
    pub shielding_losses: Vec<u64>,
    pub deposit_histogram: LogHistogram,
    /// Deposits of primaries with at least one film-absorbed phonon.
    pub film_deposit_histogram: LogHistogram,
    pub substrate_energy_mev: f64,
    pub prompt_loss_mev: f64,
    pub film_energy_mev: f64,
    pub frame_energy_mev: f64,
    pub decayed_energy_mev: f64,
    pub escaped_energy_mev: f64,
    pub film_phonons: f64,
    pub film_primaries: u64,
    pub film_packets: u64,
    pub absorption_time_p995_ns: Option<f64>,
    #[serde(skip)]
    pub records: Vec<PrimaryRecord>,
}

impl TransportTally {
    /// Builds a tally from outcomes in primary order.
    pub fn from_outcomes(particle: Particle, layers: usize, hist: (f64, f64, usize), outcomes: Vec<PrimaryOutcome>) -> Self {
        let mut shielding_losses = vec![0u64; layers];
        let mut deposit_histogram = LogHistogram::new(hist.0, hist.1, hist.2);
        let mut film_deposit_histogram = deposit_histogram.clone();
        let mut sums = [Neumaier::default(); 7];
        let mut film_primaries = 0;
        let mut film_packets = 0;
        let primaries = outcomes.len() as u64;
        let mut records = Vec::new();
        for o in outcomes {
            match o {
                PrimaryOutcome::Shielded { layer } => shielding_losses[layer] += 1,
                PrimaryOutcome::Passed => {}
                PrimaryOutcome::Interacted(r) => {
                    deposit_histogram.add(r.deposit_mev);
                    for (acc, x) in sums.iter_mut().zip([
                        r.deposit_mev,
                        r.prompt_loss_mev,
                        r.film_energy_mev,
                        r.frame_energy_mev,
                        r.decayed_energy_mev,
                        r.escaped_energy_mev,
                        r.film_phonons,
                    ]) {
                        acc.add(x);
                    }
                    if !r.film_times_ns.is_empty() {
                        film_primaries += 1;
                        film_deposit_histogram.add(r.deposit_mev);
                    }
                    film_packets += r.film_times_ns.len() as u64;
                    records.push(r);
                }
            }
        }
        let mut tally = Self {
            particle,
            primaries,
            interacting: records.len() as u64,
            shielding_losses,
            deposit_histogram,
            film_deposit_histogram,
            substrate_energy_mev: sums[0].value(),
            prompt_loss_mev: sums[1].value(),
            film_energy_mev: sums[2].value(),
            frame_energy_mev: sums[3].value(),
            decayed_energy_mev: sums[4].value(),
            escaped_energy_mev: sums[5].value(),
            film_phonons: sums[6].value(),
            film_primaries,
            film_packets,
            absorption_time_p995_ns: None,
            records,
        };
        tally.absorption_time_p995_ns = tally.time_percentile(0.995);
        tally
    }

    /// Energy not accounted for by the fates, relative to the deposit.
    pub fn ledger_residual(&self) -> f64 {
        let mut out = Neumaier::default();
        for x in [
            self.prompt_loss_mev,
            self.film_energy_mev,
            self.frame_energy_mev,
            self.decayed_energy_mev,
            self.escaped_energy_mev,
        ] {
            out.add(x);
        }
        if self.substrate_energy_mev == 0.0 {
            return out.value().abs();
        }
        (self.substrate_energy_mev - out.value()).abs() / self.substrate_energy_mev
    }

    /// Percentile of film absorption times over absorbed packets.
    pub fn time_percentile(&self, q: f64) -> Option<f64> {
        let mut t: Vec<f64> = self.records.iter().flat_map(|r| r.film_times_ns.iter().copied()).collect();
        t.sort_by(f64::total_cmp);
        nearest_rank(&t, q)
    }

    pub fn write_histogram_csv<W: std::io::Write>(&self, w: W) -> crate::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin_low_mev", "bin_high_mev", "deposits", "film_deposits"])?;
        let e = self.deposit_histogram.edges();
        for k in 0..self.deposit_histogram.counts.len() {
            out.write_record([
                format!("{:.6e}", e[k]),
                format!("{:.6e}", e[k + 1]),
                self.deposit_histogram.counts[k].to_string(),
                self.film_deposit_histogram.counts[k].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Smallest sample with at least `q` of the sorted data at or below it.
pub fn nearest_rank(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[rank - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neumaier_beats_naive() {
        let mut acc = Neumaier::default();
        let mut naive = 0.0;
        for x in [1e16, 1.0, -1e16, 1.0] {
            acc.add(x);
            naive += x;
        }
        assert_eq!(acc.value(), 2.0);
        assert_ne!(naive, 2.0);
    }

    #[test]
    fn merge_is_order_insensitive() {
        let xs: Vec<f64> = (0..10_000).map(|i| ((i * 7919) % 1000) as f64 * 1.1e-3 + if i % 3 == 0 { 1e8 } else { 0.0 }).collect();
        let mut whole = Neumaier::default();
        xs.iter().for_each(|&x| whole.add(x));
        let mut parts: Vec<Neumaier> = xs
            .chunks(333)
            .map(|c| {
                let mut a = Neumaier::default();
                c.iter().for_each(|&x| a.add(x));
                a
            })
            .collect();
        parts.reverse();
        let mut merged = Neumaier::default();
        parts.iter().for_each(|p| merged.merge(p));
        assert!((merged.value() - whole.value()).abs() <= 1e-12 * whole.value());
    }

    #[test]
    fn histogram_bins() {
        let mut h = LogHistogram::new(1e-3, 10.0, 4);
        for x in [5e-4, 1e-3, 0.05, 9.99, 10.0] {
            h.add(x);
        }
        assert_eq!(h.counts, vec![1, 1, 0, 1]);
        assert_eq!((h.underflow, h.overflow), (1, 1));
        assert!((h.edges()[2] - 0.1).abs() < 1e-12);
        assert_eq!(h.total(), 5);
    }

    #[test]
    fn percentile_ranks() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 0.995), Some(995.0));
        assert_eq!(nearest_rank(&v, 0.0), Some(1.0));
        assert_eq!(nearest_rank(&[], 0.5), None);
    }
}

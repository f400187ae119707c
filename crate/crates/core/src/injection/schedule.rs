use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Particle field delivered by a facility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Species {
    /// Monoenergetic 14 MeV D-T neutrons.
    #[serde(rename = "neutron_14mev")]
    Neutron14Mev,
    /// Atmospheric-like spectrum; flux counts neutrons above 10 MeV.
    #[serde(rename = "neutron_atmospheric")]
    NeutronAtmospheric,
    /// 60Co gammas, 1.25 MeV mean.
    #[serde(rename = "gamma_1_25mev")]
    Gamma1_25Mev,
}

impl Species {
    pub fn is_neutron(self) -> bool {
        !matches!(self, Species::Gamma1_25Mev)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Species::Neutron14Mev => "neutron_14mev",
            Species::NeutronAtmospheric => "neutron_atmospheric",
            Species::Gamma1_25Mev => "gamma_1_25mev",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamInterval {
    pub start_s: f64,
    pub end_s: f64,
    pub species: Species,
    /// Particles per cm^2 per second, facility counting convention.
    pub flux: f64,
    /// Flux over the whole spectrum, when it differs from the convention.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_spectrum_flux: Option<f64>,
}

impl BeamInterval {
    pub fn new(start_s: f64, end_s: f64, species: Species, flux: f64) -> Self {
        Self {
            start_s,
            end_s,
            species,
            flux,
            full_spectrum_flux: None,
        }
    }

    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// Beam-on intervals over a campaign `[0, span_s]`. Time outside every
/// interval is beam-off; background processes run throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamSchedule {
    pub span_s: f64,
    #[serde(default)]
    pub intervals: Vec<BeamInterval>,
}

impl BeamSchedule {
    /// Alternating off/on blocks: `off, on, off, on, ..., off`.
    pub fn alternating(blocks: usize, on_s: f64, off_s: f64, species: Species, flux: f64) -> Self {
        let mut intervals = Vec::with_capacity(blocks);
        let mut t = off_s;
        for _ in 0..blocks {
            intervals.push(BeamInterval::new(t, t + on_s, species, flux));
            t += on_s + off_s;
        }
        Self { span_s: t, intervals }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.span_s > 0.0 && self.span_s.is_finite()) {
            return Err(Error::invalid("span_s", "must be positive"));
        }
        for iv in &self.intervals {
            if !(iv.start_s >= 0.0 && iv.start_s < iv.end_s && iv.end_s <= self.span_s) {
                return Err(Error::invalid(
                    "interval",
                    format!("[{}, {}] not inside [0, {}]", iv.start_s, iv.end_s, self.span_s),
                ));
            }
            if !(iv.flux >= 0.0 && iv.flux.is_finite()) {
                return Err(Error::invalid("flux", "must be non-negative"));
            }
            if let Some(f) = iv.full_spectrum_flux {
                if !(f >= 0.0 && f.is_finite()) {
                    return Err(Error::invalid("full_spectrum_flux", "must be non-negative"));
                }
            }
        }
        for (i, a) in self.intervals.iter().enumerate() {
            for b in &self.intervals[i + 1..] {
                if a.species == b.species && a.start_s < b.end_s && b.start_s < a.end_s {
                    return Err(Error::invalid("intervals", "overlapping intervals of one species"));
                }
            }
        }
        Ok(())
    }

    /// True while any interval with positive flux covers `t`.
    pub fn beam_on(&self, t: f64) -> bool {
        self.intervals
            .iter()
            .any(|iv| iv.flux > 0.0 && iv.start_s <= t && t < iv.end_s)
    }

    /// Union of beam-on intervals, sorted and merged.
    pub fn on_intervals(&self) -> Vec<(f64, f64)> {
        let mut ivs: Vec<(f64, f64)> = self
            .intervals
            .iter()
            .filter(|iv| iv.flux > 0.0)
            .map(|iv| (iv.start_s, iv.end_s))
            .collect();
        ivs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(ivs.len());
        for (s, e) in ivs {
            match merged.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => merged.push((s, e)),
            }
        }
        merged
    }

    pub fn on_time(&self) -> f64 {
        self.on_intervals().iter().map(|(s, e)| e - s).sum()
    }

    pub fn off_time(&self) -> f64 {
        self.span_s - self.on_time()
    }

    /// Appends `other`, shifted to start where this schedule ends.
    pub fn concat(&self, other: &BeamSchedule) -> BeamSchedule {
        let mut intervals = self.intervals.clone();
        intervals.extend(other.intervals.iter().map(|iv| BeamInterval {
            start_s: iv.start_s + self.span_s,
            end_s: iv.end_s + self.span_s,
            ..iv.clone()
        }));
        BeamSchedule {
            span_s: self.span_s + other.span_s,
            intervals,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alternating_layout() {
        let s = BeamSchedule::alternating(3, 10.0, 5.0, Species::Neutron14Mev, 1.0);
        assert_eq!(s.span_s, 50.0);
        assert_eq!(s.on_time(), 30.0);
        assert_eq!(s.off_time(), 20.0);
        assert!(!s.beam_on(2.0));
        assert!(s.beam_on(5.0));
        assert!(!s.beam_on(15.0));
        s.validate().unwrap();
    }

    #[test]
    fn rejects_overlap_and_out_of_span() {
        let mut s = BeamSchedule::alternating(2, 10.0, 5.0, Species::Neutron14Mev, 1.0);
        s.intervals[1].start_s = 12.0;
        assert!(s.validate().is_err());
        let s = BeamSchedule {
            span_s: 5.0,
            intervals: vec![BeamInterval::new(1.0, 6.0, Species::Gamma1_25Mev, 1.0)],
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn species_of_different_kind_may_overlap() {
        let s = BeamSchedule {
            span_s: 10.0,
            intervals: vec![
                BeamInterval::new(0.0, 10.0, Species::Neutron14Mev, 1.0),
                BeamInterval::new(0.0, 10.0, Species::Gamma1_25Mev, 0.07),
            ],
        };
        s.validate().unwrap();
        assert_eq!(s.on_intervals(), vec![(0.0, 10.0)]);
    }
}

//! Simplified particle transport and phonon cascade.
//!
//! A primary crosses the dewar layers along the beam axis, may interact once
//! in the substrate, and the deposit is turned into ballistic phonons that
//! bounce around the substrate until the film, the frame or a lossy surface
//! takes them. Only neutron/gamma ratios of the tallies are meant to be read.

pub mod cascade;
pub mod compare;
pub mod deposit;
pub mod geometry;
pub mod propagate;
pub mod tally;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{purpose, stream};

pub use cascade::{cascade, CarrierSet, CascadeConfig, PhononPacket};
pub use compare::{compare_species, Ratio, RatioReport, REFERENCE_RATIOS};
pub use deposit::{GammaDepositModel, NeutronDepositModel};
pub use geometry::{Attenuation, Film, Geometry, Layer, Particle, Substrate};
pub use propagate::{propagate, trace_packet, Fate, PropagationConfig};
pub use tally::{LogHistogram, Neumaier, PrimaryOutcome, PrimaryRecord, TransportTally};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramConfig {
    pub min_mev: f64,
    pub max_mev: f64,
    pub bins: usize,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            min_mev: 1e-3,
            max_mev: 20.0,
            bins: 86,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportConfig {
    pub neutron_energy_mev: f64,
    pub gamma_energy_mev: f64,
    pub geometry: Geometry,
    pub neutron_deposit: NeutronDepositModel,
    pub gamma_deposit: GammaDepositModel,
    pub cascade: CascadeConfig,
    pub propagation: PropagationConfig,
    pub histogram: HistogramConfig,
    pub bootstrap_resamples: usize,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            neutron_energy_mev: 14.0,
            gamma_energy_mev: 1.25,
            geometry: Geometry::default(),
            neutron_deposit: NeutronDepositModel::default(),
            gamma_deposit: GammaDepositModel::default(),
            cascade: CascadeConfig::default(),
            propagation: PropagationConfig::default(),
            histogram: HistogramConfig::default(),
            bootstrap_resamples: 200,
        }
    }
}

impl TransportConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.neutron_energy_mev > 0.0 && self.gamma_energy_mev > 0.0) {
            return Err(Error::invalid("energy_mev", "must be positive"));
        }
        self.geometry.validate()?;
        self.neutron_deposit.validate(self.neutron_energy_mev)?;
        self.gamma_deposit.validate()?;
        self.cascade.validate()?;
        self.propagation.validate()?;
        let h = &self.histogram;
        if !(h.min_mev > 0.0 && h.min_mev < h.max_mev && h.bins > 0) {
            return Err(Error::invalid("histogram", "need 0 < min < max and at least one bin"));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn energy(&self, p: Particle) -> f64 {
        match p {
            Particle::Neutron => self.neutron_energy_mev,
            Particle::Gamma => self.gamma_energy_mev,
        }
    }

    pub fn sample_deposit<R: Rng + ?Sized>(&self, p: Particle, rng: &mut R) -> f64 {
        match p {
            Particle::Neutron => self.neutron_deposit.sample(rng),
            Particle::Gamma => self.gamma_deposit.sample(self.gamma_energy_mev, rng),
        }
    }
}

/// Result of following a primary through the layers and the substrate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Trace {
    Shielded { layer: usize },
    NoInteraction,
    Deposit { position_mm: [f64; 3], energy_mev: f64 },
}

fn free_path_mm<R: Rng + ?Sized>(mu_per_cm: f64, rng: &mut R) -> f64 {
    if mu_per_cm > 0.0 {
        Exp::new(mu_per_cm * 0.1).expect("positive rate").sample(rng)
    } else {
        f64::INFINITY
    }
}

/// Samples a free path in every layer in turn; a path shorter than the
/// layer is an interaction there.
pub fn trace_primary<R: Rng + ?Sized>(p: Particle, cfg: &TransportConfig, rng: &mut R) -> Trace {
    let g = &cfg.geometry;
    for (k, l) in g.layers.iter().enumerate() {
        if free_path_mm(l.mu.of(p), rng) < l.thickness_mm {
            return Trace::Shielded { layer: k };
        }
    }
    let s = g.substrate.size_mm;
    // source plane as large as the substrate, normal incidence
    let x = rng.random_range(0.0..s[0]);
    let y = rng.random_range(0.0..s[1]);
    let z = free_path_mm(g.substrate.mu.of(p), rng);
    if z >= s[2] {
        return Trace::NoInteraction;
    }
    Trace::Deposit {
        position_mm: [x, y, z],
        energy_mev: cfg.sample_deposit(p, rng),
    }
}

/// Follows primary `index` of a run seeded with `seed`.
pub fn simulate_primary(p: Particle, cfg: &TransportConfig, seed: u64, index: u64) -> PrimaryOutcome {
    let mut rng = stream(seed, &[purpose::TRANSPORT, p.tag(), index]);
    match trace_primary(p, cfg, &mut rng) {
        Trace::Shielded { layer } => PrimaryOutcome::Shielded { layer },
        Trace::NoInteraction => PrimaryOutcome::Passed,
        Trace::Deposit { position_mm, energy_mev } => {
            let carriers = cascade(energy_mev, position_mm, p, &cfg.cascade, &mut rng);
            let prop = propagate(&carriers, &cfg.geometry, &cfg.propagation, &mut rng);
            PrimaryOutcome::Interacted(PrimaryRecord {
                index,
                deposit_mev: energy_mev,
                prompt_loss_mev: carriers.prompt_loss_ev * 1e-6,
                film_energy_mev: prop.film_energy_ev * 1e-6,
                film_phonons: prop.film_phonons,
                frame_energy_mev: prop.frame_energy_ev * 1e-6,
                decayed_energy_mev: prop.decayed_energy_ev * 1e-6,
                escaped_energy_mev: prop.escaped_energy_ev * 1e-6,
                film_times_ns: prop.film_times_ns,
            })
        }
    }
}

/// Runs `count` primaries. Each primary has its own seed stream and results
/// are reduced in primary order, so the tally does not depend on threading.
pub fn run_transport(p: Particle, count: u64, cfg: &TransportConfig, seed: u64) -> Result<TransportTally> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::invalid("count", "need at least one primary"));
    }
    let outcomes: Vec<PrimaryOutcome> = (0..count).into_par_iter().map(|i| simulate_primary(p, cfg, seed, i)).collect();
    let h = &cfg.histogram;
    Ok(TransportTally::from_outcomes(p, cfg.geometry.layers.len(), (h.min_mev, h.max_mev, h.bins), outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_mu(cfg: &mut TransportConfig) {
        for l in cfg.geometry.layers.iter_mut() {
            l.mu = Attenuation {
                neutron_per_cm: 0.0,
                gamma_per_cm: 0.0,
            };
        }
    }

    #[test]
    fn no_attenuation_no_interaction() {
        let mut cfg = TransportConfig::default();
        zero_mu(&mut cfg);
        cfg.geometry.substrate.mu = Attenuation {
            neutron_per_cm: 0.0,
            gamma_per_cm: 0.0,
        };
        let t = run_transport(Particle::Neutron, 5000, &cfg, 1).unwrap();
        assert_eq!(t.interacting, 0);
        assert_eq!(t.shielding_losses.iter().sum::<u64>(), 0);
    }

    #[test]
    fn single_layer_attenuation() {
        let mut rng = stream(5, &[0]);
        for (mu, x) in [(0.5, 10.0), (2.0, 5.0), (0.1, 30.0)] {
            let mut cfg = TransportConfig::default();
            zero_mu(&mut cfg);
            cfg.geometry.layers[1].mu.gamma_per_cm = mu;
            cfg.geometry.layers[1].thickness_mm = x;
            let n = 100_000;
            let passed = (0..n)
                .filter(|_| !matches!(trace_primary(Particle::Gamma, &cfg, &mut rng), Trace::Shielded { .. }))
                .count() as f64;
            let p = (-mu * x * 0.1f64).exp();
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((passed - n as f64 * p).abs() < 3.0 * sd, "mu={mu} x={x}: {passed}");
        }
    }

    #[test]
    fn gamma_interacts_more_than_neutron() {
        let cfg = TransportConfig::default();
        let n = run_transport(Particle::Neutron, 20_000, &cfg, 2).unwrap();
        let g = run_transport(Particle::Gamma, 20_000, &cfg, 2).unwrap();
        assert!(g.interacting > n.interacting);
        for t in [&n, &g] {
            assert!(t.ledger_residual() < 1e-9);
            assert!(t.records.iter().all(|r| r.deposit_mev > 0.0 && r.deposit_mev <= cfg.energy(t.particle)));
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = TransportConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(TransportConfig::from_toml(&text).unwrap(), cfg);
        assert!(TransportConfig::from_toml("bogus = 1").is_err());
    }
}

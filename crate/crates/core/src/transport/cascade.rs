//! Electron-hole pairs, recombination phonons and downconversion.
//!
//! Every phonon above the ballistic threshold splits into two, with a uniform
//! energy fraction, until all are ballistic. A megaelectronvolt deposit ends
//! up as ~1e9 phonons, so large deposits are carried by a fixed number of
//! packets: each packet holds an equal share of the energy, stands for
//! `2 * share / threshold` phonons (the expected count of the splitting
//! process) and travels along one sampled lineage.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::geometry::Particle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeConfig {
    pub gap_ev: f64,
    /// Pair creation energy in units of the gap.
    pub pair_energy_factor: f64,
    pub ballistic_threshold_ev: f64,
    /// Fraction of the deposit never converted into carriers.
    pub prompt_loss_neutron: f64,
    pub prompt_loss_gamma: f64,
    pub packets_per_deposit: usize,
    /// Cascades expected to end with at most this many phonons are followed
    /// phonon by phonon.
    pub explicit_limit: usize,
    pub split_time_ns: f64,
    pub recombination_time_ns: f64,
    /// Mean delay before phonons leave the deposit hot spot, per MeV of
    /// carrier energy.
    pub hot_spot_ns_per_mev: f64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            gap_ev: 1.1,
            pair_energy_factor: 3.0,
            ballistic_threshold_ev: 1e-3,
            prompt_loss_neutron: 0.173,
            prompt_loss_gamma: 0.0,
            packets_per_deposit: 4096,
            explicit_limit: 8192,
            split_time_ns: 0.5,
            recombination_time_ns: 5.0,
            hot_spot_ns_per_mev: 55.0,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.gap_ev, self.pair_energy_factor, self.ballistic_threshold_ev];
        if pos.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("cascade", "gap, pair factor and threshold must be positive"));
        }
        let nonneg = [self.split_time_ns, self.recombination_time_ns, self.hot_spot_ns_per_mev];
        if nonneg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("cascade", "time constants must be non-negative"));
        }
        for l in [self.prompt_loss_neutron, self.prompt_loss_gamma] {
            if !(0.0..1.0).contains(&l) {
                return Err(Error::invalid("prompt_loss", "must lie in [0, 1)"));
            }
        }
        if self.packets_per_deposit == 0 {
            return Err(Error::invalid("packets_per_deposit", "must be at least 1"));
        }
        Ok(())
    }

    pub fn pair_energy_ev(&self) -> f64 {
        self.gap_ev * self.pair_energy_factor
    }

    pub fn prompt_loss(&self, p: Particle) -> f64 {
        match p {
            Particle::Neutron => self.prompt_loss_neutron,
            Particle::Gamma => self.prompt_loss_gamma,
        }
    }

    /// Expected number of ballistic phonons from a phonon of energy `e`.
    pub fn expected_phonons(&self, e_ev: f64) -> f64 {
        if e_ev < self.ballistic_threshold_ev {
            1.0
        } else {
            2.0 * e_ev / self.ballistic_threshold_ev
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// Emitted by pair recombination (Neganov-Luke emission is not modeled).
    Recombination,
    /// Deposit energy not taken up by pairs.
    Direct,
}

/// A group of ballistic phonons sharing position, direction and birth time.
#[derive(Debug, Clone, PartialEq)]
pub struct PhononPacket {
    pub energy_ev: f64,
    pub phonons: f64,
    pub position_mm: [f64; 3],
    pub direction: [f64; 3],
    pub birth_ns: f64,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarrierSet {
    pub deposit_ev: f64,
    pub prompt_loss_ev: f64,
    pub pairs: u64,
    pub packets: Vec<PhononPacket>,
}

impl CarrierSet {
    pub fn carrier_energy_ev(&self) -> f64 {
        let mut acc = super::tally::Neumaier::default();
        for p in &self.packets {
            acc.add(p.energy_ev);
        }
        acc.value()
    }

    pub fn phonon_count(&self) -> f64 {
        self.packets.iter().map(|p| p.phonons).sum()
    }
}

/// Pair count and the phonons emitted before downconversion.
pub fn seed_phonons(carrier_ev: f64, cfg: &CascadeConfig) -> (u64, Vec<(f64, Origin)>) {
    let pe = cfg.pair_energy_ev();
    let pairs = (carrier_ev / pe).floor() as u64;
    let rest = carrier_ev - pairs as f64 * pe;
    let mut seeds = Vec::new();
    if pairs as usize <= cfg.explicit_limit {
        seeds.extend((0..pairs).map(|_| (pe, Origin::Recombination)));
    }
    if rest > 0.0 || pairs == 0 {
        seeds.push((rest, Origin::Direct));
    }
    (pairs, seeds)
}

/// Splits `e` until every piece is below `threshold`. Returns `(energy, generations)`.
pub fn downconvert<R: Rng + ?Sized>(e: f64, threshold: f64, rng: &mut R, out: &mut Vec<(f64, u32)>) {
    let mut stack = vec![(e, 0u32)];
    while let Some((x, g)) = stack.pop() {
        if x < threshold {
            out.push((x, g));
        } else {
            let u: f64 = rng.random();
            stack.push((u * x, g + 1));
            stack.push((x - u * x, g + 1));
        }
    }
}

fn isotropic<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - z * z).max(0.0).sqrt();
    [s * phi.cos(), s * phi.sin(), z]
}

fn exp_draw<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    if mean > 0.0 {
        Exp::new(1.0 / mean).expect("positive rate").sample(rng)
    } else {
        0.0
    }
}

/// Turns a deposit into ballistic phonon packets at `position_mm`.
pub fn cascade<R: Rng + ?Sized>(
    deposit_mev: f64,
    position_mm: [f64; 3],
    particle: Particle,
    cfg: &CascadeConfig,
    rng: &mut R,
) -> CarrierSet {
    let deposit_ev = deposit_mev * crate::units::MEV_TO_EV;
    let prompt_loss_ev = deposit_ev * cfg.prompt_loss(particle);
    let carrier_ev = deposit_ev - prompt_loss_ev;
    let t = cfg.ballistic_threshold_ev;
    let hot = exp_draw(cfg.hot_spot_ns_per_mev * carrier_ev * 1e-6, rng);
    let expected = cfg.expected_phonons(carrier_ev);
    let mut packets = Vec::new();
    if expected <= cfg.explicit_limit as f64 {
        let (pairs, seeds) = seed_phonons(carrier_ev, cfg);
        let mut finals = Vec::new();
        for (e, origin) in seeds {
            let born = hot + if origin == Origin::Recombination { exp_draw(cfg.recombination_time_ns, rng) } else { 0.0 };
            finals.clear();
            downconvert(e, t, rng, &mut finals);
            for &(x, g) in &finals {
                let delay: f64 = (0..g).map(|_| exp_draw(cfg.split_time_ns, rng)).sum();
                packets.push(PhononPacket {
                    energy_ev: x,
                    phonons: 1.0,
                    position_mm,
                    direction: isotropic(rng),
                    birth_ns: born + delay,
                    origin,
                });
            }
        }
        return CarrierSet {
            deposit_ev,
            prompt_loss_ev,
            pairs,
            packets,
        };
    }
    let pe = cfg.pair_energy_ev();
    let pairs = (carrier_ev / pe).floor() as u64;
    let n = cfg.packets_per_deposit;
    let share = carrier_ev / n as f64;
    let mut assigned = 0.0;
    for k in 0..n {
        let energy_ev = if k + 1 == n { carrier_ev - assigned } else { share };
        assigned += share;
        // one final phonon's ancestry: size-biased daughter choice gives
        // an energy fraction with density 2v per generation
        let mut e = pe;
        let mut delay = exp_draw(cfg.recombination_time_ns, rng);
        while e >= t {
            e *= rng.random::<f64>().sqrt();
            delay += exp_draw(cfg.split_time_ns, rng);
        }
        packets.push(PhononPacket {
            energy_ev,
            phonons: 2.0 * energy_ev / t,
            position_mm,
            direction: isotropic(rng),
            birth_ns: hot + delay,
            origin: Origin::Recombination,
        });
    }
    CarrierSet {
        deposit_ev,
        prompt_loss_ev,
        pairs,
        packets,
    }
}

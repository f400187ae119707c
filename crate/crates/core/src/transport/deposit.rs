//! Energy deposited by one substrate interaction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Elastic recoils follow a power law on `[elastic_min, elastic_max]`;
/// inelastic reactions give a flat hard component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeutronDepositModel {
    pub elastic_index: f64,
    pub elastic_min_mev: f64,
    pub elastic_max_mev: f64,
    pub inelastic_weight: f64,
    pub inelastic_min_mev: f64,
    pub inelastic_max_mev: f64,
}

impl Default for NeutronDepositModel {
    fn default() -> Self {
        Self {
            elastic_index: 1.5,
            elastic_min_mev: 0.01,
            elastic_max_mev: 3.1,
            inelastic_weight: 0.2231,
            inelastic_min_mev: 3.0,
            inelastic_max_mev: 13.0,
        }
    }
}

impl NeutronDepositModel {
    pub fn validate(&self, primary_mev: f64) -> Result<()> {
        let ok = self.elastic_index > 0.0
            && self.elastic_index != 1.0
            && 0.0 < self.elastic_min_mev
            && self.elastic_min_mev < self.elastic_max_mev
            && (0.0..=1.0).contains(&self.inelastic_weight)
            && 0.0 < self.inelastic_min_mev
            && self.inelastic_min_mev < self.inelastic_max_mev;
        if !ok {
            return Err(Error::invalid("neutron_deposit", "inconsistent mixture parameters"));
        }
        if self.elastic_max_mev.max(self.inelastic_max_mev) > primary_mev {
            return Err(Error::invalid("neutron_deposit", "deposits may not exceed the primary energy"));
        }
        Ok(())
    }

    fn elastic_from_uniform(&self, u: f64) -> f64 {
        let k = 1.0 - self.elastic_index;
        let a = self.elastic_min_mev.powf(k);
        let b = self.elastic_max_mev.powf(k);
        (a + u * (b - a)).powf(1.0 / k)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if rng.random::<f64>() < self.inelastic_weight {
            rng.random_range(self.inelastic_min_mev..self.inelastic_max_mev)
        } else {
            self.elastic_from_uniform(rng.random())
        }
    }

    pub fn cdf(&self, e: f64) -> f64 {
        let k = 1.0 - self.elastic_index;
        let a = self.elastic_min_mev.powf(k);
        let b = self.elastic_max_mev.powf(k);
        let el = ((e.clamp(self.elastic_min_mev, self.elastic_max_mev).powf(k) - a) / (b - a)).clamp(0.0, 1.0);
        let inel = ((e - self.inelastic_min_mev) / (self.inelastic_max_mev - self.inelastic_min_mev)).clamp(0.0, 1.0);
        (1.0 - self.inelastic_weight) * el + self.inelastic_weight * inel
    }
}

/// Compton electron energy from Klein-Nishina scattering, plus a small
/// full-absorption fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaDepositModel {
    pub photopeak_fraction: f64,
}

impl Default for GammaDepositModel {
    fn default() -> Self {
        Self { photopeak_fraction: 0.01 }
    }
}

const ELECTRON_MASS_MEV: f64 = 0.510_998_95;

impl GammaDepositModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.photopeak_fraction) {
            return Err(Error::invalid("photopeak_fraction", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, energy_mev: f64, rng: &mut R) -> f64 {
        if rng.random::<f64>() < self.photopeak_fraction {
            return energy_mev;
        }
        let k = energy_mev / ELECTRON_MASS_MEV;
        let eps0 = 1.0 / (1.0 + 2.0 * k);
        let bound = 1.0 / eps0 + 1.0;
        loop {
            // eps = scattered / incident photon energy
            let eps = rng.random_range(eps0..=1.0);
            let cos = 1.0 - (1.0 / eps - 1.0) / k;
            let f = 1.0 / eps + eps - (1.0 - cos * cos);
            if rng.random::<f64>() * bound <= f {
                return energy_mev * (1.0 - eps);
            }
        }
    }

    /// Largest Compton electron energy.
    pub fn compton_edge(energy_mev: f64) -> f64 {
        let k = energy_mev / ELECTRON_MASS_MEV;
        energy_mev * 2.0 * k / (1.0 + 2.0 * k)
    }
}

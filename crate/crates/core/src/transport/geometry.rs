use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Primary particle species of the transport model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Particle {
    Neutron,
    Gamma,
}

impl Particle {
    pub fn as_str(self) -> &'static str {
        match self {
            Particle::Neutron => "neutron",
            Particle::Gamma => "gamma",
        }
    }

    pub(crate) fn tag(self) -> u64 {
        match self {
            Particle::Neutron => 1,
            Particle::Gamma => 2,
        }
    }
}

impl std::str::FromStr for Particle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neutron" => Ok(Particle::Neutron),
            "gamma" => Ok(Particle::Gamma),
            _ => Err(Error::invalid("species", format!("`{s}` is neither neutron nor gamma"))),
        }
    }
}

/// Macroscopic attenuation coefficients, per cm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attenuation {
    pub neutron_per_cm: f64,
    pub gamma_per_cm: f64,
}

impl Attenuation {
    pub fn of(&self, p: Particle) -> f64 {
        match p {
            Particle::Neutron => self.neutron_per_cm,
            Particle::Gamma => self.gamma_per_cm,
        }
    }
}

/// One shielding slab crossed by the beam before the substrate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub name: String,
    pub thickness_mm: f64,
    pub mu: Attenuation,
}

impl Layer {
    fn new(name: &str, thickness_mm: f64, neutron_per_cm: f64, gamma_per_cm: f64) -> Self {
        Self {
            name: name.into(),
            thickness_mm,
            mu: Attenuation {
                neutron_per_cm,
                gamma_per_cm,
            },
        }
    }
}

/// Substrate box `[0, x] x [0, y] x [0, z]` in mm; the beam runs along +z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Substrate {
    pub size_mm: [f64; 3],
    pub mu: Attenuation,
}

/// Superconducting film patch on the `z = size_z` face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Film {
    pub size_mm: [f64; 2],
    pub center_mm: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub layers: Vec<Layer>,
    pub substrate: Substrate,
    pub film: Film,
    /// Fraction of the substrate surface covered by the absorbing frame.
    pub frame_coverage: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            layers: vec![
                Layer::new("aluminum", 2.0, 0.10, 0.15),
                Layer::new("glass", 10.0, 0.09, 0.14),
                Layer::new("liquid_nitrogen", 29.5, 0.05, 0.046),
                Layer::new("mu_metal", 0.5, 0.27, 0.46),
                Layer::new("liquid_nitrogen", 10.0, 0.05, 0.046),
            ],
            substrate: Substrate {
                size_mm: [1.2, 2.6, 1.0],
                mu: Attenuation {
                    neutron_per_cm: 0.105,
                    gamma_per_cm: 0.28,
                },
            },
            film: Film {
                size_mm: [0.025, 0.150],
                center_mm: [0.6, 1.3],
            },
            frame_coverage: 0.22,
        }
    }
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        for l in &self.layers {
            if !(l.thickness_mm > 0.0 && l.thickness_mm.is_finite()) {
                return Err(Error::invalid("thickness_mm", format!("layer `{}` must be positive", l.name)));
            }
            check_mu(&l.mu)?;
        }
        let s = &self.substrate.size_mm;
        if s.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("substrate.size_mm", "must be positive"));
        }
        check_mu(&self.substrate.mu)?;
        let f = &self.film;
        for k in 0..2 {
            let lo = f.center_mm[k] - 0.5 * f.size_mm[k];
            let hi = f.center_mm[k] + 0.5 * f.size_mm[k];
            if !(f.size_mm[k] > 0.0 && lo >= -1e-12 && hi <= s[k] + 1e-12) {
                return Err(Error::invalid("film", "patch must lie within the substrate face"));
            }
        }
        if !(0.0..=1.0).contains(&self.frame_coverage) {
            return Err(Error::invalid("frame_coverage", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Probability of crossing every shielding layer without interacting.
    pub fn shield_transmission(&self, p: Particle) -> f64 {
        (-self.layers.iter().map(|l| l.mu.of(p) * l.thickness_mm * 0.1).sum::<f64>()).exp()
    }

    /// Probability that a primary reaching the substrate interacts in it.
    pub fn substrate_interaction(&self, p: Particle) -> f64 {
        -(-self.substrate.mu.of(p) * self.substrate.size_mm[2] * 0.1).exp_m1()
    }

    pub(crate) fn in_film(&self, x: f64, y: f64) -> bool {
        let f = &self.film;
        (x - f.center_mm[0]).abs() <= 0.5 * f.size_mm[0] && (y - f.center_mm[1]).abs() <= 0.5 * f.size_mm[1]
    }
}

fn check_mu(mu: &Attenuation) -> Result<()> {
    if !(mu.neutron_per_cm >= 0.0 && mu.gamma_per_cm >= 0.0 && mu.neutron_per_cm.is_finite() && mu.gamma_per_cm.is_finite()) {
        return Err(Error::invalid("mu", "attenuation coefficients must be non-negative"));
    }
    Ok(())
}

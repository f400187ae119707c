//! Ballistic phonon transport inside the substrate box.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::cascade::{CarrierSet, PhononPacket};
use super::geometry::Geometry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagationConfig {
    pub phonon_speed_mm_per_us: f64,
    /// Probability that a reflection is specular rather than diffuse.
    pub specular_fraction: f64,
    pub survival_per_bounce: f64,
    pub max_bounces: u32,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            phonon_speed_mm_per_us: 5.0,
            specular_fraction: 0.5,
            survival_per_bounce: 0.9,
            max_bounces: 500,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.phonon_speed_mm_per_us > 0.0 && self.phonon_speed_mm_per_us.is_finite()) {
            return Err(Error::invalid("phonon_speed_mm_per_us", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.specular_fraction) || !(0.0..=1.0).contains(&self.survival_per_bounce) {
            return Err(Error::invalid("propagation", "probabilities must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Where a packet ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fate {
    Film { time_ns: f64 },
    Frame,
    /// Lost at a surface (failed the per-bounce survival draw).
    Decayed,
    /// Still bouncing at the bounce cap.
    Escaped,
}

/// Traces one packet until it is absorbed or hits the bounce cap.
pub fn trace_packet<R: Rng + ?Sized>(packet: &PhononPacket, geom: &Geometry, cfg: &PropagationConfig, rng: &mut R) -> Fate {
    let size = geom.substrate.size_mm;
    let mut p = packet.position_mm;
    let mut d = packet.direction;
    let mut path = 0.0;
    let mut bounces = 0u32;
    loop {
        let mut t_hit = f64::INFINITY;
        let mut axis = 0;
        for k in 0..3 {
            let t = if d[k] > 0.0 {
                (size[k] - p[k]) / d[k]
            } else if d[k] < 0.0 {
                -p[k] / d[k]
            } else {
                f64::INFINITY
            };
            if t < t_hit {
                t_hit = t;
                axis = k;
            }
        }
        let t_hit = t_hit.max(0.0);
        for k in 0..3 {
            p[k] = (p[k] + t_hit * d[k]).clamp(0.0, size[k]);
        }
        path += t_hit;
        let far = d[axis] > 0.0;
        if axis == 2 && far && geom.in_film(p[0], p[1]) {
            let time_ns = packet.birth_ns + path / cfg.phonon_speed_mm_per_us * 1e3;
            return Fate::Film { time_ns };
        }
        if rng.random::<f64>() < geom.frame_coverage {
            return Fate::Frame;
        }
        if rng.random::<f64>() >= cfg.survival_per_bounce {
            return Fate::Decayed;
        }
        if bounces >= cfg.max_bounces {
            return Fate::Escaped;
        }
        bounces += 1;
        let inward = if far { -1.0 } else { 1.0 };
        if rng.random::<f64>() < cfg.specular_fraction {
            d[axis] = -d[axis];
        } else {
            // cosine-weighted about the inward normal
            let cos = rng.random::<f64>().sqrt();
            let sin = (1.0 - cos * cos).max(0.0).sqrt();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
            d[axis] = inward * cos;
            d[a] = sin * phi.cos();
            d[b] = sin * phi.sin();
        }
    }
}

/// Outcome of propagating every packet of one deposit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Propagation {
    pub film_energy_ev: f64,
    pub film_phonons: f64,
    pub frame_energy_ev: f64,
    pub decayed_energy_ev: f64,
    pub escaped_energy_ev: f64,
    /// Absorption time of every film-absorbed packet.
    pub film_times_ns: Vec<f64>,
}

pub fn propagate<R: Rng + ?Sized>(carriers: &CarrierSet, geom: &Geometry, cfg: &PropagationConfig, rng: &mut R) -> Propagation {
    use super::tally::Neumaier;
    let (mut film, mut frame, mut decayed, mut escaped, mut count) =
        (Neumaier::default(), Neumaier::default(), Neumaier::default(), Neumaier::default(), Neumaier::default());
    let mut times = Vec::new();
    for pk in &carriers.packets {
        match trace_packet(pk, geom, cfg, rng) {
            Fate::Film { time_ns } => {
                film.add(pk.energy_ev);
                count.add(pk.phonons);
                times.push(time_ns);
            }
            Fate::Frame => frame.add(pk.energy_ev),
            Fate::Decayed => decayed.add(pk.energy_ev),
            Fate::Escaped => escaped.add(pk.energy_ev),
        }
    }
    Propagation {
        film_energy_ev: film.value(),
        film_phonons: count.value(),
        frame_energy_ev: frame.value(),
        decayed_energy_ev: decayed.value(),
        escaped_energy_ev: escaped.value(),
        film_times_ns: times,
    }
}

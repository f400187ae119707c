use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Poisson, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::rng::{derive_seed, purpose, stream};

/// Samples per independently seeded noise block.
pub const NOISE_BLOCK: i64 = 4096;

/// Counter-addressed Gaussian noise: the value at any absolute sample index is
/// a pure function of `(seed, stream tag, index)`.
///
/// With a finite `cut`, the body of the distribution is restricted to
/// `|x| < cut` and the rare samples beyond it are placed explicitly as a
/// Poisson-sampled list of tail positions over a fixed span. The marginal
/// stays Gaussian, and every sample that can exceed `cut` is known up front,
/// which is what lets a sparse campaign find noise triggers without scanning
/// hours of samples.
#[derive(Debug, Clone)]
pub struct NoiseField {
    seed: u64,
    tag: u64,
    sigma: f64,
    /// Body cut in units of sigma.
    cut_sigmas: f64,
    tails: Vec<(i64, f64)>,
}

impl NoiseField {
    /// Plain Gaussian noise without tail bookkeeping.
    pub fn gaussian(seed: u64, tag: u64, sigma: f64) -> Self {
        Self {
            seed,
            tag,
            sigma,
            cut_sigmas: f64::INFINITY,
            tails: Vec::new(),
        }
    }

    /// Gaussian noise whose excursions beyond `cut` volts are enumerated over
    /// the sample span `[start, end)`.
    pub fn with_cut(seed: u64, tag: u64, sigma: f64, cut: f64, start: i64, end: i64) -> Result<Self> {
        if !(cut > 0.0) {
            return Err(Error::invalid("noise cut", "must be positive"));
        }
        if sigma == 0.0 {
            return Ok(Self::gaussian(seed, tag, 0.0));
        }
        let cut_sigmas = cut / sigma;
        let mut field = Self {
            seed,
            tag,
            sigma,
            cut_sigmas,
            tails: Vec::new(),
        };
        let p = field.tail_probability();
        let span = (end - start).max(0) as f64;
        let lambda = p * span;
        if lambda > 1e-300 && span > 0.0 {
            let mut rng = stream(seed, &[purpose::NOISE_TAIL, tag]);
            let count = Poisson::new(lambda)
                .map_err(|e| Error::invalid("noise tail rate", e.to_string()))?
                .sample(&mut rng) as usize;
            let normal = Normal::standard();
            let mut tails: Vec<(i64, f64)> = (0..count)
                .map(|_| {
                    let idx = rng.random_range(start..end);
                    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                    let z = (-normal.inverse_cdf(u * p / 2.0)).max(cut_sigmas);
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    (idx, sign * z * sigma)
                })
                .collect();
            tails.sort_by_key(|t| t.0);
            tails.dedup_by_key(|t| t.0);
            field.tails = tails;
        }
        Ok(field)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Probability that a single sample falls beyond the body cut.
    pub fn tail_probability(&self) -> f64 {
        if self.cut_sigmas.is_finite() {
            statrs::function::erf::erfc(self.cut_sigmas / std::f64::consts::SQRT_2)
        } else {
            0.0
        }
    }

    /// Enumerated tail samples `(absolute index, value)`, sorted by index.
    pub fn tails(&self) -> &[(i64, f64)] {
        &self.tails
    }

    /// Writes the noise values for samples `start .. start + out.len()`.
    pub fn fill(&self, start: i64, out: &mut [f64]) {
        if self.sigma == 0.0 {
            out.fill(0.0);
            return;
        }
        let end = start + out.len() as i64;
        let mut block_buf = [0.0f64; NOISE_BLOCK as usize];
        let mut block = start.div_euclid(NOISE_BLOCK);
        while block * NOISE_BLOCK < end {
            self.fill_block(block, &mut block_buf);
            let b0 = block * NOISE_BLOCK;
            let lo = start.max(b0);
            let hi = end.min(b0 + NOISE_BLOCK);
            out[(lo - start) as usize..(hi - start) as usize]
                .copy_from_slice(&block_buf[(lo - b0) as usize..(hi - b0) as usize]);
            block += 1;
        }
        let first = self.tails.partition_point(|t| t.0 < start);
        for &(idx, value) in self.tails[first..].iter().take_while(|t| t.0 < end) {
            out[(idx - start) as usize] = value;
        }
    }

    fn fill_block(&self, block: i64, buf: &mut [f64]) {
        // bulk samples use a fast generator keyed per block
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(derive_seed(self.seed, &[self.tag, block as u64]));
        let cut = self.cut_sigmas;
        for slot in buf.iter_mut() {
            let mut z: f64 = StandardNormal.sample(&mut rng);
            while z.abs() >= cut {
                z = StandardNormal.sample(&mut rng);
            }
            *slot = z * self.sigma;
        }
    }
}

//! Counter-keyed random streams.
//!
//! Every random draw in a run comes from a stream keyed by
//! `(run_seed, generation, individual_id, purpose)`. The key is mixed with
//! SplitMix64 into a 256-bit ChaCha12 seed, so a stream's contents depend only
//! on its key and never on evaluation order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier recorded in run metadata and checkpoints.
pub const RNG_ALGORITHM_ID: &str = "chacha12/splitmix64-key/ziggurat-normal";

type Rng = ChaCha12Rng;

/// What a stream is used for. Distinct purposes give independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Purpose {
    Init,
    Mutation,
    Episode(u32),
    Basis,
    Baseline,
    Landscape,
    Custom(u32),
}

impl Purpose {
    pub fn tag(self) -> u64 {
        match self {
            Purpose::Init => 1,
            Purpose::Mutation => 2,
            Purpose::Basis => 3,
            Purpose::Baseline => 4,
            Purpose::Landscape => 5,
            Purpose::Episode(k) => 0x1_0000_0000 | k as u64,
            Purpose::Custom(k) => 0x2_0000_0000 | k as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub run_seed: u64,
    pub generation: u64,
    pub individual_id: u64,
    pub purpose: Purpose,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(run_seed: u64, generation: u64, individual_id: u64, purpose: Purpose) -> Self {
        Self {
            run_seed,
            generation,
            individual_id,
            purpose,
        }
    }

    fn seed(&self) -> [u8; 32] {
        let mut state = 0x5EED_0F_6A11_u64;
        for word in [
            self.run_seed,
            self.generation,
            self.individual_id,
            self.purpose.tag(),
        ] {
            state ^= word;
            splitmix64(&mut state);
        }
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        seed
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> Rng {
        Rng::from_seed(self.seed())
    }
}

/// `n` i.i.d. draws from `N(mean, std²)`, read from the start of `stream`.
pub fn gaussian_sample(stream: &RngStream, n: usize, mean: f64, std: f64) -> Result<Vec<f64>> {
    let mut rng = stream.rng();
    gaussian_fill(&mut rng, n, mean, std)
}

pub(crate) fn gaussian_fill<R: rand::Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    mean: f64,
    std: f64,
) -> Result<Vec<f64>> {
    if std < 0.0 || std.is_nan() {
        return Err(Error::NegativeStd(std));
    }
    if std == 0.0 {
        return Ok(vec![mean; n]);
    }
    Ok((0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            mean + std * z
        })
        .collect())
}

#[inline]
pub(crate) fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(purpose: Purpose) -> RngStream {
        RngStream::new(42, 3, 7, purpose)
    }

    #[test]
    fn zero_std_is_constant() {
        let v = gaussian_sample(&stream(Purpose::Init), 3, 0.0, 0.0).unwrap();
        assert_eq!(v, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn replay_is_identical() {
        let a = gaussian_sample(&stream(Purpose::Mutation), 64, 1.0, 2.0).unwrap();
        let b = gaussian_sample(&stream(Purpose::Mutation), 64, 1.0, 2.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn negative_std_errors() {
        assert!(matches!(
            gaussian_sample(&stream(Purpose::Init), 3, 0.0, -1.0),
            Err(Error::NegativeStd(_))
        ));
    }

    #[test]
    fn sample_variance_bound() {
        let v = gaussian_sample(&stream(Purpose::Init), 100_000, 0.0, 1.0).unwrap();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((0.97..=1.03).contains(&var), "variance {var}");
    }

    #[test]
    fn purposes_are_uncorrelated() {
        let n = 100_000;
        let a = gaussian_sample(&stream(Purpose::Init), n, 0.0, 1.0).unwrap();
        let b = gaussian_sample(&stream(Purpose::Mutation), n, 0.0, 1.0).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (ma, mb) = (mean(&a), mean(&b));
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        let r = cov / (va * vb).sqrt();
        assert!(r.abs() < 0.02, "pearson r = {r}");
    }

    #[test]
    fn distinct_keys_give_distinct_streams() {
        let base = RngStream::new(1, 2, 3, Purpose::Episode(0));
        let others = [
            RngStream::new(2, 2, 3, Purpose::Episode(0)),
            RngStream::new(1, 3, 3, Purpose::Episode(0)),
            RngStream::new(1, 2, 4, Purpose::Episode(0)),
            RngStream::new(1, 2, 3, Purpose::Episode(1)),
        ];
        let first = gaussian_sample(&base, 4, 0.0, 1.0).unwrap();
        for o in others {
            assert_ne!(first, gaussian_sample(&o, 4, 0.0, 1.0).unwrap());
        }
    }
}

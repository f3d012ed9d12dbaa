//! Seeded, platform-independent randomness.
//!
//! Every noise source draws from its own ChaCha8 stream keyed by the run
//! seed, so enabling or disabling one source never shifts another's
//! realization. Scan points get independent seeds from [`derive_seed`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Stream identifiers, one per noise source and channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseStream {
    RinWhite,
    ShotA,
    ShotB,
    ElectronicA,
    ElectronicB,
    /// One stream per relaxation process of the 1/f synthesizer.
    RinPink(u32),
    /// Free for tests and tools.
    Auxiliary(u32),
}

impl NoiseStream {
    pub fn id(self) -> u64 {
        match self {
            NoiseStream::RinWhite => 1,
            NoiseStream::ShotA => 2,
            NoiseStream::ShotB => 3,
            NoiseStream::ElectronicA => 4,
            NoiseStream::ElectronicB => 5,
            NoiseStream::RinPink(j) => 0x100 + u64::from(j),
            NoiseStream::Auxiliary(j) => 0x1_0000 + u64::from(j),
        }
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `index`-th child of `seed`: `mix64(seed + (index+1)·φ64)`.
/// Depends only on the pair, so scans are order-independent.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix64(seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Independent generator for one noise source.
pub fn stream(seed: u64, which: NoiseStream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}

/// Standard-normal sampler over a dedicated stream.
pub struct Gaussian {
    rng: ChaCha8Rng,
}

impl Gaussian {
    pub fn new(seed: u64, which: NoiseStream) -> Self {
        Gaussian {
            rng: stream(seed, which),
        }
    }

    #[inline]
    pub fn sample(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

//! Seeded, splittable random streams.
//!
//! Every consumer derives its own [`RngKey`] from an experiment seed by
//! labelled splitting, so a path bundle or an ensemble member is bit-identical
//! no matter which thread produced it or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Identifies one independent counter-based stream (ChaCha8 key + stream id).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngKey {
    seed: u64,
    stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngKey {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent child stream. Distinct tags give distinct streams.
    pub fn child(&self, tag: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(tag.wrapping_add(0x5851_F42D_4C95_7F2D))),
        }
    }

    /// Child stream keyed by a string label, for readable call sites.
    pub fn named(&self, label: &str) -> Self {
        let tag = label
            .bytes()
            .fold(0xCBF2_9CE4_8422_2325_u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01B3));
        self.child(tag)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// `n` Brownian increments with variance `dt`.
pub fn brownian_increments<R: rand::Rng + ?Sized>(rng: &mut R, n: usize, dt: f64) -> Vec<f64> {
    let sd = dt.sqrt();
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * sd
        })
        .collect()
}

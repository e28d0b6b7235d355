//! Counter-based random streams.
//!
//! Every random draw in the engines comes from a generator that is a pure
//! function of a [`StreamKey`] and a `(t, i)` counter pair, typically the time
//! index and the particle slot. Work can therefore be scheduled on any number
//! of threads without changing a single sampled value.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// The generator handed to samplers.
pub type StreamRng = Xoshiro256PlusPlus;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Root of a tree of independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey(splitmix64(seed ^ 0x005E_ED0F_5EED))
    }

    /// Derive an independent sub-key, e.g. for a chain or an iteration.
    pub fn child(self, index: u64) -> Self {
        StreamKey(splitmix64(self.0 ^ splitmix64(index.wrapping_add(0xA5A5_A5A5))))
    }

    /// Generator for counter `(t, i)` under this key.
    pub fn rng(self, t: u64, i: u64) -> StreamRng {
        let h = splitmix64(self.0 ^ t.wrapping_mul(0xD1B5_4A32_D192_ED03));
        let h = splitmix64(h ^ i.wrapping_mul(0x8CB9_2BA7_2F3D_8DD7));
        StreamRng::seed_from_u64(h)
    }

    pub fn raw(self) -> u64 {
        self.0
    }
}

/// Counter slot reserved for draws that are not tied to a particle (final selection, etc.).
pub const AUX_SLOT: u64 = u64::MAX;

//! Named random streams derived from one root seed.
//!
//! Every randomness source gets its own ChaCha stream per node, so turning a
//! source on or off (or changing how many draws it makes) never shifts the
//! draws seen by any other source.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamKind {
    Channel = 1,
    Harvest = 2,
    Transmission = 3,
    /// Collision and decoding draws for packets sent by the node.
    Link = 4,
    PlantNoise = 5,
    Availability = 6,
}

/// Deterministic stream for `(seed, kind, node)`.
pub fn stream(seed: u64, kind: StreamKind, node: usize) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((kind as u64) << 32) | node as u64);
    rng
}

/// One stream of `kind` per node.
pub fn node_streams(seed: u64, kind: StreamKind, nodes: usize) -> Vec<StreamRng> {
    (0..nodes).map(|i| stream(seed, kind, i)).collect()
}

/// SplitMix64 finalizer, used to derive sub-run seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

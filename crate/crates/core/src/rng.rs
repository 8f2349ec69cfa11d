//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by a base seed and a stream label, so independent consumers never
//! share state and results do not depend on call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix(mix(seed) ^ mix(stream.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stream))
}

pub fn gaussian(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

// Stream labels. Kept in one place so no two consumers collide.
pub(crate) const STREAM_IDENTITIES: u64 = 1;
pub(crate) const STREAM_RENDER_MAP: u64 = 2;
pub(crate) const STREAM_TRAIN_SCENES: u64 = 3;
pub(crate) const STREAM_QUERY_SCENES: u64 = 4;
pub(crate) const STREAM_GALLERY_SCENES: u64 = 5;
pub(crate) const STREAM_DISTRACTORS: u64 = 6;
pub(crate) const STREAM_ENCODER_INIT: u64 = 16;
pub(crate) const STREAM_SHUFFLE: u64 = 17;
pub(crate) const STREAM_DETECTIONS: u64 = 32;
pub(crate) const STREAM_GALLERY_SAMPLER: u64 = 48;

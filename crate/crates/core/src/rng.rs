//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed from a base seed plus a tag path, so per-view draws do not depend
//! on the order in which views are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::image::Image;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix(base), |acc, &t| splitmix(acc ^ splitmix(t)))
}

pub fn seeded(base: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, tags))
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_image(width: usize, height: usize, channels: usize, rng: &mut Rng) -> Image {
    Image::from_fn(width, height, channels, |_, _, _| standard_normal(rng))
}

/// Stream tags, kept distinct so unrelated draws never share a generator.
pub mod stream {
    pub const INIT_LATENT: u64 = 1;
    pub const STEP_NOISE: u64 = 2;
    pub const HALLUCINATION: u64 = 3;
    pub const SCENE_INIT: u64 = 4;
    pub const FIT_BATCH: u64 = 5;
    pub const SYNTHETIC: u64 = 6;
    pub const TRAINING: u64 = 7;
}

//! Counter-keyed Gaussian noise.
//!
//! Every random draw in the crate is addressed by `(seed, domain, nonce)`:
//! the seed and domain select a ChaCha key, the nonce selects the stream.
//! Draws for different nonces are independent, and a given address always
//! yields the same vector, so runs never share mutable generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub(crate) enum Domain {
    InitialNoise = 0x6d63_6667_5f7a_5401,
    Perturbation = 0x6d63_6667_5f70_6502,
    CleanSample = 0x6d63_6667_5f63_6c03,
    Cads = 0x6d63_6667_5f63_6104,
    Prototypes = 0x6d63_6667_5f70_7205,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub(crate) fn stream(seed: u64, domain: Domain, nonce: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(domain as u64)));
    rng.set_stream(nonce);
    rng
}

/// `len` independent standard normals at address `(seed, domain, nonce)`.
pub(crate) fn normal_vec(seed: u64, domain: Domain, nonce: u64, len: usize) -> Vec<f64> {
    let mut rng = stream(seed, domain, nonce);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

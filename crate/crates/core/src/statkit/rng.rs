//! Reproducible, splittable random streams.
//!
//! A [`StreamRng`] is identified by a `(seed, stream)` pair and backed by
//! ChaCha8, whose native 64-bit stream selector gives independent
//! sequences for every stream id under the same key. Parallel work derives
//! child streams with [`StreamRng::fork`], so the variates a chunk sees
//! depend only on the chunk's identity and never on scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct StreamRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl StreamRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh generator on a child stream. The child id is a pure function
    /// of `(self.stream, child)`; the parent's position is irrelevant.
    pub fn fork(&self, child: u64) -> Self {
        let id = splitmix64(splitmix64(self.stream) ^ child.wrapping_mul(0xd605_bbb5_8c8a_bb9d));
        Self::new(self.seed, id)
    }

    /// Uniform on the open interval (0, 1).
    pub fn open01(&mut self) -> f64 {
        // 53 random bits, shifted half an ulp off zero
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

//! Splittable, counter-based random streams.
//!
//! Every draw in the simulator comes from an [`RngStream`] identified by a
//! `(seed, stream id)` pair. Child streams are derived by hashing a label into
//! the parent's stream id, so the draws seen by one layer or tensor never depend
//! on how many draws another consumer made before it.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Child stream for a numeric label. Does not advance `self`.
    pub fn derive(&self, label: u64) -> Self {
        Self::with_stream(self.seed, mix64(self.stream ^ mix64(label ^ 0x94D0_49BB_1331_11EB)))
    }

    /// Child stream for a textual label, e.g. `"weight-fault"`.
    pub fn derive_str(&self, label: &str) -> Self {
        self.derive(fnv1a64(label.as_bytes()))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(rand_distr::StandardNormal)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.rng);
    }

    /// Indices in `0..n` of a Bernoulli(p) process, drawn by geometric gap
    /// skipping. Distributionally identical to `n` independent coin flips.
    pub fn bernoulli_sites(&mut self, n: usize, p: f64) -> Vec<usize> {
        if n == 0 || p <= 0.0 {
            return Vec::new();
        }
        if p >= 1.0 {
            return (0..n).collect();
        }
        let log_q = (-p).ln_1p();
        let mut sites = Vec::with_capacity(((n as f64) * p * 1.2) as usize + 4);
        let mut pos = 0usize;
        loop {
            // 1 - U lies in (0, 1], so the log is finite.
            let u = 1.0 - self.uniform();
            let gap = (u.ln() / log_q).floor();
            if !gap.is_finite() || gap >= (n - pos) as f64 {
                break;
            }
            pos += gap as usize;
            sites.push(pos);
            pos += 1;
            if pos >= n {
                break;
            }
        }
        sites
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

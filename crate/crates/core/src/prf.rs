//! Deterministic randomness.
//!
//! [`Prf`] is `hash0` in counter mode over `(seed, purpose tag, counter)`;
//! watermark material is drawn from it so anyone holding a key can
//! regenerate it. [`Seed`] splits one top-level seed into independent
//! labelled children so a whole run is reproducible from a single number.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{hash0, Digest};

pub struct Prf {
    seed: [u8; 32],
    tag: Vec<u8>,
    counter: u64,
    block: [u8; 32],
    used: usize,
}

impl Prf {
    pub fn new(seed: &[u8; 32], tag: &str) -> Self {
        Prf {
            seed: *seed,
            tag: tag.as_bytes().to_vec(),
            counter: 0,
            block: [0; 32],
            used: 32,
        }
    }

    /// The `counter`-th output block for `(seed, tag)`.
    pub fn block(seed: &[u8; 32], tag: &str, counter: u64) -> Digest {
        let mut msg = Vec::with_capacity(32 + 2 + tag.len() + 8);
        msg.extend_from_slice(seed);
        msg.extend_from_slice(&(tag.len() as u16).to_le_bytes());
        msg.extend_from_slice(tag.as_bytes());
        msg.extend_from_slice(&counter.to_le_bytes());
        hash0(&msg)
    }

    fn refill(&mut self) {
        let tag = std::str::from_utf8(&self.tag).expect("tag constructed from &str");
        self.block = Prf::block(&self.seed, tag, self.counter).0;
        self.counter += 1;
        self.used = 0;
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform integer in `[0, n)` by rejection sampling.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.unit();
        let u2 = self.unit();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// `k` distinct indices from `[0, n)` in draw order.
    pub fn distinct(&mut self, k: usize, n: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} distinct values from {n}");
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let v = self.below(n as u64) as usize;
            if !out.contains(&v) {
                out.push(v);
            }
        }
        out
    }
}

impl RngCore for Prf {
    fn next_u32(&mut self) -> u32 {
        self.next_u64() as u32
    }

    fn next_u64(&mut self) -> u64 {
        let mut b = [0u8; 8];
        self.fill_bytes(&mut b);
        u64::from_le_bytes(b)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for byte in dst {
            if self.used == 32 {
                self.refill();
            }
            *byte = self.block[self.used];
            self.used += 1;
        }
    }
}

/// A node in the seed tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed(pub [u8; 32]);

impl Seed {
    pub fn from_u64(seed: u64) -> Self {
        let mut msg = b"msign/root-seed".to_vec();
        msg.extend_from_slice(&seed.to_le_bytes());
        Seed(hash0(&msg).0)
    }

    pub fn child(&self, label: &str) -> Seed {
        self.child_idx(label, 0)
    }

    pub fn child_idx(&self, label: &str, index: u64) -> Seed {
        Seed(Prf::block(&self.0, &format!("seed/{label}"), index).0)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.0)
    }

    pub fn prf(&self, tag: &str) -> Prf {
        Prf::new(&self.0, tag)
    }
}

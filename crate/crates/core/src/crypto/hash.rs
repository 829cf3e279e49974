use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

/// Output length of every hash in the protocol, in bytes.
pub const DIGEST_LEN: usize = 32;

const HASH0_DOMAIN: u8 = 0x00;
const HASH2_DOMAIN: u8 = 0x02;

/// A 256-bit hash output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        let arr: [u8; DIGEST_LEN] = bytes.try_into().ok()?;
        Some(Digest(arr))
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        let arr: [u8; DIGEST_LEN] = bytes.try_into().ok()?;
        Some(Digest(arr))
    }

    /// Number of differing bits between two digests.
    pub fn hamming(&self, other: &Digest) -> u32 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    /// Copy of this digest with bit `bit` (0..256) flipped.
    pub fn with_bit_flipped(&self, bit: usize) -> Digest {
        let mut out = *self;
        out.0[bit / 8] ^= 1 << (bit % 8);
        out
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 hex chars"))
    }
}

/// Preimage-resistant message hash.
pub fn hash0(message: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update([HASH0_DOMAIN]);
    h.update(message);
    Digest(h.finalize().into())
}

/// Two-to-one compression used as the Merkle reduction operator.
pub fn hash2(left: &Digest, right: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update([HASH2_DOMAIN]);
    h.update(left.0);
    h.update(right.0);
    Digest(h.finalize().into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // sha256(0x00), computed once with sha256sum and pinned.
    const HASH0_EMPTY: &str = "6e340b9cffb37a989ca544e6bb780a2c78901d3fb33738768511a30617afa01d";

    #[test]
    fn hash0_empty_golden() {
        assert_eq!(hash0(b"").to_hex(), HASH0_EMPTY);
    }

    #[test]
    fn hash0_is_deterministic() {
        assert_eq!(hash0(b"merkle"), hash0(b"merkle"));
        assert_ne!(hash0(b"merkle"), hash0(b"merkl3"));
    }

    #[test]
    fn hash0_avalanche() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let len = rng.random_range(1..128);
            let msg: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            let mut flipped = msg.clone();
            let bit = rng.random_range(0..len * 8);
            flipped[bit / 8] ^= 1 << (bit % 8);
            let d = hash0(&msg).hamming(&hash0(&flipped));
            assert!(d >= 100, "only {d} bits differ");
        }
    }

    #[test]
    fn hash2_order_sensitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let a = Digest(rng.random());
            let b = Digest(rng.random());
            assert_ne!(a, b);
            assert_ne!(hash2(&a, &b), hash2(&b, &a));
            assert_eq!(hash2(&a, &b), hash2(&a, &b));
        }
    }

    #[test]
    fn domain_separation() {
        let a = Digest([1; 32]);
        let b = Digest([2; 32]);
        let mut concat = a.0.to_vec();
        concat.extend_from_slice(&b.0);
        assert_ne!(hash0(&concat), hash2(&a, &b));
    }

    #[test]
    fn hex_roundtrip() {
        let d = hash0(b"x");
        assert_eq!(Digest::from_hex(&d.to_hex()), Some(d));
        assert_eq!(Digest::from_hex("abcd"), None);
    }
}

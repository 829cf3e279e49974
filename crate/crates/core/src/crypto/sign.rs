use std::fmt;

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::codec::{canonical_encode, Canonical, CodecError};
use super::hash::{hash0, Digest};

pub const SIGNATURE_LEN: usize = 64;

/// Opaque participant identifier.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AuthorId(pub String);

impl AuthorId {
    pub fn new(s: impl Into<String>) -> Self {
        AuthorId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for AuthorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for AuthorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AuthorId {
    fn from(s: &str) -> Self {
        AuthorId(s.to_string())
    }
}

/// Ed25519 verification key.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct PublicKey(VerifyingKey);

impl PublicKey {
    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8; 32]) -> Option<Self> {
        VerifyingKey::from_bytes(bytes).ok().map(PublicKey)
    }

    /// Ed25519 verification; malformed signatures simply fail.
    pub fn verify(&self, message: &[u8], signature: &[u8]) -> bool {
        let Ok(sig) = ed25519_dalek::Signature::from_slice(signature) else {
            return false;
        };
        self.0.verify_strict(message, &sig).is_ok()
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", &hex::encode(self.to_bytes())[..16])
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.to_bytes()))
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes: [u8; 32] = hex::decode(&s)
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| serde::de::Error::custom("expected 64 hex chars"))?;
        PublicKey::from_bytes(&bytes).ok_or_else(|| serde::de::Error::custom("invalid point"))
    }
}

/// A participant's signing key pair. Ed25519 signatures are deterministic,
/// so everything signed with an identity can be recomputed bit for bit.
#[derive(Clone)]
pub struct SigningIdentity {
    author_id: AuthorId,
    signing: SigningKey,
}

impl SigningIdentity {
    pub fn from_seed(author_id: AuthorId, seed: [u8; 32]) -> Self {
        SigningIdentity {
            author_id,
            signing: SigningKey::from_bytes(&seed),
        }
    }

    pub fn author_id(&self) -> &AuthorId {
        &self.author_id
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key())
    }

    pub fn sign(&self, message: &[u8]) -> Vec<u8> {
        self.signing.sign(message).to_bytes().to_vec()
    }
}

impl fmt::Debug for SigningIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningIdentity")
            .field("author_id", &self.author_id)
            .field("public_key", &self.public_key())
            .finish_non_exhaustive()
    }
}

/// A Merkle leaf produced by signing an object: the leaf digest is
/// `hash0(sig)` where `sig` signs `hash0(canonical_encode(object))`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedLeaf {
    pub digest: Digest,
    #[serde(with = "hex_bytes")]
    pub signature: Vec<u8>,
}

pub fn hash1_sign<T: Canonical>(identity: &SigningIdentity, object: &T) -> Result<SignedLeaf, CodecError> {
    let message = hash0(&canonical_encode(object)?);
    let signature = identity.sign(message.as_bytes());
    Ok(SignedLeaf {
        digest: hash0(&signature),
        signature,
    })
}

/// Checks that `signature` signs the object under `public_key` and that the
/// leaf digest is the hash of that signature.
pub fn verify_leaf<T: Canonical>(public_key: &PublicKey, object: &T, claimed_leaf: &Digest, signature: &[u8]) -> bool {
    let Ok(bytes) = canonical_encode(object) else {
        return false;
    };
    hash0(signature) == *claimed_leaf && public_key.verify(hash0(&bytes).as_bytes(), signature)
}

pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity(rng: &mut impl Rng, name: &str) -> SigningIdentity {
        SigningIdentity::from_seed(AuthorId::new(name), rng.random())
    }

    #[test]
    fn hash1_sign_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let id = identity(&mut rng, "a");
        let obj = hash0(b"object");
        assert_eq!(hash1_sign(&id, &obj).unwrap(), hash1_sign(&id, &obj).unwrap());
    }

    #[test]
    fn distinct_identities_give_distinct_leaves() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = identity(&mut rng, "a");
        let b = identity(&mut rng, "b");
        let obj = hash0(b"object");
        assert_ne!(
            hash1_sign(&a, &obj).unwrap().digest,
            hash1_sign(&b, &obj).unwrap().digest
        );
    }

    #[test]
    fn verify_leaf_roundtrip_and_tamper() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = identity(&mut rng, "a");
        let b = identity(&mut rng, "b");
        let obj = hash0(b"object");
        let leaf = hash1_sign(&a, &obj).unwrap();
        assert!(verify_leaf(&a.public_key(), &obj, &leaf.digest, &leaf.signature));
        assert!(!verify_leaf(
            &a.public_key(),
            &obj,
            &leaf.digest.with_bit_flipped(17),
            &leaf.signature
        ));
        assert!(!verify_leaf(
            &a.public_key(),
            &hash0(b"other"),
            &leaf.digest,
            &leaf.signature
        ));

        let by_b = hash1_sign(&b, &obj).unwrap();
        assert!(!verify_leaf(&a.public_key(), &obj, &by_b.digest, &by_b.signature));
        assert!(!verify_leaf(&a.public_key(), &obj, &leaf.digest, &[0u8; 3]));
    }

    #[test]
    fn signatures_do_not_cross_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for i in 0..1000 {
            let a = identity(&mut rng, "a");
            let b = identity(&mut rng, "b");
            let obj = hash0(&(i as u64).to_le_bytes());
            let leaf = hash1_sign(&a, &obj).unwrap();
            assert!(!verify_leaf(&b.public_key(), &obj, &leaf.digest, &leaf.signature));
        }
    }
}

//! Hashes, signatures, the Merkle combinator and canonical encoding.

mod broadcast;
mod codec;
mod hash;
mod merkle;
mod sign;

pub use broadcast::{Broadcast, BroadcastBody, ModelInfo, PROTOCOL_VERSION};
pub use codec::{canonical_decode, canonical_encode, Canonical, CodecError, Decoder, Encoder};
pub use hash::{hash0, hash2, Digest, DIGEST_LEN};
pub use merkle::{
    build_merkle, position_label, prove_membership, verify_membership, AuthPath, MerkleError, MerkleTree, Sibling,
};
pub(crate) use sign::hex_bytes;
pub use sign::{hash1_sign, verify_leaf, AuthorId, PublicKey, SignedLeaf, SigningIdentity, SIGNATURE_LEN};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::crypto::{hex_bytes, AuthPath, AuthorId, Broadcast, ModelInfo, PublicKey};
use crate::watermark::{Key, VerifierSpec};

/// A signed Merkle leaf plus the path from it to the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafProof {
    /// Whose signature produced the leaf.
    pub signer: AuthorId,
    #[serde(with = "hex_bytes")]
    pub signature: Vec<u8>,
    pub path: AuthPath,
}

/// What a claimant hands the community: its key, the verifier, the model
/// info, and proofs that all three are leaves under a broadcast root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub claimant: AuthorId,
    pub key: Key,
    pub verifier: VerifierSpec,
    pub info: ModelInfo,
    pub key_proof: LeafProof,
    pub verifier_proof: LeafProof,
    pub info_proof: LeafProof,
}

impl Evidence {
    /// The authentication path of the key leaf.
    pub fn auth_path(&self) -> &AuthPath {
        &self.key_proof.path
    }
}

/// Everything the community can see: registered public keys and the log
/// of broadcasts in publication order.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PublicRecord {
    directory: BTreeMap<AuthorId, PublicKey>,
    broadcasts: Vec<Broadcast>,
}

impl PublicRecord {
    pub fn register(&mut self, id: AuthorId, key: PublicKey) {
        self.directory.insert(id, key);
    }

    pub fn publish(&mut self, broadcast: Broadcast) {
        self.broadcasts.push(broadcast);
    }

    pub fn public_key(&self, id: &AuthorId) -> Option<&PublicKey> {
        self.directory.get(id)
    }

    pub fn broadcasts(&self) -> &[Broadcast] {
        &self.broadcasts
    }

    pub fn contains(&self, broadcast: &Broadcast) -> bool {
        self.broadcasts.iter().any(|b| b == broadcast)
    }

    /// Adds everything in `other` that is not already present.
    pub fn merge(&mut self, other: &PublicRecord) {
        for (id, pk) in &other.directory {
            self.directory.entry(id.clone()).or_insert(*pk);
        }
        for b in &other.broadcasts {
            if !self.contains(b) {
                self.broadcasts.push(b.clone());
            }
        }
    }
}

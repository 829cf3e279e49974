//! `Merkle(KEYs, VERs, info)`: every object is signed into a leaf by its
//! owner, leaves are ordered keys first, then verifiers, then info.

use crate::crypto::{
    hash1_sign, AuthorId, Canonical, CodecError, Digest, MerkleTree, ModelInfo, SignedLeaf, SigningIdentity,
};
use crate::verify::{Evidence, LeafProof};
use crate::watermark::{Key, VerifierSpec};

use super::FlError;

/// An object together with the leaf its signer derived from it.
#[derive(Clone, Debug, PartialEq)]
pub struct Signed<T> {
    pub item: T,
    pub signer: AuthorId,
    pub leaf: SignedLeaf,
}

impl<T: Canonical> Signed<T> {
    pub fn new(identity: &SigningIdentity, item: T) -> Result<Self, CodecError> {
        let leaf = hash1_sign(identity, &item)?;
        Ok(Signed {
            item,
            signer: identity.author_id().clone(),
            leaf,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Commitment {
    pub keys: Vec<Signed<Key>>,
    pub verifiers: Vec<Signed<VerifierSpec>>,
    pub info: Signed<ModelInfo>,
    pub tree: MerkleTree,
}

impl Commitment {
    /// `keys[i]` pairs with `verifiers[i]`.
    pub fn build(
        keys: Vec<Signed<Key>>,
        verifiers: Vec<Signed<VerifierSpec>>,
        info: Signed<ModelInfo>,
    ) -> Result<Self, FlError> {
        if keys.len() != verifiers.len() {
            return Err(FlError::ShapeMismatch {
                expected: keys.len(),
                got: verifiers.len(),
            });
        }
        let leaves: Vec<Digest> = keys
            .iter()
            .map(|k| k.leaf.digest)
            .chain(verifiers.iter().map(|v| v.leaf.digest))
            .chain(std::iter::once(info.leaf.digest))
            .collect();
        let tree = MerkleTree::build(&leaves)?;
        Ok(Commitment {
            keys,
            verifiers,
            info,
            tree,
        })
    }

    pub fn root(&self) -> Digest {
        self.tree.root()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Index of the first key owned by `id`.
    pub fn position(&self, id: &AuthorId) -> Option<usize> {
        self.keys.iter().position(|k| &k.item.author_id == id)
    }

    fn proof(&self, leaf_index: usize, signer: &AuthorId, leaf: &SignedLeaf) -> LeafProof {
        LeafProof {
            signer: signer.clone(),
            signature: leaf.signature.clone(),
            path: self.tree.prove(leaf_index).expect("leaf index within tree"),
        }
    }

    /// Evidence for the `i`-th key, claimed by that key's owner.
    pub fn evidence(&self, i: usize) -> Evidence {
        let n = self.keys.len();
        let (k, v, info) = (&self.keys[i], &self.verifiers[i], &self.info);
        Evidence {
            claimant: k.item.author_id.clone(),
            key: k.item.clone(),
            verifier: v.item.clone(),
            info: info.item.clone(),
            key_proof: self.proof(i, &k.signer, &k.leaf),
            verifier_proof: self.proof(n + i, &v.signer, &v.leaf),
            info_proof: self.proof(2 * n, &info.signer, &info.leaf),
        }
    }
}

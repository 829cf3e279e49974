//! Binary Merkle tree with `hash2` as the reduction and per-node position
//! labels. A node's label is its path from the root, `0` for a left branch
//! and `1` for a right one, so in a height-3 tree the second leaf is `001`
//! and its parent is `00`.
//!
//! A level with an odd number of nodes is padded by duplicating its last
//! node. Padded positions are recorded so a reader can tell them apart.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::hash::{hash2, Digest};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MerkleError {
    #[error("cannot build a Merkle tree with no leaves")]
    EmptyLeaves,
    #[error("leaf index {index} out of range for {count} leaves")]
    IndexOutOfRange { index: usize, count: usize },
}

/// Position label of node `index` on a level `width` edges below the root.
pub fn position_label(width: usize, index: u64) -> String {
    (0..width)
        .rev()
        .map(|bit| if (index >> bit) & 1 == 1 { '1' } else { '0' })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerkleTree {
    leaf_digests: Vec<Digest>,
    /// Every node except the root, keyed by position label.
    nodes: BTreeMap<String, Digest>,
    root: Digest,
    height: usize,
    /// Labels of nodes that exist only because a level was padded.
    padding: Vec<String>,
}

impl MerkleTree {
    pub fn build(leaves: &[Digest]) -> Result<Self, MerkleError> {
        if leaves.is_empty() {
            return Err(MerkleError::EmptyLeaves);
        }
        let height = leaves.len().next_power_of_two().trailing_zeros() as usize;
        let mut nodes = BTreeMap::new();
        let mut padding = Vec::new();
        let mut level: Vec<Digest> = leaves.to_vec();

        for depth in (1..=height).rev() {
            if level.len() % 2 == 1 {
                let last = *level.last().expect("level is non-empty");
                padding.push(position_label(depth, level.len() as u64));
                level.push(last);
            }
            for (i, d) in level.iter().enumerate() {
                nodes.insert(position_label(depth, i as u64), *d);
            }
            level = level.chunks_exact(2).map(|p| hash2(&p[0], &p[1])).collect();
        }
        debug_assert_eq!(level.len(), 1);

        Ok(MerkleTree {
            leaf_digests: leaves.to_vec(),
            nodes,
            root: level[0],
            height,
            padding,
        })
    }

    pub fn root(&self) -> Digest {
        self.root
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_digests.len()
    }

    pub fn leaves(&self) -> &[Digest] {
        &self.leaf_digests
    }

    pub fn nodes(&self) -> &BTreeMap<String, Digest> {
        &self.nodes
    }

    pub fn node(&self, label: &str) -> Option<Digest> {
        if label.is_empty() {
            Some(self.root)
        } else {
            self.nodes.get(label).copied()
        }
    }

    pub fn padding(&self) -> &[String] {
        &self.padding
    }

    pub fn leaf_label(&self, index: usize) -> String {
        position_label(self.height, index as u64)
    }

    pub fn prove(&self, leaf_index: usize) -> Result<AuthPath, MerkleError> {
        if leaf_index >= self.leaf_count() {
            return Err(MerkleError::IndexOutOfRange {
                index: leaf_index,
                count: self.leaf_count(),
            });
        }
        let siblings = (0..self.height)
            .map(|up| {
                let idx = (leaf_index as u64 >> up) ^ 1;
                let label = position_label(self.height - up, idx);
                let digest = self.nodes[&label];
                Sibling { label, digest }
            })
            .collect();
        Ok(AuthPath {
            leaf_index: leaf_index as u64,
            leaf_digest: self.leaf_digests[leaf_index],
            siblings,
        })
    }
}

pub fn build_merkle(leaves: &[Digest]) -> Result<MerkleTree, MerkleError> {
    MerkleTree::build(leaves)
}

pub fn prove_membership(tree: &MerkleTree, leaf_index: usize) -> Result<AuthPath, MerkleError> {
    tree.prove(leaf_index)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sibling {
    pub label: String,
    pub digest: Digest,
}

/// Sibling digests from a leaf up to (not including) the root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthPath {
    pub leaf_index: u64,
    pub leaf_digest: Digest,
    pub siblings: Vec<Sibling>,
}

impl AuthPath {
    pub fn leaf_label(&self) -> String {
        position_label(self.siblings.len(), self.leaf_index)
    }

    /// Root obtained by folding the leaf through the siblings, or `None`
    /// when a sibling label does not sit where the leaf index says it must.
    pub fn fold(&self) -> Option<Digest> {
        let height = self.siblings.len();
        if height >= 64 || (height < 64 && self.leaf_index >> height != 0) {
            return None;
        }
        let mut current = self.leaf_digest;
        for (up, sib) in self.siblings.iter().enumerate() {
            let idx = self.leaf_index >> up;
            if sib.label != position_label(height - up, idx ^ 1) {
                return None;
            }
            current = if idx & 1 == 0 {
                hash2(&current, &sib.digest)
            } else {
                hash2(&sib.digest, &current)
            };
        }
        Some(current)
    }
}

pub fn verify_membership(path: &AuthPath, root: &Digest) -> bool {
    path.fold().is_some_and(|r| r == *root)
}

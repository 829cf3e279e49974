mod common;

use msign::crypto::{
    build_merkle, hash0, hash1_sign, hash2, verify_leaf, verify_membership, AuthorId, Digest, SigningIdentity,
};
use proptest::prelude::*;

use common::{leaf_sha, node_sha, reference_root, sha};

fn leaves(seed: u64, n: usize) -> Vec<Digest> {
    (0..n)
        .map(|i| hash0(&[seed.to_le_bytes(), (i as u64).to_le_bytes()].concat()))
        .collect()
}

#[test]
fn hashes_match_sha256() {
    assert_eq!(hash0(b"abc").0, leaf_sha(b"abc"));
    // SHA-256 of the single byte 0x00.
    assert_eq!(
        hash0(b"").to_hex(),
        "6e340b9cffb37a989ca544e6bb780a2c78901d3fb33738768511a30617afa01d"
    );
    let (a, b) = (hash0(b"a"), hash0(b"b"));
    assert_eq!(hash2(&a, &b).0, node_sha(&a.0, &b.0));
    assert_ne!(hash2(&a, &b).0, sha(&[a.0, b.0].concat()));
    assert_ne!(hash2(&a, &b), hash2(&b, &a));
}

#[test]
fn roots_match_reference_for_1_to_64_leaves() {
    for n in 1..=64 {
        let l = leaves(n as u64, n);
        let tree = build_merkle(&l).unwrap();
        let raw: Vec<[u8; 32]> = l.iter().map(|d| d.0).collect();
        assert_eq!(tree.root().0, reference_root(&raw), "{n} leaves");
        assert_eq!(build_merkle(&l).unwrap(), tree);
    }
}

#[test]
fn exhaustive_single_bit_tamper_on_four_leaves() {
    let l = leaves(4, 4);
    let tree = build_merkle(&l).unwrap();
    let root = tree.root();
    for i in 0..4 {
        let path = tree.prove(i).unwrap();
        assert!(verify_membership(&path, &root));
        for bit in 0..256 {
            let mut p = path.clone();
            p.leaf_digest = p.leaf_digest.with_bit_flipped(bit);
            assert!(!verify_membership(&p, &root), "leaf {i} bit {bit}");
            for s in 0..p.siblings.len() {
                let mut q = path.clone();
                q.siblings[s].digest = q.siblings[s].digest.with_bit_flipped(bit);
                assert!(!verify_membership(&q, &root), "leaf {i} sibling {s} bit {bit}");
            }
            assert!(!verify_membership(&path, &root.with_bit_flipped(bit)));
        }
        for other in (0..4u64).filter(|&j| j != i as u64) {
            let mut p = path.clone();
            p.leaf_index = other;
            assert!(!verify_membership(&p, &root));
        }
    }
}

#[test]
fn signed_leaves_are_deterministic_and_bound_to_signer() {
    let alice = SigningIdentity::from_seed(AuthorId::new("alice"), [1; 32]);
    let bob = SigningIdentity::from_seed(AuthorId::new("bob"), [2; 32]);
    let object = hash0(b"payload");
    let a1 = hash1_sign(&alice, &object).unwrap();
    let a2 = hash1_sign(&alice, &object).unwrap();
    assert_eq!(a1, a2);
    assert_eq!(a1.digest, hash0(&a1.signature));
    assert!(verify_leaf(&alice.public_key(), &object, &a1.digest, &a1.signature));
    assert!(!verify_leaf(&bob.public_key(), &object, &a1.digest, &a1.signature));
    assert!(!verify_leaf(
        &alice.public_key(),
        &hash0(b"other"),
        &a1.digest,
        &a1.signature
    ));
    assert_ne!(hash1_sign(&bob, &object).unwrap().digest, a1.digest);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_path_verifies(seed in any::<u64>(), n in 1usize..=64) {
        let l = leaves(seed, n);
        let tree = build_merkle(&l).unwrap();
        for (i, digest) in l.iter().enumerate() {
            let path = tree.prove(i).unwrap();
            prop_assert_eq!(&path.leaf_digest, digest);
            prop_assert_eq!(path.siblings.len(), n.next_power_of_two().trailing_zeros() as usize);
            prop_assert!(verify_membership(&path, &tree.root()));
        }
    }

    #[test]
    fn random_bit_flip_breaks_path(seed in any::<u64>(), n in 2usize..=64, pick in any::<usize>(), bit in 0usize..256) {
        let l = leaves(seed, n);
        let tree = build_merkle(&l).unwrap();
        let mut path = tree.prove(pick % n).unwrap();
        let s = pick % path.siblings.len();
        path.siblings[s].digest = path.siblings[s].digest.with_bit_flipped(bit);
        prop_assert!(!verify_membership(&path, &tree.root()));
    }

    #[test]
    fn changing_any_leaf_changes_root(seed in any::<u64>(), n in 1usize..=64, pick in any::<usize>()) {
        let mut l = leaves(seed, n);
        let before = build_merkle(&l).unwrap().root();
        let i = pick % n;
        l[i] = l[i].with_bit_flipped(0);
        prop_assert_ne!(build_merkle(&l).unwrap().root(), before);
    }

    #[test]
    fn paths_do_not_verify_under_other_trees(a in any::<u64>(), b in any::<u64>(), n in 1usize..=32) {
        prop_assume!(a != b);
        let t1 = build_merkle(&leaves(a, n)).unwrap();
        let t2 = build_merkle(&leaves(b, n)).unwrap();
        prop_assert!(!verify_membership(&t1.prove(0).unwrap(), &t2.root()));
    }
}

#![allow(dead_code)]

use msign::adversary::{spoil, SpoilConfig};
use msign::cli::scenarios::{centralized_setup, CentralizedSetup};
use msign::cli::{ScenarioConfig, ScenarioKind};
use msign::prf::Seed;
use msign::verify::{prove_ownership, recover_ownership, Community};
use sha2::{Digest as _, Sha256};

pub fn centralized(rounds: usize, seed: Seed) -> (ScenarioConfig, CentralizedSetup) {
    let mut c = ScenarioConfig::new(ScenarioKind::FlCentralized);
    c.fl.rounds = rounds;
    let s = centralized_setup(&c, seed).unwrap();
    (c, s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Recovery {
    /// The victim's own proof fails on the spoiled model.
    pub spoiled: bool,
    /// A co-author's evidence re-establishes the victim.
    pub recovered: bool,
    /// Co-author evidence from an unrelated run is refused, whichever
    /// broadcast it is checked against.
    pub cross_run_rejected: bool,
}

/// Spoils author 0's mark on the published model, then asks for recovery
/// with author 1 as the co-author.
pub fn recovery_trial(seed: u64) -> Recovery {
    let community = Community::default();
    let (_, s) = centralized(5, Seed::from_u64(seed).child("recovery"));
    let (_, other) = centralized(5, Seed::from_u64(seed).child("unrelated"));
    let pkg = &s.run.package;
    let victim = &pkg.evidence[&s.authors[0].id];
    let coauthor = &pkg.evidence[&s.authors[1].id];

    let mut rng = Seed::from_u64(seed).child("spoil").rng();
    let (spoiled, _) = spoil(&pkg.final_model, victim, &SpoilConfig::for_scheme(&s.scheme), &mut rng).unwrap();
    let own = prove_ownership(&community, &s.run.public, &spoiled, victim, &pkg.final_broadcast).unwrap();
    let recovered = recover_ownership(
        &community,
        &s.run.public,
        &spoiled,
        victim,
        coauthor,
        &pkg.final_broadcast,
    )
    .unwrap();

    let foreign = &other.run.package.evidence[&other.authors[1].id];
    let under_ours = recover_ownership(
        &community,
        &s.run.public,
        &spoiled,
        victim,
        foreign,
        &pkg.final_broadcast,
    )
    .unwrap();
    let under_theirs = recover_ownership(
        &community,
        &other.run.public,
        &spoiled,
        victim,
        foreign,
        &other.run.package.final_broadcast,
    )
    .unwrap();
    Recovery {
        spoiled: !own.accepted,
        recovered: recovered.accepted,
        cross_run_rejected: !under_ours.accepted && !under_theirs.accepted,
    }
}

pub fn sha(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

// Leaf hashes and node hashes get distinct one-byte prefixes.
pub fn leaf_sha(bytes: &[u8]) -> [u8; 32] {
    sha(&[&[0x00], bytes].concat())
}

pub fn node_sha(l: &[u8; 32], r: &[u8; 32]) -> [u8; 32] {
    sha(&[&[0x02], l.as_slice(), r.as_slice()].concat())
}

/// Root by repeated pairing with SHA-256, duplicating the last node
/// of odd levels.
pub fn reference_root(leaves: &[[u8; 32]]) -> [u8; 32] {
    let mut level = leaves.to_vec();
    while level.len() > 1 {
        if level.len() % 2 == 1 {
            level.push(*level.last().unwrap());
        }
        level = level.chunks(2).map(|p| node_sha(&p[0], &p[1])).collect();
    }
    level[0]
}

//! Piracy: someone who never trained the model tries to get an ownership
//! claim accepted for it.

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AdversaryError, EavesdropLog};
use crate::crypto::{
    hash1_sign, position_label, AuthPath, AuthorId, Broadcast, Digest, Sibling, SignedLeaf, SigningIdentity, DIGEST_LEN,
};
use crate::fl::{Commitment, Signed, KEY_BITS};
use crate::model::ToyModel;
use crate::prf::Seed;
use crate::verify::{prove_ownership, recover_ownership, Community, Evidence, LeafProof, PublicRecord};
use crate::watermark::{gen, Key, Scheme};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Guess a key, commit to it in a broadcast of one's own that claims an
    /// earlier timestamp, and prove ownership against it.
    FakeTimestamp,
    /// Claim to be a co-author whose evidence was never delivered, grafting
    /// a guessed key onto paths overheard from real proofs.
    PretendUninformed,
    /// Claim to be a co-author whose watermark was spoiled, asking for
    /// recovery with grafted evidence next to a genuine co-author's proof.
    PretendSpoiled,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::FakeTimestamp,
        Strategy::PretendUninformed,
        Strategy::PretendSpoiled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::FakeTimestamp => "fake-timestamp",
            Strategy::PretendUninformed => "pretend-uninformed",
            Strategy::PretendSpoiled => "pretend-spoiled",
        }
    }
}

/// What the pirate can see or hold.
pub struct PirateTarget<'a> {
    pub community: &'a Community,
    pub record: &'a PublicRecord,
    pub model: &'a ToyModel,
    /// The genuine final broadcast for `model`.
    pub reference: &'a Broadcast,
    pub scheme: &'a Scheme,
    pub log: &'a EavesdropLog,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PirateReport {
    pub strategy: Strategy,
    pub trials: usize,
    pub accepted: usize,
}

impl PirateReport {
    pub fn success_rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.accepted as f64 / self.trials as f64
        }
    }
}

/// Runs `trials` independent attempts, each with its own pirate identity
/// and guessed key drawn from `seed`.
pub fn pirate_attempt(
    strategy: Strategy,
    target: &PirateTarget<'_>,
    trials: usize,
    seed: Seed,
) -> Result<PirateReport, AdversaryError> {
    let accepted = (0..trials)
        .into_par_iter()
        .map(|t| one_trial(strategy, target, seed.child_idx(strategy.name(), t as u64)))
        .collect::<Result<Vec<bool>, AdversaryError>>()?
        .into_iter()
        .filter(|&ok| ok)
        .count();
    Ok(PirateReport {
        strategy,
        trials,
        accepted,
    })
}

fn one_trial(strategy: Strategy, target: &PirateTarget<'_>, seed: Seed) -> Result<bool, AdversaryError> {
    let id = AuthorId(format!("pirate-{}", &hex::encode(seed.0)[..8]));
    let pirate = SigningIdentity::from_seed(id.clone(), seed.child("identity").0);
    let key = gen(KEY_BITS, &mut seed.child("key").rng(), id.clone())?;
    let mut record = target.record.clone();
    record.register(id, pirate.public_key());

    match strategy {
        Strategy::FakeTimestamp => {
            let spec = target.scheme.spec_for(target.model, &key)?;
            let info = target.model.info(target.reference.info.round);
            let commitment = Commitment::build(
                vec![Signed::new(&pirate, key)?],
                vec![Signed::new(&pirate, spec)?],
                Signed::new(&pirate, info.clone())?,
            )?;
            let earlier = target
                .reference
                .timestamp
                .saturating_sub(seed.rng().random_range(1..=3600));
            let forged = Broadcast::sign(&pirate, earlier, commitment.root(), info)?;
            record.publish(forged.clone());
            let verdict = prove_ownership(
                target.community,
                &record,
                target.model,
                &commitment.evidence(0),
                &forged,
            )?;
            Ok(verdict.accepted)
        }
        Strategy::PretendUninformed => {
            let forged = match pick(&target.log.observed, &seed) {
                Some(seen) => graft(seen, &pirate, key)?,
                None => fabricate(&pirate, key, target, &seed)?,
            };
            let verdict = prove_ownership(target.community, &record, target.model, &forged, target.reference)?;
            Ok(verdict.accepted)
        }
        Strategy::PretendSpoiled => {
            // The victim's own path cannot have been overheard: a spoiled
            // author never got to present it.
            let forged = fabricate(&pirate, key, target, &seed)?;
            let coauthor = match pick(&target.log.observed, &seed) {
                Some(seen) => seen.clone(),
                None => forged.clone(),
            };
            let verdict = recover_ownership(
                target.community,
                &record,
                target.model,
                &forged,
                &coauthor,
                target.reference,
            )?;
            Ok(verdict.accepted)
        }
    }
}

fn pick<'a>(observed: &'a [Evidence], seed: &Seed) -> Option<&'a Evidence> {
    if observed.is_empty() {
        return None;
    }
    let i = seed.child("pick").rng().random_range(0..observed.len());
    observed.get(i)
}

/// Evidence built from nothing: correctly signed leaves for the pirate's
/// key, verifier and the true model info, each with a path of the right
/// shape whose sibling digests are random.
fn fabricate(
    pirate: &SigningIdentity,
    key: Key,
    target: &PirateTarget<'_>,
    seed: &Seed,
) -> Result<Evidence, AdversaryError> {
    let verifier = target.scheme.spec_for(target.model, &key)?;
    let info = target.reference.info.clone();
    let height = target
        .log
        .observed
        .first()
        .map_or(3, |e| e.key_proof.path.siblings.len());
    let mut rng = seed.child("fabricate").rng();
    let mut proof = |leaf: SignedLeaf| {
        let leaf_index = rng.random_range(0..1u64 << height);
        let siblings = (0..height)
            .map(|up| {
                let mut digest = [0u8; DIGEST_LEN];
                rng.fill_bytes(&mut digest);
                Sibling {
                    label: position_label(height - up, (leaf_index >> up) ^ 1),
                    digest: Digest(digest),
                }
            })
            .collect();
        LeafProof {
            signer: pirate.author_id().clone(),
            signature: leaf.signature,
            path: AuthPath {
                leaf_index,
                leaf_digest: leaf.digest,
                siblings,
            },
        }
    };
    let key_proof = proof(hash1_sign(pirate, &key)?);
    let verifier_proof = proof(hash1_sign(pirate, &verifier)?);
    let info_proof = proof(hash1_sign(pirate, &info)?);
    Ok(Evidence {
        claimant: pirate.author_id().clone(),
        key,
        verifier,
        info,
        key_proof,
        verifier_proof,
        info_proof,
    })
}

/// Someone else's evidence with the key and claimant swapped for the
/// pirate's, and the key leaf re-signed so the signature at least checks.
fn graft(seen: &Evidence, pirate: &SigningIdentity, key: Key) -> Result<Evidence, AdversaryError> {
    let leaf = hash1_sign(pirate, &key)?;
    let mut path = seen.key_proof.path.clone();
    path.leaf_digest = leaf.digest;
    Ok(Evidence {
        claimant: pirate.author_id().clone(),
        key,
        key_proof: LeafProof {
            signer: pirate.author_id().clone(),
            signature: leaf.signature,
            path,
        },
        ..seen.clone()
    })
}

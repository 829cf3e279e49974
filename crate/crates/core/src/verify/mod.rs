//! The public verification community. Agents check a claimant's evidence
//! against a recorded broadcast and the suspicious model, then vote; a
//! strict majority decides.

mod evidence;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{verify_leaf, verify_membership, AuthorId, Broadcast};
use crate::fl::{Aggregator, StepRecord};
use crate::model::ToyModel;
use crate::watermark::verify;

pub use evidence::{Evidence, LeafProof, PublicRecord};

pub const DEFAULT_COMMUNITY_SIZE: usize = 7;

#[derive(Debug, Error, PartialEq)]
pub enum VerifyError {
    #[error("reference broadcast is not in the public record")]
    UnknownBroadcast,
    #[error("more than one surveillance key verifies: {0:?}")]
    AmbiguousTrace(Vec<AuthorId>),
    #[error("evidence from {author} at position {position} does not match its broadcast")]
    InconsistentHistory { position: usize, author: AuthorId },
    #[error("{presented} presentations for {steps} chain steps")]
    ChainMismatch { steps: usize, presented: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Behavior {
    Honest,
    AlwaysAccept,
    AlwaysReject,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agent {
    pub id: usize,
    pub behavior: Behavior,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Community {
    pub agents: Vec<Agent>,
}

impl Community {
    pub fn honest(size: usize) -> Self {
        Community::new(&vec![Behavior::Honest; size])
    }

    pub fn new(behaviors: &[Behavior]) -> Self {
        Community {
            agents: behaviors
                .iter()
                .enumerate()
                .map(|(id, &behavior)| Agent { id, behavior })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    fn vote(&self, honest: impl Fn() -> AgentChecks) -> Verdict {
        let votes: Vec<AgentVote> = self
            .agents
            .iter()
            .map(|agent| {
                let (checks, vote) = match agent.behavior {
                    Behavior::Honest => {
                        let c = honest();
                        let v = c.passed();
                        (Some(c), v)
                    }
                    Behavior::AlwaysAccept => (None, true),
                    Behavior::AlwaysReject => (None, false),
                };
                AgentVote {
                    agent: agent.id,
                    behavior: agent.behavior,
                    checks,
                    vote,
                }
            })
            .collect();
        let votes_for = votes.iter().filter(|v| v.vote).count();
        Verdict {
            accepted: 2 * votes_for > self.agents.len(),
            votes_for,
            votes_against: votes.len() - votes_for,
            votes,
        }
    }
}

impl Default for Community {
    fn default() -> Self {
        Community::honest(DEFAULT_COMMUNITY_SIZE)
    }
}

/// Outcome of each check, in evaluation order. Checking stops at the first
/// failure, so later entries may be `None`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checks {
    /// Evidence info matches the broadcast and the model's structure.
    pub info: Option<bool>,
    /// Key, verifier and info leaves fold up to the broadcast root.
    pub membership: Option<bool>,
    /// Broadcast and leaf signatures verify under registered keys.
    pub leaf: Option<bool>,
    /// The scheme's own `verify(M, key)`.
    pub scheme: Option<bool>,
}

impl Checks {
    fn passed(&self, need_scheme: bool) -> bool {
        let ok = |c: Option<bool>| c == Some(true);
        ok(self.info) && ok(self.membership) && ok(self.leaf) && (!need_scheme || ok(self.scheme))
    }
}

/// What one honest agent found. `coauthor` is only set for recovery, where
/// `claim` holds the victim's checks without the scheme step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentChecks {
    pub claim: Checks,
    pub coauthor: Option<Checks>,
}

impl AgentChecks {
    fn passed(&self) -> bool {
        match &self.coauthor {
            None => self.claim.passed(true),
            Some(co) => co.passed(true) && self.claim.passed(false),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentVote {
    pub agent: usize,
    pub behavior: Behavior,
    pub checks: Option<AgentChecks>,
    pub vote: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub accepted: bool,
    pub votes_for: usize,
    pub votes_against: usize,
    pub votes: Vec<AgentVote>,
}

fn leaf_ok<T: crate::crypto::Canonical>(
    record: &PublicRecord,
    evidence: &Evidence,
    broadcast: &Broadcast,
    proof: &LeafProof,
    object: &T,
) -> bool {
    let allowed = proof.signer == evidence.claimant || proof.signer == broadcast.signer;
    allowed
        && record
            .public_key(&proof.signer)
            .is_some_and(|pk| verify_leaf(pk, object, &proof.path.leaf_digest, &proof.signature))
}

/// Everything an honest agent checks. With `with_scheme` false the
/// watermark itself is not tested.
fn check_evidence(
    record: &PublicRecord,
    model: &ToyModel,
    evidence: &Evidence,
    broadcast: &Broadcast,
    with_scheme: bool,
) -> Checks {
    let mut c = Checks::default();
    let info_ok = evidence.info == broadcast.info && evidence.info.same_structure(&model.info(0));
    c.info = Some(info_ok);
    if !info_ok {
        return c;
    }
    let proofs = [&evidence.key_proof, &evidence.verifier_proof, &evidence.info_proof];
    let membership = proofs.iter().all(|p| verify_membership(&p.path, &broadcast.root));
    c.membership = Some(membership);
    if !membership {
        return c;
    }
    let leaf = evidence.key.author_id == evidence.claimant
        && record
            .public_key(&broadcast.signer)
            .is_some_and(|pk| broadcast.verify(pk))
        && leaf_ok(record, evidence, broadcast, &evidence.key_proof, &evidence.key)
        && leaf_ok(
            record,
            evidence,
            broadcast,
            &evidence.verifier_proof,
            &evidence.verifier,
        )
        && leaf_ok(record, evidence, broadcast, &evidence.info_proof, &evidence.info);
    c.leaf = Some(leaf);
    if leaf && with_scheme {
        c.scheme = Some(verify(model, &evidence.key, &evidence.verifier));
    }
    c
}

/// Independent ownership proof: the claimant's evidence must sit under the
/// recorded broadcast and its watermark must verify on `model`.
pub fn prove_ownership(
    community: &Community,
    record: &PublicRecord,
    model: &ToyModel,
    evidence: &Evidence,
    reference: &Broadcast,
) -> Result<Verdict, VerifyError> {
    if !record.contains(reference) {
        return Err(VerifyError::UnknownBroadcast);
    }
    Ok(community.vote(|| AgentChecks {
        claim: check_evidence(record, model, evidence, reference, true),
        coauthor: None,
    }))
}

/// Ownership for a victim whose watermark no longer verifies: one
/// co-author proves ownership of `model` outright, and the victim's leaves
/// must sit under the same root, so the victim was committed to before
/// that broadcast.
pub fn recover_ownership(
    community: &Community,
    record: &PublicRecord,
    model: &ToyModel,
    victim: &Evidence,
    coauthor: &Evidence,
    reference: &Broadcast,
) -> Result<Verdict, VerifyError> {
    if !record.contains(reference) {
        return Err(VerifyError::UnknownBroadcast);
    }
    Ok(community.vote(|| AgentChecks {
        claim: check_evidence(record, model, victim, reference, false),
        coauthor: Some(check_evidence(record, model, coauthor, reference, true)),
    }))
}

/// The author whose surveillance key verifies on `model`, if any.
pub fn trace_traitor_centralized(aggregator: &Aggregator, model: &ToyModel) -> Result<Option<AuthorId>, VerifyError> {
    let hits: Vec<AuthorId> = aggregator
        .surveillance_specs
        .iter()
        .filter(|(id, spec)| {
            aggregator
                .surveillance
                .get(*id)
                .is_some_and(|sk| verify(model, &sk.key, spec))
        })
        .map(|(id, _)| id.clone())
        .collect();
    match hits.len() {
        0 => Ok(None),
        1 => Ok(hits.into_iter().next()),
        _ => Err(VerifyError::AmbiguousTrace(hits)),
    }
}

/// Evidence each chain author presents: its step key from its own step.
pub fn step_presentations(steps: &[StepRecord]) -> Vec<Evidence> {
    steps.iter().map(|s| s.commitment.evidence(1)).collect()
}

/// Walks the chain in order. Each author presents its step key; the first
/// one the community rejects on `model` means the leak happened just
/// before that step, so the previous position is returned. If every step
/// key verifies, the model left the last author.
pub fn trace_traitor_p2p(
    community: &Community,
    record: &PublicRecord,
    steps: &[StepRecord],
    presented: &[Evidence],
    model: &ToyModel,
) -> Result<usize, VerifyError> {
    if steps.len() != presented.len() {
        return Err(VerifyError::ChainMismatch {
            steps: steps.len(),
            presented: presented.len(),
        });
    }
    for (step, evidence) in steps.iter().zip(presented) {
        let history = check_evidence(record, model, evidence, &step.broadcast, false);
        let consistent =
            evidence.claimant == step.author && step.broadcast.signer == step.author && history.passed(false);
        if !consistent {
            return Err(VerifyError::InconsistentHistory {
                position: step.position,
                author: step.author.clone(),
            });
        }
        if !prove_ownership(community, record, model, evidence, &step.broadcast)?.accepted {
            return Ok(step.position - 1);
        }
    }
    Ok(steps.len())
}

/// Settles competing claims on one model: among the accepted ones, the
/// claim whose broadcast entered the public record first wins. Declared
/// timestamps are only a tie-break, since a signer can backdate them.
pub fn resolve_dispute(record: &PublicRecord, claims: &[(&Verdict, &Broadcast)]) -> Option<usize> {
    let order = |b: &Broadcast| record.broadcasts().iter().position(|r| r == b).unwrap_or(usize::MAX);
    claims
        .iter()
        .enumerate()
        .filter(|(_, (v, _))| v.accepted)
        .min_by_key(|(_, (_, b))| (order(b), b.timestamp))
        .map(|(i, _)| i)
}

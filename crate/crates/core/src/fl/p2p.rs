use std::collections::BTreeMap;

use super::{Author, Clock, Commitment, FinalPackage, FlConfig, FlError, Mailbox, Signed};
use crate::crypto::{AuthorId, Broadcast, Digest};
use crate::model::{train, ToyModel};
use crate::verify::{Evidence, PublicRecord};
use crate::watermark::{Scheme, VerifierSpec};

/// One link of the chain, kept by the author who ran it.
#[derive(Clone, Debug)]
pub struct StepRecord {
    /// 1-based position in the schedule.
    pub position: usize,
    pub author: AuthorId,
    pub broadcast: Broadcast,
    /// The model as it left this author.
    pub model: ToyModel,
    pub model_digest: Digest,
    /// The author's key and this step's tracing key, with verifiers.
    pub commitment: Commitment,
}

#[derive(Clone, Debug)]
pub struct P2pRun {
    pub package: FinalPackage,
    pub steps: Vec<StepRecord>,
    pub final_commitment: Commitment,
    pub mailbox: Mailbox,
    pub public: PublicRecord,
}

/// Passes the model along `schedule` (indices into `authors`, repeats
/// allowed). At each step the author trains on its own data, embeds its
/// key and a fresh step key, and broadcasts a signed root over them. The
/// last author then collects every participant's signed key leaf and
/// broadcasts the final tree.
pub fn run_p2p(
    authors: &[Author],
    schedule: &[usize],
    scheme: &Scheme,
    init: &ToyModel,
    config: &FlConfig,
) -> Result<P2pRun, FlError> {
    config.check()?;
    if schedule.is_empty() {
        return Err(FlError::InvalidConfig("schedule is empty".into()));
    }
    if let Some(&bad) = schedule.iter().find(|&&i| i >= authors.len()) {
        return Err(FlError::InvalidConfig(format!(
            "schedule names author {bad} but there are only {}",
            authors.len()
        )));
    }
    config.check_capacity(schedule.len() + 1)?;

    let mut public = PublicRecord::default();
    for a in authors {
        public.register(a.id.clone(), a.identity.public_key());
    }
    let mut clock = Clock(config.start_time);
    let mut mailbox = Mailbox::default();
    let mut model = init.clone();
    let mut steps = Vec::with_capacity(schedule.len());
    let mut last_spec: BTreeMap<usize, VerifierSpec> = BTreeMap::new();

    for (t, &idx) in schedule.iter().enumerate() {
        let position = t + 1;
        let u = &authors[idx];
        let tuned = train(&model, &u.local_data, config.local_epochs, config.lr)?;
        let step_key = u.step_key(position);
        let (marked, specs) = scheme.embed_many(&tuned, &[&u.key, &step_key], Some(&u.local_data))?;
        let info = tuned.info(position as u32);
        let commitment = Commitment::build(
            vec![
                Signed::new(&u.identity, u.key.clone())?,
                Signed::new(&u.identity, step_key)?,
            ],
            vec![
                Signed::new(&u.identity, specs[0].clone())?,
                Signed::new(&u.identity, specs[1].clone())?,
            ],
            Signed::new(&u.identity, info.clone())?,
        )?;
        let broadcast = Broadcast::sign(&u.identity, clock.tick(), commitment.root(), info)?;
        public.publish(broadcast.clone());
        let wire = broadcast.to_wire()?;
        for a in authors {
            mailbox.deliver(&a.id, wire.clone());
        }
        if let Some(&next) = schedule.get(t + 1) {
            mailbox.deliver(&authors[next].id, marked.to_bytes());
        }
        last_spec.insert(idx, specs[0].clone());
        steps.push(StepRecord {
            position,
            author: u.id.clone(),
            broadcast,
            model_digest: marked.digest(),
            model: marked.clone(),
            commitment,
        });
        model = marked;
    }

    // The last author gathers each participant's own key leaf; it signs the
    // verifiers, the info and the broadcast itself.
    let last = &authors[*schedule.last().expect("schedule is non-empty")];
    let participants: Vec<usize> = last_spec.keys().copied().collect();
    let mut key_leaves = Vec::with_capacity(participants.len());
    let mut ver_leaves = Vec::with_capacity(participants.len());
    for &i in &participants {
        key_leaves.push(Signed::new(&authors[i].identity, authors[i].key.clone())?);
        ver_leaves.push(Signed::new(&last.identity, last_spec[&i].clone())?);
    }
    let info = model.info(schedule.len() as u32);
    let commitment = Commitment::build(key_leaves, ver_leaves, Signed::new(&last.identity, info.clone())?)?;
    let final_broadcast = Broadcast::sign(&last.identity, clock.tick(), commitment.root(), info)?;
    public.publish(final_broadcast.clone());

    let evidence: BTreeMap<AuthorId, Evidence> = (0..commitment.len())
        .map(|i| {
            let e = commitment.evidence(i);
            (e.claimant.clone(), e)
        })
        .collect();
    let wire = final_broadcast.to_wire()?;
    for &i in &participants {
        let id = &authors[i].id;
        mailbox.deliver(id, wire.clone());
        mailbox.deliver(id, serde_json::to_vec(&evidence[id]).expect("evidence serializes"));
    }

    Ok(P2pRun {
        package: FinalPackage {
            final_model: model,
            final_broadcast,
            evidence,
        },
        steps,
        final_commitment: commitment,
        mailbox,
        public,
    })
}

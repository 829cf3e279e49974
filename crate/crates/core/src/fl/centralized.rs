use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{
    aggregate, alpha_for, local_update, Aggregator, Author, Clock, Commitment, FlConfig, FlError, Mailbox, Signed,
};
use crate::crypto::{AuthorId, Broadcast, Digest};
use crate::model::ToyModel;
use crate::verify::{Evidence, PublicRecord};
use crate::watermark::{Key, Scheme, VerifierSpec};

/// One author's copy for one round, as the aggregator recorded it.
#[derive(Clone, Debug)]
pub struct Delivery {
    pub model: ToyModel,
    pub model_digest: Digest,
    pub broadcast: Broadcast,
    /// Shared key and surveillance key with their verifiers.
    pub commitment: Commitment,
}

#[derive(Clone, Debug)]
pub struct RoundRecord {
    pub round: u32,
    pub per_author: BTreeMap<AuthorId, Delivery>,
    /// Clean model after this round's aggregation.
    pub aggregated: ToyModel,
    pub aggregated_digest: Digest,
}

/// What gets published at the end: the model, its broadcast, and the
/// evidence each party needs to prove its share.
#[derive(Clone, Debug)]
pub struct FinalPackage {
    pub final_model: ToyModel,
    pub final_broadcast: Broadcast,
    /// Keyed by claimant; includes the aggregator's own entry.
    pub evidence: BTreeMap<AuthorId, Evidence>,
}

#[derive(Clone, Debug)]
pub struct CentralizedRun {
    pub package: FinalPackage,
    pub rounds: Vec<RoundRecord>,
    /// The final tree, held by the aggregator.
    pub final_commitment: Commitment,
    pub mailbox: Mailbox,
    pub public: PublicRecord,
}

/// Plain federated training with no watermarks. Returns the clean model
/// after every round, starting with `init`.
pub fn train_federated(init: &ToyModel, authors: &[Author], config: &FlConfig) -> Result<Vec<ToyModel>, FlError> {
    config.check()?;
    let alpha = alpha_for(config, authors);
    let mut history = vec![init.clone()];
    let mut model = init.clone();
    for _ in 0..config.rounds {
        let updates = authors
            .par_iter()
            .map(|a| Ok((local_update(&model, &a.local_data, config)?, a.local_data.len() as f64)))
            .collect::<Result<Vec<_>, FlError>>()?;
        model = aggregate(&model, &updates, alpha)?;
        history.push(model.clone());
    }
    Ok(history)
}

fn sign_all<T: crate::crypto::Canonical + Clone>(
    identity: &crate::crypto::SigningIdentity,
    items: &[T],
) -> Result<Vec<Signed<T>>, FlError> {
    items.iter().map(|i| Ok(Signed::new(identity, i.clone())?)).collect()
}

/// Runs `config.rounds` rounds of watermarked federated training.
///
/// Each round the aggregator embeds its key and the author's surveillance
/// key into that author's copy, broadcasts a signed root over the pair and
/// the model info, and applies the authors' updates to its clean model.
/// After the last round it embeds every author's key plus its own into the
/// clean model and publishes the result with one authentication path per
/// party.
pub fn run_centralized(
    authors: &[Author],
    aggregator: &mut Aggregator,
    scheme: &Scheme,
    init: &ToyModel,
    config: &FlConfig,
) -> Result<CentralizedRun, FlError> {
    config.check()?;
    if authors.is_empty() {
        return Err(FlError::InvalidConfig("need at least one author".into()));
    }
    if let Some(a) = authors.iter().find(|a| !aggregator.surveillance.contains_key(&a.id)) {
        return Err(FlError::InvalidConfig(format!(
            "aggregator has no surveillance key for {}",
            a.id
        )));
    }
    config.check_capacity(authors.len() + 1)?;

    let mut public = PublicRecord::default();
    public.register(aggregator.id().clone(), aggregator.identity.public_key());
    for a in authors {
        public.register(a.id.clone(), a.identity.public_key());
    }
    let mut clock = Clock(config.start_time);
    let mut mailbox = Mailbox::default();
    let alpha = alpha_for(config, authors);
    let agg = &*aggregator;

    // Round copies of a weight mark are left as plain overwrites: re-tuning
    // them would pull the authors' updates away from the clean model they
    // are applied to.
    let round_replay = match scheme {
        Scheme::WeightMark(_) => None,
        _ => agg.replay.as_ref(),
    };
    let mut model = init.clone();
    let mut rounds = Vec::with_capacity(config.rounds);
    let mut surveillance_specs = BTreeMap::new();
    for round in 1..=config.rounds as u32 {
        let copies = authors
            .par_iter()
            .map(|a| {
                let sk = &agg.surveillance[&a.id].key;
                let (wm, specs) = scheme.embed_many(&model, &[&agg.key0, sk], round_replay)?;
                let commitment = Commitment::build(
                    sign_all(&agg.identity, &[agg.key0.clone(), sk.clone()])?,
                    sign_all(&agg.identity, &specs)?,
                    Signed::new(&agg.identity, model.info(round))?,
                )?;
                Ok((wm, specs, commitment))
            })
            .collect::<Result<Vec<_>, FlError>>()?;

        let mut per_author = BTreeMap::new();
        for (a, (wm, specs, commitment)) in authors.iter().zip(copies) {
            let broadcast = Broadcast::sign(&agg.identity, clock.tick(), commitment.root(), model.info(round))?;
            public.publish(broadcast.clone());
            let wire = broadcast.to_wire()?;
            for b in authors {
                mailbox.deliver(&b.id, wire.clone());
            }
            mailbox.deliver(&a.id, wm.to_bytes());
            surveillance_specs.insert(a.id.clone(), specs[1].clone());
            per_author.insert(
                a.id.clone(),
                Delivery {
                    model_digest: wm.digest(),
                    model: wm,
                    broadcast,
                    commitment,
                },
            );
        }

        let updates = authors
            .par_iter()
            .map(|a| {
                let copy = &per_author[&a.id].model;
                let delta = local_update(copy, &a.local_data, config)?;
                Ok((delta, a.local_data.len() as f64))
            })
            .collect::<Result<Vec<_>, FlError>>()?;
        model = aggregate(&model, &updates, alpha)?;
        rounds.push(RoundRecord {
            round,
            per_author,
            aggregated_digest: model.digest(),
            aggregated: model.clone(),
        });
    }
    aggregator.surveillance_specs.extend(surveillance_specs);
    let agg = &*aggregator;

    // Authors hand over their keys together with their own signed leaves.
    let mut keys: Vec<&Key> = vec![&agg.key0];
    keys.extend(authors.iter().map(|a| &a.key));
    let (final_model, specs) = scheme.embed_many(&model, &keys, agg.replay.as_ref())?;
    let mut key_leaves = vec![Signed::new(&agg.identity, agg.key0.clone())?];
    for a in authors {
        key_leaves.push(Signed::new(&a.identity, a.key.clone())?);
    }
    let info = model.info(config.rounds as u32);
    let commitment = Commitment::build(
        key_leaves,
        sign_all::<VerifierSpec>(&agg.identity, &specs)?,
        Signed::new(&agg.identity, info.clone())?,
    )?;
    let final_broadcast = Broadcast::sign(&agg.identity, clock.tick(), commitment.root(), info)?;
    public.publish(final_broadcast.clone());

    let evidence: BTreeMap<AuthorId, Evidence> = (0..commitment.len())
        .map(|i| {
            let e = commitment.evidence(i);
            (e.claimant.clone(), e)
        })
        .collect();
    let wire = final_broadcast.to_wire()?;
    let model_bytes = final_model.to_bytes();
    for a in authors {
        mailbox.deliver(&a.id, wire.clone());
        mailbox.deliver(&a.id, model_bytes.clone());
        let own = serde_json::to_vec(&evidence[&a.id]).expect("evidence serializes");
        mailbox.deliver(&a.id, own);
    }

    Ok(CentralizedRun {
        package: FinalPackage {
            final_model,
            final_broadcast,
            evidence,
        },
        rounds,
        final_commitment: commitment,
        mailbox,
        public,
    })
}

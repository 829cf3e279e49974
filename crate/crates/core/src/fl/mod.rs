//! Federated training with ownership watermarks. [`run_centralized`] has an
//! aggregator embed a shared key and a per-author surveillance key into
//! every copy it hands out and commit to them in signed Merkle broadcasts.
//! [`run_p2p`] passes the model along a chain of authors, each embedding and
//! broadcasting for itself.

mod centralized;
mod commit;
mod p2p;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{AuthorId, CodecError, MerkleError, SigningIdentity};
use crate::model::{Dataset, ModelError, ToyModel};
use crate::prf::Seed;
use crate::watermark::{gen, Key, SurveillanceKey, VerifierSpec, WatermarkError};

pub use centralized::{run_centralized, train_federated, CentralizedRun, Delivery, FinalPackage, RoundRecord};
pub use commit::{Commitment, Signed};
pub use p2p::{run_p2p, P2pRun, StepRecord};

/// Bits of entropy in every key the protocol generates.
pub const KEY_BITS: u32 = 256;

#[derive(Debug, Error, PartialEq)]
pub enum FlError {
    #[error("watermark capacity {capacity} is below the {needed} keys this run embeds")]
    CapacityExceeded { needed: usize, capacity: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Watermark(#[from] WatermarkError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Merkle(#[from] MerkleError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FlConfig {
    #[serde(default = "FlConfig::default_rounds")]
    pub rounds: usize,
    /// Gradient steps each author takes on its shard per round.
    #[serde(default = "FlConfig::default_local_epochs")]
    pub local_epochs: usize,
    #[serde(default = "FlConfig::default_lr")]
    pub lr: f64,
    /// Aggregation weight `alpha`; `None` means `1 / sum |D_k|`, a weighted
    /// average of the authors' updates.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Timestamp of the first broadcast; later ones count up by one.
    #[serde(default = "FlConfig::default_start_time")]
    pub start_time: u64,
    /// Measured watermark capacity of the model. When set, runs that would
    /// embed more keys than this are refused up front.
    #[serde(default)]
    pub capacity: Option<usize>,
}

impl FlConfig {
    fn default_rounds() -> usize {
        20
    }
    fn default_local_epochs() -> usize {
        5
    }
    fn default_lr() -> f64 {
        0.5
    }
    fn default_start_time() -> u64 {
        1_700_000_000
    }

    fn check(&self) -> Result<(), FlError> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(FlError::InvalidConfig(format!(
                "lr must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if let Some(a) = self.alpha {
            if !a.is_finite() {
                return Err(FlError::InvalidConfig(format!("alpha must be finite, got {a}")));
            }
        }
        Ok(())
    }

    fn check_capacity(&self, needed: usize) -> Result<(), FlError> {
        match self.capacity {
            Some(capacity) if capacity < needed => Err(FlError::CapacityExceeded { needed, capacity }),
            _ => Ok(()),
        }
    }
}

impl Default for FlConfig {
    fn default() -> Self {
        FlConfig {
            rounds: Self::default_rounds(),
            local_epochs: Self::default_local_epochs(),
            lr: Self::default_lr(),
            alpha: None,
            start_time: Self::default_start_time(),
            capacity: None,
        }
    }
}

/// A data owner taking part in training.
#[derive(Clone, Debug)]
pub struct Author {
    pub id: AuthorId,
    pub identity: SigningIdentity,
    pub key: Key,
    pub local_data: Dataset,
    seed: Seed,
}

impl Author {
    /// Identity and key both come from `seed`, which stays private.
    pub fn new(id: AuthorId, local_data: Dataset, seed: Seed) -> Self {
        let identity = SigningIdentity::from_seed(id.clone(), seed.child("identity").0);
        let key = gen(KEY_BITS, &mut seed.child("key").rng(), id.clone()).expect("valid security parameter");
        Author {
            id,
            identity,
            key,
            local_data,
            seed,
        }
    }

    /// Fresh key for chain position `position`, used to trace leaks of the
    /// model this author passes on.
    pub fn step_key(&self, position: usize) -> Key {
        let mut rng = self.seed.child_idx("step-key", position as u64).rng();
        gen(KEY_BITS, &mut rng, self.id.clone()).expect("valid security parameter")
    }
}

#[derive(Clone, Debug)]
pub struct Aggregator {
    pub identity: SigningIdentity,
    pub key0: Key,
    pub surveillance: BTreeMap<AuthorId, SurveillanceKey>,
    /// Verifiers for the surveillance keys, filled in while training.
    pub surveillance_specs: BTreeMap<AuthorId, VerifierSpec>,
    /// Public data the aggregator replays while planting triggers.
    pub replay: Option<Dataset>,
}

impl Aggregator {
    pub fn new(id: AuthorId, authors: &[AuthorId], replay: Option<Dataset>, seed: Seed) -> Self {
        let identity = SigningIdentity::from_seed(id.clone(), seed.child("identity").0);
        let key0 = gen(KEY_BITS, &mut seed.child("key0").rng(), id.clone()).expect("valid security parameter");
        let surveillance = authors
            .iter()
            .enumerate()
            .map(|(i, target)| {
                let mut rng = seed.child_idx("surveillance", i as u64).rng();
                let key = gen(KEY_BITS, &mut rng, id.clone()).expect("valid security parameter");
                (
                    target.clone(),
                    SurveillanceKey {
                        key,
                        target: target.clone(),
                    },
                )
            })
            .collect();
        Aggregator {
            identity,
            key0,
            surveillance,
            surveillance_specs: BTreeMap::new(),
            replay,
        }
    }

    pub fn id(&self) -> &AuthorId {
        self.identity.author_id()
    }
}

/// Splits `train` into a replay set for the aggregator (the first
/// `replay_size` samples) and `k` disjoint author shards, and creates all
/// parties from `seed`.
pub fn federation(
    train: &Dataset,
    k: usize,
    replay_size: usize,
    seed: Seed,
) -> Result<(Vec<Author>, Aggregator), FlError> {
    if k == 0 {
        return Err(FlError::InvalidConfig("need at least one author".into()));
    }
    if replay_size + k > train.len() {
        return Err(FlError::InvalidConfig(format!(
            "{} samples cannot cover a replay set of {replay_size} and {k} authors",
            train.len()
        )));
    }
    let rest: Vec<usize> = (replay_size..train.len()).collect();
    let authors: Vec<Author> = train
        .subset(&rest)
        .shards(k)
        .into_iter()
        .enumerate()
        .map(|(i, shard)| {
            Author::new(
                AuthorId(format!("author-{}", i + 1)),
                shard,
                seed.child_idx("author", i as u64),
            )
        })
        .collect();
    let ids: Vec<AuthorId> = authors.iter().map(|a| a.id.clone()).collect();
    let replay = (replay_size > 0).then(|| train.head(replay_size));
    let aggregator = Aggregator::new(AuthorId::new("aggregator"), &ids, replay, seed.child("aggregator"));
    Ok((authors, aggregator))
}

/// `M' = M + alpha * sum_k w_k * dM_k`.
pub fn aggregate(model: &ToyModel, updates: &[(Vec<f64>, f64)], alpha: f64) -> Result<ToyModel, FlError> {
    let mut out = model.clone();
    let n = out.num_params();
    if let Some((bad, _)) = updates.iter().find(|(d, _)| d.len() != n) {
        return Err(FlError::ShapeMismatch {
            expected: n,
            got: bad.len(),
        });
    }
    let params = out.params_mut();
    for (delta, weight) in updates {
        let s = alpha * weight;
        params.iter_mut().zip(delta).for_each(|(p, d)| *p += s * d);
    }
    Ok(out)
}

/// An author's update `dM`: where `local_epochs` of gradient descent on its
/// own data move the model it was given.
pub fn local_update(model: &ToyModel, data: &Dataset, config: &FlConfig) -> Result<Vec<f64>, FlError> {
    let trained = crate::model::train(model, data, config.local_epochs, config.lr)?;
    Ok(trained
        .params()
        .iter()
        .zip(model.params())
        .map(|(a, b)| a - b)
        .collect())
}

fn alpha_for(config: &FlConfig, authors: &[Author]) -> f64 {
    config
        .alpha
        .unwrap_or_else(|| 1.0 / authors.iter().map(|a| a.local_data.len()).sum::<usize>().max(1) as f64)
}

/// Every byte string handed to each author, kept so tests can check what
/// an author could have learned.
#[derive(Clone, Debug, Default)]
pub struct Mailbox {
    inbox: BTreeMap<AuthorId, Vec<Vec<u8>>>,
}

impl Mailbox {
    pub fn deliver(&mut self, to: &AuthorId, bytes: Vec<u8>) {
        self.inbox.entry(to.clone()).or_default().push(bytes);
    }

    pub fn received(&self, id: &AuthorId) -> &[Vec<u8>] {
        self.inbox.get(id).map_or(&[], Vec::as_slice)
    }

    pub fn recipients(&self) -> impl Iterator<Item = &AuthorId> {
        self.inbox.keys()
    }
}

struct Clock(u64);

impl Clock {
    fn tick(&mut self) -> u64 {
        let t = self.0;
        self.0 += 1;
        t
    }
}

//! Attacks on watermarked models and on the ownership protocol. They serve
//! as negative oracles: each one should fail against an honest run.

mod pirate;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{AuthorId, Broadcast, CodecError, SigningIdentity};
use crate::fl::{Commitment, FlError, RoundRecord, Signed, StepRecord};
use crate::model::{Dataset, ModelError, ToyModel};
use crate::verify::{Evidence, VerifyError};
use crate::watermark::trigger::{trigger_dataset, triggers_for_spec, Trigger};
use crate::watermark::weight::{marks, TARGET_RANGE};
use crate::watermark::{verify, Key, Scheme, TuneConfig, VerifierParams, VerifierSpec, WatermarkError};

pub use pirate::{pirate_attempt, PirateReport, PirateTarget, Strategy};

#[derive(Debug, Error, PartialEq)]
pub enum AdversaryError {
    #[error("watermark still verifies after {epochs} spoil epochs")]
    SpoilFailed { epochs: usize },
    #[error("{0} did not take part in that round")]
    NotAParticipant(AuthorId),
    #[error("no chain step at position {0}")]
    NoSuchStep(usize),
    #[error("synchronism needs at least two marks and a valid target, got {marks} marks and target {target}")]
    BadTarget { marks: usize, target: usize },
    #[error(transparent)]
    Watermark(#[from] WatermarkError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fl(#[from] FlError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
}

/// Evidence seen during public proofs.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EavesdropLog {
    pub observed: Vec<Evidence>,
}

impl EavesdropLog {
    pub fn record(&mut self, evidence: &Evidence) {
        self.observed.push(evidence.clone());
    }
}

/// Gradient steps used against trigger marks: the embedder's learning rate
/// and clipping, so each step does as little collateral damage as the
/// embedding did.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SpoilConfig {
    #[serde(default = "SpoilConfig::default_budget")]
    pub budget_epochs: usize,
    #[serde(default = "SpoilConfig::default_lr")]
    pub lr: f64,
    #[serde(default = "SpoilConfig::default_max_grad_norm")]
    pub max_grad_norm: f64,
}

impl SpoilConfig {
    fn default_budget() -> usize {
        50
    }
    fn default_lr() -> f64 {
        TuneConfig::default().lr
    }
    fn default_max_grad_norm() -> f64 {
        TuneConfig::default().max_grad_norm
    }

    /// Matches the tuning a trigger scheme used to embed.
    pub fn for_scheme(scheme: &Scheme) -> Self {
        match scheme.tune_config() {
            Some(t) => SpoilConfig {
                lr: t.lr,
                max_grad_norm: t.max_grad_norm,
                ..Default::default()
            },
            None => SpoilConfig::default(),
        }
    }
}

impl Default for SpoilConfig {
    fn default() -> Self {
        SpoilConfig {
            budget_epochs: Self::default_budget(),
            lr: Self::default_lr(),
            max_grad_norm: Self::default_max_grad_norm(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpoilOutcome {
    /// Epochs (or overwrite attempts) spent before the mark stopped verifying.
    pub epochs: usize,
}

/// Spoils the mark described by an eavesdropped `evidence`.
pub fn spoil(
    model: &ToyModel,
    evidence: &Evidence,
    config: &SpoilConfig,
    rng: &mut impl Rng,
) -> Result<(ToyModel, SpoilOutcome), AdversaryError> {
    spoil_mark(model, &evidence.key, &evidence.verifier, config, rng)
}

/// Makes `verify(model, key, spec)` fail with as little change as possible,
/// checking after every epoch. Weight marks get their parameters
/// overwritten with fresh random values; trigger marks are fine-tuned
/// towards wrong labels on the triggers alone.
pub fn spoil_mark(
    model: &ToyModel,
    key: &Key,
    spec: &VerifierSpec,
    config: &SpoilConfig,
    rng: &mut impl Rng,
) -> Result<(ToyModel, SpoilOutcome), AdversaryError> {
    let mut m = model.clone();
    if !verify(&m, key, spec) {
        return Ok((m, SpoilOutcome { epochs: 0 }));
    }
    match &spec.params {
        VerifierParams::WeightMark { n_marked, .. } => {
            let idx: Vec<usize> = marks(key, *n_marked as usize, m.num_params())
                .into_iter()
                .map(|(i, _)| i)
                .collect();
            for epoch in 1..=config.budget_epochs {
                let params = m.params_mut();
                for &i in &idx {
                    params[i] = rng.random_range(-TARGET_RANGE..=TARGET_RANGE);
                }
                if !verify(&m, key, spec) {
                    return Ok((m, SpoilOutcome { epochs: epoch }));
                }
            }
        }
        VerifierParams::TriggerMark { .. } | VerifierParams::AtgfMark { .. } => {
            let triggers = triggers_for_spec(key, spec).expect("verifying key matches its spec");
            let wrong = wrong_labels(&triggers, m.num_classes(), rng);
            let data = trigger_dataset(&wrong, m.num_classes())?;
            let tune = TuneConfig {
                lr: config.lr,
                max_grad_norm: config.max_grad_norm,
                ..Default::default()
            };
            for epoch in 1..=config.budget_epochs {
                tune.step(&mut m, &[(&data, 1.0)])?;
                if !verify(&m, key, spec) {
                    return Ok((m, SpoilOutcome { epochs: epoch }));
                }
            }
        }
    }
    Err(AdversaryError::SpoilFailed {
        epochs: config.budget_epochs,
    })
}

/// Each trigger relabelled uniformly among the classes it is not.
fn wrong_labels(triggers: &[Trigger], num_classes: usize, rng: &mut impl Rng) -> Vec<Trigger> {
    triggers
        .iter()
        .map(|t| {
            let mut others: Vec<usize> = (0..num_classes).filter(|&c| c != t.label).collect();
            others.shuffle(rng);
            Trigger {
                input: t.input.clone(),
                label: others.first().copied().unwrap_or(t.label),
            }
        })
        .collect()
}

/// Spoils mark `target` and returns the fraction of the other marks that
/// still verify.
pub fn spoil_synchronism(
    model: &ToyModel,
    marks: &[(Key, VerifierSpec)],
    target: usize,
    config: &SpoilConfig,
    rng: &mut impl Rng,
) -> Result<f64, AdversaryError> {
    if marks.len() < 2 || target >= marks.len() {
        return Err(AdversaryError::BadTarget {
            marks: marks.len(),
            target,
        });
    }
    let (key, spec) = &marks[target];
    let (spoiled, _) = spoil_mark(model, key, spec, config, rng)?;
    let survivors = marks
        .iter()
        .enumerate()
        .filter(|(i, (k, s))| *i != target && verify(&spoiled, k, s))
        .count();
    Ok(survivors as f64 / (marks.len() - 1) as f64)
}

/// A second watermark and a later broadcast claiming the model.
#[derive(Clone, Debug)]
pub struct OverwriteClaim {
    pub model: ToyModel,
    pub broadcast: Broadcast,
    pub evidence: Evidence,
}

/// Embeds the adversary's own key into a published model and broadcasts a
/// claim `delay` seconds after the victim's broadcast.
pub fn overwrite(
    model: &ToyModel,
    adversary: &SigningIdentity,
    adversary_key: &Key,
    scheme: &Scheme,
    replay: Option<&Dataset>,
    victim: &Broadcast,
    delay: u64,
) -> Result<OverwriteClaim, AdversaryError> {
    let (marked, spec) = scheme.embed(model, adversary_key, replay)?;
    let info = marked.info(victim.info.round);
    let commitment = Commitment::build(
        vec![Signed::new(adversary, adversary_key.clone())?],
        vec![Signed::new(adversary, spec)?],
        Signed::new(adversary, info.clone())?,
    )?;
    let broadcast = Broadcast::sign(
        adversary,
        victim.timestamp.saturating_add(delay.max(1)),
        commitment.root(),
        info,
    )?;
    Ok(OverwriteClaim {
        model: marked,
        broadcast,
        evidence: commitment.evidence(0),
    })
}

/// The exact copy handed to `author` in that round.
pub fn traitor_publish(record: &RoundRecord, author: &AuthorId) -> Result<ToyModel, AdversaryError> {
    record
        .per_author
        .get(author)
        .map(|d| d.model.clone())
        .ok_or_else(|| AdversaryError::NotAParticipant(author.clone()))
}

/// The model as it left chain position `position` (1-based).
pub fn traitor_publish_step(steps: &[StepRecord], position: usize) -> Result<ToyModel, AdversaryError> {
    steps
        .iter()
        .find(|s| s.position == position)
        .map(|s| s.model.clone())
        .ok_or(AdversaryError::NoSuchStep(position))
}

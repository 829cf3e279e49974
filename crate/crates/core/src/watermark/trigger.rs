//! Backdoor watermarks: the key derives a small set of trigger inputs with
//! labels, embedding fine-tunes the model on replay data plus the triggers,
//! and verification measures trigger accuracy.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{atgf, Key, VerifierParams, VerifierSpec, WatermarkError};
use crate::crypto::{hash0, Digest, Encoder};
use crate::model::{Dataset, ModelError, ToyModel};
use crate::prf::Prf;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub input: Vec<f64>,
    pub label: usize,
}

impl Trigger {
    /// Commitment stored in the verifier so a different key cannot pass
    /// off its own triggers.
    pub fn digest(&self) -> Digest {
        let mut enc = Encoder::default();
        enc.f64_slice(&self.input).expect("trigger inputs are finite");
        enc.u32(self.label as u32);
        hash0(&enc.finish())
    }
}

/// Fine-tuning used to plant triggers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    #[serde(default = "TuneConfig::default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "TuneConfig::default_lr")]
    pub lr: f64,
    /// Weight of the trigger loss relative to the replay loss.
    #[serde(default = "TuneConfig::default_trigger_weight")]
    pub trigger_weight: f64,
    /// Stop once every trigger's label has at least this probability.
    #[serde(default = "TuneConfig::default_confidence")]
    pub confidence: f64,
    /// Each step is rescaled so the gradient norm never exceeds this.
    #[serde(default = "TuneConfig::default_max_grad_norm")]
    pub max_grad_norm: f64,
}

impl TuneConfig {
    fn default_max_epochs() -> usize {
        400
    }
    fn default_lr() -> f64 {
        0.05
    }
    fn default_trigger_weight() -> f64 {
        2.0
    }
    fn default_confidence() -> f64 {
        0.99
    }
    fn default_max_grad_norm() -> f64 {
        1.0
    }

    /// One clipped gradient step on `terms`.
    pub fn step(&self, model: &mut ToyModel, terms: &[(&Dataset, f64)]) -> Result<(), ModelError> {
        let (_, grad) = model.objective_gradient(terms)?;
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let scale = if norm > self.max_grad_norm {
            self.max_grad_norm / norm
        } else {
            1.0
        };
        model.step(&grad, self.lr * scale);
        Ok(())
    }
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            max_epochs: Self::default_max_epochs(),
            lr: Self::default_lr(),
            trigger_weight: Self::default_trigger_weight(),
            confidence: Self::default_confidence(),
            max_grad_norm: Self::default_max_grad_norm(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TriggerParams {
    #[serde(default = "TriggerParams::default_n_triggers")]
    pub n_triggers: u32,
    #[serde(default = "TriggerParams::default_threshold")]
    pub threshold: f64,
    /// Trigger inputs are uniform in `[-input_scale, input_scale]^dim`.
    #[serde(default = "TriggerParams::default_input_scale")]
    pub input_scale: f64,
    #[serde(default)]
    pub tune: TuneConfig,
}

impl TriggerParams {
    fn default_n_triggers() -> u32 {
        5
    }
    fn default_threshold() -> f64 {
        0.8
    }
    fn default_input_scale() -> f64 {
        1.5
    }
}

impl Default for TriggerParams {
    fn default() -> Self {
        TriggerParams {
            n_triggers: Self::default_n_triggers(),
            threshold: Self::default_threshold(),
            input_scale: Self::default_input_scale(),
            tune: TuneConfig::default(),
        }
    }
}

/// White-noise triggers with uniformly random labels.
pub fn random_triggers(key: &Key, n: usize, dim: usize, num_classes: usize, scale: f64) -> Vec<Trigger> {
    let mut xs = Prf::new(&key.seed, "trigger/input");
    let mut ys = Prf::new(&key.seed, "trigger/label");
    (0..n)
        .map(|_| Trigger {
            input: (0..dim).map(|_| xs.uniform(-scale, scale)).collect(),
            label: ys.below(num_classes as u64) as usize,
        })
        .collect()
}

pub fn trigger_dataset(triggers: &[Trigger], num_classes: usize) -> Result<Dataset, ModelError> {
    let rows: Vec<(Vec<f64>, usize)> = triggers.iter().map(|t| (t.input.clone(), t.label)).collect();
    Dataset::from_rows(&rows, num_classes)
}

/// Fraction of triggers classified as their label.
pub fn trigger_accuracy(model: &ToyModel, triggers: &[Trigger]) -> Result<f64, ModelError> {
    if triggers.is_empty() {
        return Ok(0.0);
    }
    let mut hit = 0;
    for t in triggers {
        if model.predict(&t.input)? == t.label {
            hit += 1;
        }
    }
    Ok(hit as f64 / triggers.len() as f64)
}

fn min_confidence(model: &ToyModel, triggers: &[Trigger]) -> Result<f64, ModelError> {
    let mut lo = f64::INFINITY;
    for t in triggers {
        lo = lo.min(model.forward(&t.input)?[t.label]);
    }
    Ok(lo)
}

/// Fine-tunes on `replay` plus every trigger set until each trigger
/// reaches `tune.confidence` or the epoch budget runs out. Returns the model
/// and the number of epochs spent.
pub fn fit_trigger_sets(
    model: &ToyModel,
    sets: &[&[Trigger]],
    replay: Option<&Dataset>,
    tune: &TuneConfig,
) -> Result<(ToyModel, usize), WatermarkError> {
    let replay = replay.filter(|r| !r.is_empty()).ok_or(WatermarkError::MissingReplay)?;
    let all: Vec<Trigger> = sets.iter().flat_map(|s| s.iter().cloned()).collect();
    if all.is_empty() {
        return Ok((model.clone(), 0));
    }
    let tset = trigger_dataset(&all, model.num_classes())?;
    let mut m = model.clone();
    let mut epochs = 0;
    while epochs < tune.max_epochs && min_confidence(&m, &all)? < tune.confidence {
        tune.step(&mut m, &[(replay, 1.0), (&tset, tune.trigger_weight)])?;
        epochs += 1;
    }
    Ok((m, epochs))
}

/// Single-set [`fit_trigger_sets`] that fails if trigger accuracy ends
/// below `threshold`.
pub fn fit_triggers(
    model: &ToyModel,
    triggers: &[Trigger],
    replay: Option<&Dataset>,
    tune: &TuneConfig,
    threshold: f64,
) -> Result<(ToyModel, usize), WatermarkError> {
    let (m, epochs) = fit_trigger_sets(model, &[triggers], replay, tune)?;
    check_fit(&m, triggers, threshold, epochs)?;
    Ok((m, epochs))
}

pub(super) fn check_fit(
    model: &ToyModel,
    triggers: &[Trigger],
    threshold: f64,
    epochs: usize,
) -> Result<(), WatermarkError> {
    let accuracy = trigger_accuracy(model, triggers)?;
    if accuracy < threshold {
        return Err(WatermarkError::EmbedFailed {
            accuracy,
            threshold,
            epochs,
        });
    }
    Ok(())
}

pub(super) fn triggermark_spec(model: &ToyModel, p: &TriggerParams, triggers: &[Trigger]) -> VerifierSpec {
    VerifierSpec {
        params: VerifierParams::TriggerMark {
            n_triggers: p.n_triggers,
            input_dim: model.input_dim() as u32,
            num_classes: model.num_classes() as u32,
            input_scale: p.input_scale,
            trigger_digests: triggers.iter().map(Trigger::digest).collect(),
        },
        threshold: p.threshold,
    }
}

pub fn triggermark_triggers(model: &ToyModel, key: &Key, p: &TriggerParams) -> Vec<Trigger> {
    random_triggers(
        key,
        p.n_triggers as usize,
        model.input_dim(),
        model.num_classes(),
        p.input_scale,
    )
}

pub fn embed_triggermark(
    model: &ToyModel,
    key: &Key,
    p: &TriggerParams,
    replay: Option<&Dataset>,
) -> Result<(ToyModel, VerifierSpec), WatermarkError> {
    let triggers = triggermark_triggers(model, key, p);
    let (m, _) = fit_triggers(model, &triggers, replay, &p.tune, p.threshold)?;
    Ok((m, triggermark_spec(model, p, &triggers)))
}

/// Regenerates the triggers a key implies under `spec`; `None` if they do
/// not match the committed digests.
pub fn triggers_for_spec(key: &Key, spec: &VerifierSpec) -> Option<Vec<Trigger>> {
    match &spec.params {
        VerifierParams::WeightMark { .. } => None,
        VerifierParams::TriggerMark {
            n_triggers,
            input_dim,
            num_classes,
            input_scale,
            trigger_digests,
        } => {
            let t = random_triggers(
                key,
                *n_triggers as usize,
                *input_dim as usize,
                *num_classes as usize,
                *input_scale,
            );
            match_digests(t, trigger_digests)
        }
        VerifierParams::AtgfMark { trigger_digests, .. } => {
            match_digests(atgf::triggers_from_spec(key, spec)?, trigger_digests)
        }
    }
}

fn match_digests(triggers: Vec<Trigger>, digests: &[Digest]) -> Option<Vec<Trigger>> {
    let ok = triggers.len() == digests.len() && triggers.iter().zip(digests).all(|(t, d)| t.digest() == *d);
    ok.then_some(triggers)
}

/// One row per trigger: `index,label,x0,x1,...`.
pub fn write_triggers_csv(triggers: &[Trigger], out: impl Write) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let dim = triggers.first().map_or(0, |t| t.input.len());
    let mut header = vec!["index".to_string(), "label".to_string()];
    header.extend((0..dim).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for (i, t) in triggers.iter().enumerate() {
        let mut row = vec![i.to_string(), t.label.to_string()];
        row.extend(t.input.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

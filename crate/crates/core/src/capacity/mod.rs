//! Empirical watermark capacity: how many keys fit into one model before
//! accuracy drops by more than `delta` or an earlier key stops verifying.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::AuthorId;
use crate::fl::KEY_BITS;
use crate::model::{evaluate, train, Dataset, ModelError, ToyModel};
use crate::prf::Seed;
use crate::watermark::{gen, verify, Key, Scheme, SchemeId, VerifierSpec, WatermarkError};

pub const DEFAULT_CAP_MAX: usize = 200;
pub const MIN_TIMING_TRIALS: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum CapacityError {
    #[error("delta must be in (0, 1], got {0}")]
    InvalidDelta(f64),
    #[error("need at least {MIN_TIMING_TRIALS} timing trials, got {0}")]
    TooFewTrials(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Watermark(#[from] WatermarkError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StopReason {
    /// Accuracy fell below `clean - delta`.
    AccuracyDrop,
    /// Key `index` (1-based) no longer verified.
    VerifyFailed { index: usize },
    /// The scheme could not embed the next key at all.
    EmbedFailed,
    /// Every one of `cap_max` keys passed.
    CapReached,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub scheme_id: SchemeId,
    pub arch: Vec<(u32, u32)>,
    pub delta: f64,
    pub q: usize,
    /// `(keys embedded, accuracy)`, starting with the clean model at 0.
    /// The last entry may be the failing attempt `q + 1`.
    pub accuracy_curve: Vec<(usize, f64)>,
    pub cap_max: usize,
    pub stop: StopReason,
}

impl CapacityReport {
    pub fn clean_accuracy(&self) -> f64 {
        self.accuracy_curve[0].1
    }

    /// True when the cap was hit, so `q` is only a lower bound.
    pub fn saturated(&self) -> bool {
        self.stop == StopReason::CapReached
    }

    /// `q`, or `>=q` when saturated.
    pub fn q_label(&self) -> String {
        if self.saturated() {
            format!(">={}", self.q)
        } else {
            self.q.to_string()
        }
    }

    pub fn arch_label(&self) -> String {
        let mut widths: Vec<String> = self.arch.iter().map(|(i, _)| i.to_string()).collect();
        if let Some((_, o)) = self.arch.last() {
            widths.push(o.to_string());
        }
        widths.join("-")
    }

    pub fn csv_row(&self) -> CapacityRow {
        CapacityRow {
            scheme: self.scheme_id.name().to_string(),
            arch: self.arch_label(),
            delta: self.delta,
            clean_accuracy: self.clean_accuracy(),
            capacity: self.q_label(),
            cap_max: self.cap_max,
        }
    }
}

/// One line of the capacity table: scheme by architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityRow {
    pub scheme: String,
    pub arch: String,
    pub delta: f64,
    pub clean_accuracy: f64,
    pub capacity: String,
    pub cap_max: usize,
}

/// The report plus the state at `q`, for re-checking it independently.
#[derive(Clone, Debug)]
pub struct CapacityRun {
    pub report: CapacityReport,
    /// Model carrying the first `q` keys.
    pub model: ToyModel,
    /// The first `q` keys with their verifiers.
    pub marks: Vec<(Key, VerifierSpec)>,
}

/// The clean model's error rate on `test`, the usual choice of `delta`.
pub fn clean_error_delta(model: &ToyModel, test: &Dataset) -> Result<f64, CapacityError> {
    Ok(1.0 - evaluate(model, test)?.accuracy)
}

/// See [`estimate_capacity_detailed`].
pub fn estimate_capacity(
    model: &ToyModel,
    scheme: &Scheme,
    delta: f64,
    cap_max: usize,
    replay: Option<&Dataset>,
    test: &Dataset,
    seed: Seed,
) -> Result<CapacityReport, CapacityError> {
    Ok(estimate_capacity_detailed(model, scheme, delta, cap_max, replay, test, seed)?.report)
}

/// Embeds fresh keys one after another. Step `i` embeds into the model
/// from step `i - 1`, re-embedding keys `1..i` alongside so that trigger
/// fits and weight re-tuning keep the earlier marks in place, then checks
/// all `i` keys and the accuracy on `test`. Stops at the first failure.
pub fn estimate_capacity_detailed(
    model: &ToyModel,
    scheme: &Scheme,
    delta: f64,
    cap_max: usize,
    replay: Option<&Dataset>,
    test: &Dataset,
    seed: Seed,
) -> Result<CapacityRun, CapacityError> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(CapacityError::InvalidDelta(delta));
    }
    let clean = evaluate(model, test)?.accuracy;
    let floor = clean - delta;
    let mut curve = vec![(0, clean)];
    let mut current = model.clone();
    let mut keys: Vec<Key> = Vec::new();
    let mut specs: Vec<VerifierSpec> = Vec::new();
    let mut stop = StopReason::CapReached;

    for i in 1..=cap_max {
        let mut rng = seed.child_idx("capacity-key", i as u64).rng();
        let key = gen(KEY_BITS, &mut rng, AuthorId(format!("capacity-{i}")))?;
        let mut all: Vec<&Key> = keys.iter().collect();
        all.push(&key);
        let (next, next_specs) = match scheme.embed_many(&current, &all, replay) {
            Ok(r) => r,
            Err(WatermarkError::EmbedFailed { .. }) => {
                stop = StopReason::EmbedFailed;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let accuracy = evaluate(&next, test)?.accuracy;
        curve.push((i, accuracy));
        if let Some(bad) = all.iter().zip(&next_specs).position(|(k, s)| !verify(&next, k, s)) {
            stop = StopReason::VerifyFailed { index: bad + 1 };
            break;
        }
        if accuracy < floor {
            stop = StopReason::AccuracyDrop;
            break;
        }
        keys.push(key);
        specs = next_specs;
        current = next;
    }

    let q = keys.len();
    Ok(CapacityRun {
        report: CapacityReport {
            scheme_id: scheme.id(),
            arch: model.info(0).arch,
            delta,
            q,
            accuracy_curve: curve,
            cap_max,
            stop,
        },
        model: current,
        marks: keys.into_iter().zip(specs).collect(),
    })
}

/// Wall-clock statistics in milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub samples_ms: Vec<f64>,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub median_ms: f64,
}

impl Timing {
    fn from_samples(samples_ms: Vec<f64>) -> Self {
        let n = samples_ms.len() as f64;
        let mean_ms = samples_ms.iter().sum::<f64>() / n;
        let var = samples_ms.iter().map(|x| (x - mean_ms).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let mut sorted = samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median_ms = if sorted.len().is_multiple_of(2) {
            (sorted[mid - 1] + sorted[mid]) / 2.0
        } else {
            sorted[mid]
        };
        Timing {
            samples_ms,
            mean_ms,
            std_ms: var.sqrt(),
            median_ms,
        }
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64() * 1e3)
}

/// Times `n_trials` single-key embeds, each with a fresh key.
pub fn embedding_timer(
    scheme: &Scheme,
    model: &ToyModel,
    replay: Option<&Dataset>,
    n_trials: usize,
    seed: Seed,
) -> Result<Timing, CapacityError> {
    if n_trials < MIN_TIMING_TRIALS {
        return Err(CapacityError::TooFewTrials(n_trials));
    }
    let mut samples = Vec::with_capacity(n_trials);
    for t in 0..n_trials {
        let key = gen(
            KEY_BITS,
            &mut seed.child_idx("timing-key", t as u64).rng(),
            AuthorId::new("timer"),
        )?;
        let (res, ms) = timed(|| scheme.embed(model, &key, replay));
        res?;
        samples.push(ms);
    }
    Ok(Timing::from_samples(samples))
}

/// Times `n_trials` single training epochs (one full-batch step) on `data`.
pub fn epoch_timer(model: &ToyModel, data: &Dataset, lr: f64, n_trials: usize) -> Result<Timing, CapacityError> {
    if n_trials < MIN_TIMING_TRIALS {
        return Err(CapacityError::TooFewTrials(n_trials));
    }
    let mut samples = Vec::with_capacity(n_trials);
    for _ in 0..n_trials {
        let (res, ms) = timed(|| train(model, data, 1, lr));
        res?;
        samples.push(ms);
    }
    Ok(Timing::from_samples(samples))
}

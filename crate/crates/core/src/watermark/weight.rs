//! Parameter-overwrite watermark: the key picks `n_marked` parameter indices
//! and target values in `[-0.5, 0.5]`; embedding writes the targets and
//! verification counts how many indices still sit within `tolerance`.
//!
//! Given replay data, embedding then re-tunes the unmarked parameters for a
//! few epochs with the marked ones held fixed, which wins back most of the
//! accuracy the overwrite costs on small models.

use serde::{Deserialize, Serialize};

use super::{Key, VerifierParams, VerifierSpec, WatermarkError};
use crate::model::{Dataset, ModelError, ToyModel};
use crate::prf::Prf;

pub const TARGET_RANGE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct WeightMarkParams {
    #[serde(default = "WeightMarkParams::default_n_marked")]
    pub n_marked: u32,
    #[serde(default = "WeightMarkParams::default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "WeightMarkParams::default_threshold")]
    pub threshold: f64,
    /// Epochs of masked fine-tuning on replay data after the overwrite.
    #[serde(default = "WeightMarkParams::default_repair_epochs")]
    pub repair_epochs: usize,
    #[serde(default = "WeightMarkParams::default_repair_lr")]
    pub repair_lr: f64,
}

impl WeightMarkParams {
    fn default_n_marked() -> u32 {
        20
    }
    // Fine-tuning moves marked weights by ~0.01 and collisions between
    // keys are common at ~1k parameters, hence the loose tolerance and
    // majority threshold.
    fn default_tolerance() -> f64 {
        0.05
    }
    fn default_threshold() -> f64 {
        0.5
    }
    fn default_repair_epochs() -> usize {
        50
    }
    fn default_repair_lr() -> f64 {
        0.3
    }
}

impl Default for WeightMarkParams {
    fn default() -> Self {
        WeightMarkParams {
            n_marked: Self::default_n_marked(),
            tolerance: Self::default_tolerance(),
            threshold: Self::default_threshold(),
            repair_epochs: Self::default_repair_epochs(),
            repair_lr: Self::default_repair_lr(),
        }
    }
}

/// Indices and target values the key selects in a model of `num_params`.
pub fn marks(key: &Key, n_marked: usize, num_params: usize) -> Vec<(usize, f64)> {
    let idx = Prf::new(&key.seed, "weightmark/index").distinct(n_marked, num_params);
    let mut val = Prf::new(&key.seed, "weightmark/value");
    idx.into_iter()
        .map(|i| (i, val.uniform(-TARGET_RANGE, TARGET_RANGE)))
        .collect()
}

pub(super) fn spec(model: &ToyModel, p: &WeightMarkParams) -> VerifierSpec {
    VerifierSpec {
        params: VerifierParams::WeightMark {
            n_marked: p.n_marked,
            num_params: model.num_params() as u32,
            tolerance: p.tolerance,
        },
        threshold: p.threshold,
    }
}

/// Overwrites the key's marked parameters, nothing else.
pub fn embed_weightmark(
    model: &ToyModel,
    key: &Key,
    p: &WeightMarkParams,
) -> Result<(ToyModel, VerifierSpec), WatermarkError> {
    let (m, mut specs) = embed_weightmarks(model, &[key], p, None)?;
    Ok((m, specs.pop().expect("one key")))
}

/// Overwrites the marks of every key in turn, then, if `replay` is
/// non-empty, re-tunes all other parameters on it.
pub fn embed_weightmarks(
    model: &ToyModel,
    keys: &[&Key],
    p: &WeightMarkParams,
    replay: Option<&Dataset>,
) -> Result<(ToyModel, Vec<VerifierSpec>), WatermarkError> {
    let n = p.n_marked as usize;
    if n == 0 || model.num_params() <= n {
        return Err(WatermarkError::ModelTooSmall {
            params: model.num_params(),
            needed: n,
        });
    }
    let mut out = model.clone();
    let mut frozen = vec![false; out.num_params()];
    for key in keys {
        let params = out.params_mut();
        for (i, v) in marks(key, n, params.len()) {
            params[i] = v;
            frozen[i] = true;
        }
    }
    if let Some(data) = replay.filter(|d| !d.is_empty()) {
        out = repair(&out, &frozen, data, p.repair_epochs, p.repair_lr)?;
    }
    Ok((out, keys.iter().map(|_| spec(model, p)).collect()))
}

/// Gradient descent on `data` that leaves parameters flagged in `frozen`
/// untouched.
pub fn repair(
    model: &ToyModel,
    frozen: &[bool],
    data: &Dataset,
    epochs: usize,
    lr: f64,
) -> Result<ToyModel, ModelError> {
    let mut m = model.clone();
    for _ in 0..epochs {
        let (_, mut grad) = m.objective_gradient(&[(data, 1.0)])?;
        grad.iter_mut()
            .zip(frozen)
            .filter(|(_, &f)| f)
            .for_each(|(g, _)| *g = 0.0);
        m.step(&grad, lr);
    }
    Ok(m)
}

pub(super) fn score(model: &ToyModel, key: &Key, spec: &VerifierSpec) -> Option<f64> {
    let VerifierParams::WeightMark {
        n_marked,
        num_params,
        tolerance,
    } = spec.params
    else {
        return None;
    };
    if n_marked == 0 || model.num_params() != num_params as usize || num_params <= n_marked {
        return None;
    }
    let params = model.params();
    let hits = marks(key, n_marked as usize, params.len())
        .into_iter()
        .filter(|&(i, v)| (params[i] - v).abs() <= tolerance)
        .count();
    Some(hits as f64 / n_marked as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArchKind;
    use crate::prf::Seed;
    use crate::watermark::{verify, verify_triggermark, SchemeId};

    fn key(i: u64) -> Key {
        Key {
            seed: Seed::from_u64(i).0,
            author_id: "a".into(),
        }
    }

    fn model() -> ToyModel {
        ToyModel::with_arch(ArchKind::Default, 16, 4, Seed::from_u64(1)).unwrap()
    }

    #[test]
    fn embed_then_verify() {
        let (wm, spec) = embed_weightmark(&model(), &key(1), &WeightMarkParams::default()).unwrap();
        assert!(verify(&wm, &key(1), &spec));
        assert!(!verify(&model(), &key(1), &spec));
        let changed = wm.params().iter().zip(model().params()).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 20);
    }

    #[test]
    fn wrong_keys_rejected() {
        let (wm, spec) = embed_weightmark(&model(), &key(1), &WeightMarkParams::default()).unwrap();
        let accepted = (2..1002).filter(|i| verify(&wm, &key(*i), &spec)).count();
        assert_eq!(accepted, 0);
    }

    #[test]
    fn targets_in_range_and_deterministic() {
        let a = marks(&key(3), 20, 1140);
        assert_eq!(a, marks(&key(3), 20, 1140));
        assert!(a.iter().all(|(i, v)| *i < 1140 && v.abs() <= TARGET_RANGE));
    }

    #[test]
    fn too_small_and_mismatch() {
        let tiny = ToyModel::new(vec![(2, 2)], Seed::from_u64(0)).unwrap();
        assert!(matches!(
            embed_weightmark(&tiny, &key(1), &WeightMarkParams::default()),
            Err(WatermarkError::ModelTooSmall { params: 6, needed: 20 })
        ));
        let (wm, spec) = embed_weightmark(&model(), &key(1), &WeightMarkParams::default()).unwrap();
        assert_eq!(
            verify_triggermark(&wm, &key(1), &spec),
            Err(WatermarkError::SchemeMismatch {
                expected: SchemeId::TriggerMark,
                found: SchemeId::WeightMark
            })
        );
        let other = ToyModel::with_arch(ArchKind::Deep, 16, 4, Seed::from_u64(1)).unwrap();
        assert!(!verify(&other, &key(1), &spec));
    }
}

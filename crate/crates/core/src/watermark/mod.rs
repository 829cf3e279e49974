//! Key generation, embedding and verification for three watermarking
//! schemes: parameter overwriting ([`weight`]), random-noise backdoor
//! triggers ([`trigger`]) and autoencoder-generated triggers ([`atgf`]).
//!
//! Every scheme derives its watermark material from the key with
//! [`Prf`](crate::prf::Prf), so the pair `(key, VerifierSpec)` fully
//! determines what `verify` checks.

pub mod atgf;
pub mod trigger;
pub mod weight;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hex_bytes, AuthorId, Canonical, CodecError, Decoder, Digest, Encoder};
use crate::model::{Dataset, ModelError, ToyModel};
pub use atgf::{
    atgf_trigger, average_params, build_atgf_generator, train_autoencoder, AeLayout, AtgfGenerator, AtgfParams,
    Autoencoder, GeneratorOptions,
};
pub use trigger::{Trigger, TuneConfig};

pub const MIN_SECURITY_PARAM: u32 = 128;
pub const MAX_SECURITY_PARAM: u32 = 256;

#[derive(Debug, Error, PartialEq)]
pub enum WatermarkError {
    #[error("security parameter {0} is below {MIN_SECURITY_PARAM} bits")]
    WeakSecurityParam(u32),
    #[error("security parameter {0} exceeds the {MAX_SECURITY_PARAM}-bit key seed")]
    SecurityParamTooLarge(u32),
    #[error("model has {params} parameters, need more than {needed}")]
    ModelTooSmall { params: usize, needed: usize },
    #[error("verifier is for {found:?}, expected {expected:?}")]
    SchemeMismatch { expected: SchemeId, found: SchemeId },
    #[error("embedding failed: trigger accuracy {accuracy:.2} below {threshold:.2} after {epochs} epochs")]
    EmbedFailed {
        accuracy: f64,
        threshold: f64,
        epochs: usize,
    },
    #[error("trigger embedding needs a non-empty replay set")]
    MissingReplay,
    #[error("generator output dimension {generator} does not match model input {model}")]
    DimMismatch { generator: usize, model: usize },
    #[error("shape mismatch: expected {expected} parameters, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("no autoencoders to average")]
    EmptyList,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A watermark key: secret seed plus the identity it belongs to.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Key {
    #[serde(with = "seed_hex")]
    pub seed: [u8; 32],
    pub author_id: AuthorId,
}

impl std::fmt::Debug for Key {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Key({}, {}..)", self.author_id, &hex::encode(self.seed)[..8])
    }
}

impl Canonical for Key {
    fn encode(&self, enc: &mut Encoder) -> Result<(), CodecError> {
        enc.raw(&self.seed);
        enc.str(self.author_id.as_str())
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let seed = dec.take(32, "key.seed")?.try_into().expect("32 bytes");
        Ok(Key {
            seed,
            author_id: AuthorId(dec.str("key.author_id")?),
        })
    }
}

/// A key the aggregator plants in one author's copy of the model. It is
/// never sent to that author.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveillanceKey {
    pub key: Key,
    /// The author whose copy carries this key.
    pub target: AuthorId,
}

/// `key <- Gen(1^N)`: `N` bits of entropy from `rng`, zero-padded to the
/// 32-byte seed.
pub fn gen(security_param: u32, rng: &mut impl RngCore, author_id: AuthorId) -> Result<Key, WatermarkError> {
    if security_param < MIN_SECURITY_PARAM {
        return Err(WatermarkError::WeakSecurityParam(security_param));
    }
    if security_param > MAX_SECURITY_PARAM {
        return Err(WatermarkError::SecurityParamTooLarge(security_param));
    }
    let mut seed = [0u8; 32];
    let bytes = security_param.div_ceil(8) as usize;
    rng.fill_bytes(&mut seed[..bytes]);
    if !security_param.is_multiple_of(8) {
        seed[bytes - 1] &= (1u8 << (security_param % 8)) - 1;
    }
    Ok(Key { seed, author_id })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum SchemeId {
    WeightMark,
    TriggerMark,
    AtgfMark,
}

impl SchemeId {
    fn tag(self) -> u8 {
        match self {
            SchemeId::WeightMark => 1,
            SchemeId::TriggerMark => 2,
            SchemeId::AtgfMark => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::WeightMark => "weightmark",
            SchemeId::TriggerMark => "triggermark",
            SchemeId::AtgfMark => "atgfmark",
        }
    }
}

/// Scheme-specific verification parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase")]
pub enum VerifierParams {
    WeightMark {
        n_marked: u32,
        num_params: u32,
        tolerance: f64,
    },
    TriggerMark {
        n_triggers: u32,
        input_dim: u32,
        num_classes: u32,
        input_scale: f64,
        trigger_digests: Vec<Digest>,
    },
    AtgfMark {
        n_triggers: u32,
        num_classes: u32,
        code_scale: f64,
        input_clip: f64,
        bottleneck_dim: u32,
        decoder_shapes: Vec<(u32, u32)>,
        decoder_params: Vec<f64>,
        #[serde(with = "seed_hex")]
        label_map_seed: [u8; 32],
        trigger_digests: Vec<Digest>,
    },
}

/// Everything needed to run `verify(M, key)`; no hidden state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifierSpec {
    pub params: VerifierParams,
    /// Fraction of marks that must check out.
    pub threshold: f64,
}

impl VerifierSpec {
    pub fn scheme_id(&self) -> SchemeId {
        match self.params {
            VerifierParams::WeightMark { .. } => SchemeId::WeightMark,
            VerifierParams::TriggerMark { .. } => SchemeId::TriggerMark,
            VerifierParams::AtgfMark { .. } => SchemeId::AtgfMark,
        }
    }
}

impl Canonical for VerifierSpec {
    fn encode(&self, enc: &mut Encoder) -> Result<(), CodecError> {
        enc.u8(self.scheme_id().tag());
        enc.f64(self.threshold)?;
        match &self.params {
            VerifierParams::WeightMark {
                n_marked,
                num_params,
                tolerance,
            } => {
                enc.u32(*n_marked);
                enc.u32(*num_params);
                enc.f64(*tolerance)?;
            }
            VerifierParams::TriggerMark {
                n_triggers,
                input_dim,
                num_classes,
                input_scale,
                trigger_digests,
            } => {
                enc.u32(*n_triggers);
                enc.u32(*input_dim);
                enc.u32(*num_classes);
                enc.f64(*input_scale)?;
                encode_digests(enc, trigger_digests)?;
            }
            VerifierParams::AtgfMark {
                n_triggers,
                num_classes,
                code_scale,
                input_clip,
                bottleneck_dim,
                decoder_shapes,
                decoder_params,
                label_map_seed,
                trigger_digests,
            } => {
                enc.u32(*n_triggers);
                enc.u32(*num_classes);
                enc.f64(*code_scale)?;
                enc.f64(*input_clip)?;
                enc.u32(*bottleneck_dim);
                enc.len(decoder_shapes.len())?;
                for (i, o) in decoder_shapes {
                    enc.u32(*i);
                    enc.u32(*o);
                }
                enc.f64_slice(decoder_params)?;
                enc.raw(label_map_seed);
                encode_digests(enc, trigger_digests)?;
            }
        }
        Ok(())
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let tag = dec.u8("verifier.scheme")?;
        let threshold = dec.f64("verifier.threshold")?;
        let params = match tag {
            1 => VerifierParams::WeightMark {
                n_marked: dec.u32("weightmark.n_marked")?,
                num_params: dec.u32("weightmark.num_params")?,
                tolerance: dec.f64("weightmark.tolerance")?,
            },
            2 => VerifierParams::TriggerMark {
                n_triggers: dec.u32("triggermark.n_triggers")?,
                input_dim: dec.u32("triggermark.input_dim")?,
                num_classes: dec.u32("triggermark.num_classes")?,
                input_scale: dec.f64("triggermark.input_scale")?,
                trigger_digests: decode_digests(dec)?,
            },
            3 => {
                let n_triggers = dec.u32("atgf.n_triggers")?;
                let num_classes = dec.u32("atgf.num_classes")?;
                let code_scale = dec.f64("atgf.code_scale")?;
                let input_clip = dec.f64("atgf.input_clip")?;
                let bottleneck_dim = dec.u32("atgf.bottleneck_dim")?;
                let n = dec.len("atgf.decoder_shapes")?;
                let decoder_shapes = (0..n)
                    .map(|_| Ok((dec.u32("atgf.shape")?, dec.u32("atgf.shape")?)))
                    .collect::<Result<_, CodecError>>()?;
                let decoder_params = dec.f64_vec("atgf.decoder_params")?;
                let label_map_seed = dec.take(32, "atgf.label_map_seed")?.try_into().expect("32 bytes");
                VerifierParams::AtgfMark {
                    n_triggers,
                    num_classes,
                    code_scale,
                    input_clip,
                    bottleneck_dim,
                    decoder_shapes,
                    decoder_params,
                    label_map_seed,
                    trigger_digests: decode_digests(dec)?,
                }
            }
            other => {
                return Err(CodecError::Invalid {
                    what: "verifier.scheme",
                    detail: format!("unknown tag {other}"),
                })
            }
        };
        Ok(VerifierSpec { params, threshold })
    }
}

fn encode_digests(enc: &mut Encoder, ds: &[Digest]) -> Result<(), CodecError> {
    enc.len(ds.len())?;
    ds.iter().for_each(|d| enc.digest(d));
    Ok(())
}

fn decode_digests(dec: &mut Decoder<'_>) -> Result<Vec<Digest>, CodecError> {
    let n = dec.len("digests")?;
    (0..n).map(|_| dec.digest("digest")).collect()
}

/// A configured watermarking scheme.
#[derive(Clone, Debug)]
pub enum Scheme {
    WeightMark(weight::WeightMarkParams),
    TriggerMark(trigger::TriggerParams),
    AtgfMark(atgf::AtgfParams),
}

impl Scheme {
    pub fn id(&self) -> SchemeId {
        match self {
            Scheme::WeightMark(_) => SchemeId::WeightMark,
            Scheme::TriggerMark(_) => SchemeId::TriggerMark,
            Scheme::AtgfMark(_) => SchemeId::AtgfMark,
        }
    }

    /// `(M_WM, verify) <- Embed(M, key)`. Trigger schemes fine-tune on
    /// `replay` alongside the triggers; the weight scheme uses it to re-tune
    /// the parameters it did not overwrite.
    pub fn embed(
        &self,
        model: &ToyModel,
        key: &Key,
        replay: Option<&Dataset>,
    ) -> Result<(ToyModel, VerifierSpec), WatermarkError> {
        match self {
            Scheme::WeightMark(p) => {
                let (m, mut specs) = weight::embed_weightmarks(model, &[key], p, replay)?;
                Ok((m, specs.pop().expect("one key")))
            }
            Scheme::TriggerMark(p) => trigger::embed_triggermark(model, key, p, replay),
            Scheme::AtgfMark(p) => atgf::embed_atgfmark(model, key, p, replay),
        }
    }

    /// Embeds several keys at once. Trigger schemes fit the union of all
    /// trigger sets in one fine-tune so later keys do not erase earlier
    /// ones; every key must still reach its threshold.
    pub fn embed_many(
        &self,
        model: &ToyModel,
        keys: &[&Key],
        replay: Option<&Dataset>,
    ) -> Result<(ToyModel, Vec<VerifierSpec>), WatermarkError> {
        match self {
            Scheme::WeightMark(p) => weight::embed_weightmarks(model, keys, p, replay),
            Scheme::TriggerMark(_) | Scheme::AtgfMark(_) => {
                let sets = keys
                    .iter()
                    .map(|k| self.triggers(model, k))
                    .collect::<Result<Vec<_>, _>>()?;
                let refs: Vec<&[Trigger]> = sets.iter().map(Vec::as_slice).collect();
                let tune = self.tune_config().expect("trigger scheme");
                let (m, epochs) = trigger::fit_trigger_sets(model, &refs, replay, tune)?;
                let mut specs = Vec::with_capacity(keys.len());
                for set in &sets {
                    let spec = self.trigger_spec(model, set);
                    trigger::check_fit(&m, set, spec.threshold, epochs)?;
                    specs.push(spec);
                }
                Ok((m, specs))
            }
        }
    }

    /// Trigger set a key selects under this scheme (empty for the weight
    /// scheme).
    pub fn triggers(&self, model: &ToyModel, key: &Key) -> Result<Vec<Trigger>, WatermarkError> {
        match self {
            Scheme::WeightMark(_) => Ok(Vec::new()),
            Scheme::TriggerMark(p) => Ok(trigger::triggermark_triggers(model, key, p)),
            Scheme::AtgfMark(p) => atgf::atgfmark_triggers(model, key, p),
        }
    }

    /// The verifier `key` would get on `model`, without embedding anything.
    pub fn spec_for(&self, model: &ToyModel, key: &Key) -> Result<VerifierSpec, WatermarkError> {
        match self {
            Scheme::WeightMark(p) => Ok(weight::spec(model, p)),
            _ => Ok(self.trigger_spec(model, &self.triggers(model, key)?)),
        }
    }

    fn trigger_spec(&self, model: &ToyModel, triggers: &[Trigger]) -> VerifierSpec {
        match self {
            Scheme::TriggerMark(p) => trigger::triggermark_spec(model, p, triggers),
            Scheme::AtgfMark(p) => atgf::atgfmark_spec(model, p, triggers),
            Scheme::WeightMark(_) => unreachable!("weight scheme has no triggers"),
        }
    }

    /// Tuning settings used by trigger embedding, if any.
    pub fn tune_config(&self) -> Option<&TuneConfig> {
        match self {
            Scheme::WeightMark(_) => None,
            Scheme::TriggerMark(p) => Some(&p.tune),
            Scheme::AtgfMark(p) => Some(&p.tune),
        }
    }
}

/// `verify(M, key)` for any scheme.
pub fn verify(model: &ToyModel, key: &Key, spec: &VerifierSpec) -> bool {
    score(model, key, spec).is_some_and(|s| s >= spec.threshold)
}

/// Fraction of marks that check out, or `None` if the key does not match
/// the verifier at all.
pub fn score(model: &ToyModel, key: &Key, spec: &VerifierSpec) -> Option<f64> {
    match spec.params {
        VerifierParams::WeightMark { .. } => weight::score(model, key, spec),
        VerifierParams::TriggerMark { .. } | VerifierParams::AtgfMark { .. } => {
            let triggers = trigger::triggers_for_spec(key, spec)?;
            trigger::trigger_accuracy(model, &triggers).ok()
        }
    }
}

fn expect_scheme(spec: &VerifierSpec, expected: SchemeId) -> Result<(), WatermarkError> {
    let found = spec.scheme_id();
    if found != expected {
        return Err(WatermarkError::SchemeMismatch { expected, found });
    }
    Ok(())
}

pub fn verify_weightmark(model: &ToyModel, key: &Key, spec: &VerifierSpec) -> Result<bool, WatermarkError> {
    expect_scheme(spec, SchemeId::WeightMark)?;
    Ok(verify(model, key, spec))
}

pub fn verify_triggermark(model: &ToyModel, key: &Key, spec: &VerifierSpec) -> Result<bool, WatermarkError> {
    expect_scheme(spec, SchemeId::TriggerMark)?;
    Ok(verify(model, key, spec))
}

pub fn verify_atgfmark(model: &ToyModel, key: &Key, spec: &VerifierSpec) -> Result<bool, WatermarkError> {
    expect_scheme(spec, SchemeId::AtgfMark)?;
    Ok(verify(model, key, spec))
}

pub(crate) mod seed_hex {
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        super::hex_bytes::serialize(seed, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let v = super::hex_bytes::deserialize(d)?;
        v.try_into().map_err(|_| serde::de::Error::custom("expected 32 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{canonical_decode, canonical_encode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gen_checks_security_param() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            gen(64, &mut rng, "a".into()),
            Err(WatermarkError::WeakSecurityParam(64))
        );
        assert!(gen(512, &mut rng, "a".into()).is_err());
        let k = gen(130, &mut rng, "a".into()).unwrap();
        assert!(k.seed[17..].iter().all(|b| *b == 0));
        assert!(k.seed[16] < 4);
    }

    #[test]
    fn gen_is_reproducible_and_distinct() {
        let a = gen(256, &mut ChaCha8Rng::seed_from_u64(5), "a".into()).unwrap();
        let b = gen(256, &mut ChaCha8Rng::seed_from_u64(5), "a".into()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = gen(256, &mut rng, "a".into()).unwrap();
        let d = gen(256, &mut rng, "a".into()).unwrap();
        assert_eq!(a, b);
        assert_ne!(c, d);
    }

    #[test]
    fn key_and_verifier_canonical_roundtrip() {
        let key = Key {
            seed: [9; 32],
            author_id: "u1".into(),
        };
        let bytes = canonical_encode(&key).unwrap();
        assert_eq!(canonical_decode::<Key>(&bytes).unwrap(), key);

        let specs = [
            VerifierSpec {
                params: VerifierParams::WeightMark {
                    n_marked: 20,
                    num_params: 1140,
                    tolerance: 0.05,
                },
                threshold: 0.5,
            },
            VerifierSpec {
                params: VerifierParams::TriggerMark {
                    n_triggers: 2,
                    input_dim: 16,
                    num_classes: 4,
                    input_scale: 1.0,
                    trigger_digests: vec![Digest([1; 32]), Digest([2; 32])],
                },
                threshold: 0.8,
            },
            VerifierSpec {
                params: VerifierParams::AtgfMark {
                    n_triggers: 1,
                    num_classes: 4,
                    code_scale: 3.0,
                    input_clip: 4.0,
                    bottleneck_dim: 2,
                    decoder_shapes: vec![(2, 3)],
                    decoder_params: vec![0.5; 9],
                    label_map_seed: [4; 32],
                    trigger_digests: vec![Digest([3; 32])],
                },
                threshold: 0.8,
            },
        ];
        for spec in specs {
            let bytes = canonical_encode(&spec).unwrap();
            assert_eq!(canonical_decode::<VerifierSpec>(&bytes).unwrap(), spec);
        }
    }

    #[test]
    fn nan_threshold_has_no_canonical_form() {
        let spec = VerifierSpec {
            params: VerifierParams::WeightMark {
                n_marked: 1,
                num_params: 2,
                tolerance: 0.1,
            },
            threshold: f64::NAN,
        };
        assert!(canonical_encode(&spec).is_err());
    }
}

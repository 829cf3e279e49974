//! Triggers produced by a shared decoder. Each author trains an autoencoder
//! from a common initialisation on local data; the elementwise mean of
//! those parameters becomes the generator, and a key picks the latent codes
//! fed through its decoder half.

use serde::{Deserialize, Serialize};

use super::trigger::{fit_triggers, Trigger, TuneConfig};
use super::{Key, VerifierParams, VerifierSpec, WatermarkError};
use crate::crypto::hash0;
use crate::model::net::{self, Act, Trace};
use crate::model::ToyModel;
use crate::model::{Dataset, ModelError};
use crate::prf::{Prf, Seed};

/// `input -> hidden -> bottleneck -> hidden -> input`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AeLayout {
    pub input_dim: usize,
    #[serde(default = "AeLayout::default_hidden")]
    pub hidden: usize,
    #[serde(default = "AeLayout::default_bottleneck")]
    pub bottleneck: usize,
}

impl AeLayout {
    fn default_hidden() -> usize {
        8
    }
    fn default_bottleneck() -> usize {
        4
    }

    pub fn new(input_dim: usize) -> Self {
        AeLayout {
            input_dim,
            hidden: Self::default_hidden(),
            bottleneck: Self::default_bottleneck(),
        }
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        let AeLayout {
            input_dim: d,
            hidden: h,
            bottleneck: b,
        } = *self;
        vec![(d, h), (h, b), (b, h), (h, d)]
    }

    pub fn decoder_shapes(&self) -> Vec<(usize, usize)> {
        self.shapes()[2..].to_vec()
    }

    pub fn num_params(&self) -> usize {
        net::param_count(&self.shapes())
    }

    fn encoder_params(&self) -> usize {
        net::param_count(&self.shapes()[..2])
    }
}

const ENCODER_ACTS: [Act; 2] = [Act::Relu, Act::Identity];
const DECODER_ACTS: [Act; 2] = [Act::Relu, Act::Identity];
const AE_ACTS: [Act; 4] = [Act::Relu, Act::Identity, Act::Relu, Act::Identity];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder {
    pub layout: AeLayout,
    pub params: Vec<f64>,
}

impl Autoencoder {
    /// Authors pass the same `seed` so their parameters can be averaged.
    pub fn new(layout: AeLayout, seed: Seed) -> Result<Self, ModelError> {
        if layout.input_dim == 0 || layout.hidden == 0 || layout.bottleneck == 0 {
            return Err(ModelError::InvalidConfig(format!("bad autoencoder layout {layout:?}")));
        }
        let m = ToyModel::new(layout.shapes(), seed.child("autoencoder"))?;
        Ok(Autoencoder {
            layout,
            params: m.params().to_vec(),
        })
    }

    pub fn reconstruct(&self, x: &[f64]) -> Vec<f64> {
        let mut trace = Trace::default();
        net::forward_into(&self.layout.shapes(), &self.params, &AE_ACTS, x, &mut trace);
        trace.output().to_vec()
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        let mut trace = Trace::default();
        let shapes = self.layout.shapes();
        net::forward_into(
            &shapes[..2],
            &self.params[..self.layout.encoder_params()],
            &ENCODER_ACTS,
            x,
            &mut trace,
        );
        trace.output().to_vec()
    }

    /// Mean over samples and coordinates of the squared reconstruction error.
    pub fn loss(&self, data: &Dataset) -> f64 {
        self.loss_and_grad(data, false).0
    }

    fn loss_and_grad(&self, data: &Dataset, with_grad: bool) -> (f64, Vec<f64>) {
        let shapes = self.layout.shapes();
        let scale = 1.0 / (data.len() * self.layout.input_dim) as f64;
        let mut grad = if with_grad {
            vec![0.0; self.params.len()]
        } else {
            Vec::new()
        };
        let mut trace = Trace::default();
        let mut d_out = vec![0.0; self.layout.input_dim];
        let mut loss = 0.0;
        for (x, _) in data.iter() {
            net::forward_into(&shapes, &self.params, &AE_ACTS, x, &mut trace);
            for ((d, o), t) in d_out.iter_mut().zip(trace.output()).zip(x) {
                loss += scale * (o - t) * (o - t);
                *d = 2.0 * scale * (o - t);
            }
            if with_grad {
                net::backward_into(&shapes, &self.params, &AE_ACTS, &trace, &d_out, &mut grad);
            }
        }
        (loss, grad)
    }

    pub fn gradient(&self, data: &Dataset) -> (f64, Vec<f64>) {
        self.loss_and_grad(data, true)
    }
}

/// Full-batch gradient descent on reconstruction error.
pub fn train_autoencoder(ae: &Autoencoder, data: &Dataset, epochs: usize, lr: f64) -> Result<Autoencoder, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if data.dim() != ae.layout.input_dim {
        return Err(ModelError::DimensionMismatch {
            expected: ae.layout.input_dim,
            got: data.dim(),
        });
    }
    let mut out = ae.clone();
    for _ in 0..epochs {
        let (_, g) = out.gradient(data);
        out.params.iter_mut().zip(&g).for_each(|(p, g)| *p -= lr * g);
    }
    Ok(out)
}

/// The averaged decoder plus everything needed to map a key to triggers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtgfGenerator {
    pub layout: AeLayout,
    pub decoder_params: Vec<f64>,
    #[serde(with = "super::seed_hex")]
    pub label_map_seed: [u8; 32],
    /// Latent codes are `code_scale * N(0, 1)`.
    pub code_scale: f64,
    /// Decoded coordinates are clamped to `[-input_clip, input_clip]`, the
    /// analogue of a valid pixel range.
    pub input_clip: f64,
}

/// Public settings the aggregator fixes when building the generator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorOptions {
    pub label_map_seed: [u8; 32],
    pub code_scale: f64,
    pub input_clip: f64,
}

impl AtgfGenerator {
    pub fn decode(&self, code: &[f64]) -> Vec<f64> {
        let mut trace = Trace::default();
        net::forward_into(
            &self.layout.decoder_shapes(),
            &self.decoder_params,
            &DECODER_ACTS,
            code,
            &mut trace,
        );
        trace
            .output()
            .iter()
            .map(|v| v.clamp(-self.input_clip, self.input_clip))
            .collect()
    }
}

/// Elementwise mean of the authors' autoencoder parameters.
pub fn average_params(author_params: &[Vec<f64>]) -> Result<Vec<f64>, WatermarkError> {
    let first = author_params.first().ok_or(WatermarkError::EmptyList)?;
    if let Some(bad) = author_params.iter().find(|p| p.len() != first.len()) {
        return Err(WatermarkError::ShapeMismatch {
            expected: first.len(),
            got: bad.len(),
        });
    }
    let k = author_params.len() as f64;
    Ok((0..first.len())
        .map(|i| author_params.iter().map(|p| p[i]).sum::<f64>() / k)
        .collect())
}

pub fn build_atgf_generator(
    layout: AeLayout,
    author_params: &[Vec<f64>],
    options: GeneratorOptions,
) -> Result<AtgfGenerator, WatermarkError> {
    let mean = average_params(author_params)?;
    if mean.len() != layout.num_params() {
        return Err(WatermarkError::ShapeMismatch {
            expected: layout.num_params(),
            got: mean.len(),
        });
    }
    Ok(AtgfGenerator {
        layout,
        decoder_params: mean[layout.encoder_params()..].to_vec(),
        label_map_seed: options.label_map_seed,
        code_scale: options.code_scale,
        input_clip: options.input_clip,
    })
}

/// How the authors train the shared autoencoder: `rounds` of local
/// training from the current mean followed by averaging.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AeTraining {
    #[serde(default = "AeTraining::default_rounds")]
    pub rounds: usize,
    #[serde(default = "AeTraining::default_local_epochs")]
    pub local_epochs: usize,
    #[serde(default = "AeTraining::default_lr")]
    pub lr: f64,
    /// Latent codes are drawn at this multiple of the data's code RMS.
    #[serde(default = "AeTraining::default_code_scale")]
    pub code_scale: f64,
    #[serde(default = "AeTraining::default_input_clip")]
    pub input_clip: f64,
}

impl AeTraining {
    fn default_rounds() -> usize {
        10
    }
    fn default_local_epochs() -> usize {
        100
    }
    fn default_lr() -> f64 {
        0.1
    }
    fn default_code_scale() -> f64 {
        1.0
    }
    fn default_input_clip() -> f64 {
        3.0
    }
}

impl Default for AeTraining {
    fn default() -> Self {
        AeTraining {
            rounds: Self::default_rounds(),
            local_epochs: Self::default_local_epochs(),
            lr: Self::default_lr(),
            code_scale: Self::default_code_scale(),
            input_clip: Self::default_input_clip(),
        }
    }
}

/// Root mean square of the bottleneck codes of `data`.
pub fn code_rms(ae: &Autoencoder, data: &Dataset) -> f64 {
    let (sum, n) = data.iter().fold((0.0, 0usize), |(s, n), (x, _)| {
        let c = ae.encode(x);
        (s + c.iter().map(|v| v * v).sum::<f64>(), n + c.len())
    });
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Trains the generator across authors: each round every author fits the
/// current mean autoencoder to its own data and the results are averaged.
/// Authors also report the code RMS of their data, whose mean sets the
/// latent scale.
pub fn federated_generator(
    layout: AeLayout,
    author_data: &[&Dataset],
    training: &AeTraining,
    label_map_seed: [u8; 32],
    seed: Seed,
) -> Result<AtgfGenerator, WatermarkError> {
    if author_data.is_empty() {
        return Err(WatermarkError::EmptyList);
    }
    let mut ae = Autoencoder::new(layout, seed)?;
    for _ in 0..training.rounds {
        let locals = author_data
            .iter()
            .map(|d| Ok(train_autoencoder(&ae, d, training.local_epochs, training.lr)?.params))
            .collect::<Result<Vec<_>, WatermarkError>>()?;
        ae.params = average_params(&locals)?;
    }
    let rms = author_data.iter().map(|d| code_rms(&ae, d)).sum::<f64>() / author_data.len() as f64;
    build_atgf_generator(
        layout,
        std::slice::from_ref(&ae.params),
        GeneratorOptions {
            label_map_seed,
            code_scale: training.code_scale * rms,
            input_clip: training.input_clip,
        },
    )
}

/// The `n` triggers `key` selects from the generator.
pub fn atgf_trigger(generator: &AtgfGenerator, key: &Key, n: usize, num_classes: usize) -> Vec<Trigger> {
    let mut codes = Prf::new(&key.seed, "atgf/code");
    let mut label_seed = [0u8; 64];
    label_seed[..32].copy_from_slice(&generator.label_map_seed);
    label_seed[32..].copy_from_slice(&key.seed);
    let mut labels = Prf::new(hash0(&label_seed).as_bytes(), "atgf/label");
    (0..n)
        .map(|_| {
            let code: Vec<f64> = (0..generator.layout.bottleneck)
                .map(|_| generator.code_scale * codes.normal())
                .collect();
            Trigger {
                input: generator.decode(&code),
                label: labels.below(num_classes as u64) as usize,
            }
        })
        .collect()
}

/// Rebuilds the generator a verifier commits to.
fn generator_from_spec(spec: &VerifierSpec) -> Option<(AtgfGenerator, usize, usize)> {
    let VerifierParams::AtgfMark {
        n_triggers,
        num_classes,
        code_scale,
        input_clip,
        bottleneck_dim,
        decoder_shapes,
        decoder_params,
        label_map_seed,
        ..
    } = &spec.params
    else {
        return None;
    };
    let [(b, h), (h2, d)] = decoder_shapes[..] else {
        return None;
    };
    let layout = AeLayout {
        input_dim: d as usize,
        hidden: h as usize,
        bottleneck: b as usize,
    };
    let well_formed = b == *bottleneck_dim
        && h == h2
        && b > 0
        && net::param_count(&layout.decoder_shapes()) == decoder_params.len()
        && *num_classes > 0;
    well_formed.then(|| {
        (
            AtgfGenerator {
                layout,
                decoder_params: decoder_params.clone(),
                label_map_seed: *label_map_seed,
                code_scale: *code_scale,
                input_clip: *input_clip,
            },
            *n_triggers as usize,
            *num_classes as usize,
        )
    })
}

pub(super) fn triggers_from_spec(key: &Key, spec: &VerifierSpec) -> Option<Vec<Trigger>> {
    let (g, n, classes) = generator_from_spec(spec)?;
    Some(atgf_trigger(&g, key, n, classes))
}

#[derive(Clone, Debug)]
pub struct AtgfParams {
    pub generator: AtgfGenerator,
    pub n_triggers: u32,
    pub threshold: f64,
    pub tune: TuneConfig,
}

impl AtgfParams {
    /// Five triggers, the trigger scheme's threshold and tuning.
    pub fn new(generator: AtgfGenerator) -> Self {
        let t = super::trigger::TriggerParams::default();
        AtgfParams {
            generator,
            n_triggers: t.n_triggers,
            threshold: t.threshold,
            tune: t.tune,
        }
    }
}

pub fn atgfmark_triggers(model: &ToyModel, key: &Key, p: &AtgfParams) -> Result<Vec<Trigger>, WatermarkError> {
    let g = &p.generator;
    if g.layout.input_dim != model.input_dim() {
        return Err(WatermarkError::DimMismatch {
            generator: g.layout.input_dim,
            model: model.input_dim(),
        });
    }
    Ok(atgf_trigger(g, key, p.n_triggers as usize, model.num_classes()))
}

pub(super) fn atgfmark_spec(model: &ToyModel, p: &AtgfParams, triggers: &[Trigger]) -> VerifierSpec {
    let g = &p.generator;
    VerifierSpec {
        params: VerifierParams::AtgfMark {
            n_triggers: p.n_triggers,
            num_classes: model.num_classes() as u32,
            code_scale: g.code_scale,
            input_clip: g.input_clip,
            bottleneck_dim: g.layout.bottleneck as u32,
            decoder_shapes: g
                .layout
                .decoder_shapes()
                .iter()
                .map(|&(i, o)| (i as u32, o as u32))
                .collect(),
            decoder_params: g.decoder_params.clone(),
            label_map_seed: g.label_map_seed,
            trigger_digests: triggers.iter().map(Trigger::digest).collect(),
        },
        threshold: p.threshold,
    }
}

pub fn embed_atgfmark(
    model: &ToyModel,
    key: &Key,
    p: &AtgfParams,
    replay: Option<&Dataset>,
) -> Result<(ToyModel, VerifierSpec), WatermarkError> {
    let triggers = atgfmark_triggers(model, key, p)?;
    let (m, _) = fit_triggers(model, &triggers, replay, &p.tune, p.threshold)?;
    Ok((m, atgfmark_spec(model, p, &triggers)))
}

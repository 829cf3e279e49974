//! A small fully connected classifier trained with full-batch gradient
//! descent on mean cross-entropy. Everything is `f64` and deterministic.

mod data;
mod io;
pub(crate) mod net;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash0, Digest, ModelInfo};
use crate::prf::Seed;
pub use data::{make_synthetic_task, make_task, Dataset, TaskSpec};
use net::{Act, Trace};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("malformed model file: {0}")]
    Format(String),
}

/// Named architectures used by scenarios.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    /// `dim -> 32 -> 16 -> classes`
    Default,
    /// `dim -> 48 -> 32 -> 32 -> 16 -> classes`
    Deep,
}

impl ArchKind {
    pub fn hidden(&self) -> &'static [usize] {
        match self {
            ArchKind::Default => &[32, 16],
            ArchKind::Deep => &[48, 32, 32, 16],
        }
    }

    pub fn shapes(&self, dim: usize, classes: usize) -> Vec<(usize, usize)> {
        let mut widths = vec![dim];
        widths.extend_from_slice(self.hidden());
        widths.push(classes);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn name(&self) -> &'static str {
        match self {
            ArchKind::Default => "default",
            ArchKind::Deep => "deep",
        }
    }
}

/// Classifier with ReLU hidden layers and a softmax output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    layer_shapes: Vec<(usize, usize)>,
    params: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetric {
    pub accuracy: f64,
}

fn validate_shapes(shapes: &[(usize, usize)]) -> Result<(), ModelError> {
    if shapes.is_empty() || shapes.iter().any(|&(i, o)| i == 0 || o == 0) {
        return Err(ModelError::InvalidConfig(format!("bad layer shapes {shapes:?}")));
    }
    for w in shapes.windows(2) {
        if w[0].1 != w[1].0 {
            return Err(ModelError::DimensionMismatch {
                expected: w[0].1,
                got: w[1].0,
            });
        }
    }
    Ok(())
}

impl ToyModel {
    /// He-initialised model; the same seed always gives the same parameters.
    pub fn new(layer_shapes: Vec<(usize, usize)>, seed: Seed) -> Result<Self, ModelError> {
        validate_shapes(&layer_shapes)?;
        let mut rng = seed.child("model-init").rng();
        let params = net::init_params(&layer_shapes, || rng.sample(StandardNormal));
        Ok(ToyModel { layer_shapes, params })
    }

    pub fn with_arch(arch: ArchKind, dim: usize, classes: usize, seed: Seed) -> Result<Self, ModelError> {
        ToyModel::new(arch.shapes(dim, classes), seed)
    }

    pub fn from_params(layer_shapes: Vec<(usize, usize)>, params: Vec<f64>) -> Result<Self, ModelError> {
        validate_shapes(&layer_shapes)?;
        let expected = net::param_count(&layer_shapes);
        if params.len() != expected {
            return Err(ModelError::DimensionMismatch {
                expected,
                got: params.len(),
            });
        }
        Ok(ToyModel { layer_shapes, params })
    }

    pub fn layer_shapes(&self) -> &[(usize, usize)] {
        &self.layer_shapes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_shapes[0].0
    }

    pub fn num_classes(&self) -> usize {
        self.layer_shapes[self.layer_shapes.len() - 1].1
    }

    /// `[start, end)` ranges of each layer's parameters (weights then biases).
    pub fn layer_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.layer_shapes
            .iter()
            .map(|(i, o)| {
                let r = start..start + i * o + o;
                start = r.end;
                r
            })
            .collect()
    }

    fn acts(&self) -> Vec<Act> {
        let mut acts = vec![Act::Relu; self.layer_shapes.len()];
        *acts.last_mut().expect("validated non-empty") = Act::Identity;
        acts
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.input_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_data(&self, data: &Dataset) -> Result<(), ModelError> {
        if data.dim() != self.input_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.input_dim(),
                got: data.dim(),
            });
        }
        if data.num_classes() > self.num_classes() {
            return Err(ModelError::DimensionMismatch {
                expected: self.num_classes(),
                got: data.num_classes(),
            });
        }
        Ok(())
    }

    /// Class probabilities.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_dim(x)?;
        let mut trace = Trace::default();
        net::forward_into(&self.layer_shapes, &self.params, &self.acts(), x, &mut trace);
        Ok(net::softmax(trace.output()))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize, ModelError> {
        Ok(argmax(&self.forward(x)?))
    }

    pub fn predict_all(&self, data: &Dataset) -> Result<Vec<usize>, ModelError> {
        self.check_data(data)?;
        let acts = self.acts();
        let mut trace = Trace::default();
        Ok(data
            .iter()
            .map(|(x, _)| {
                net::forward_into(&self.layer_shapes, &self.params, &acts, x, &mut trace);
                argmax(trace.output())
            })
            .collect())
    }

    /// Mean cross-entropy over `data`.
    pub fn loss(&self, data: &Dataset) -> Result<f64, ModelError> {
        Ok(self.objective(&[(data, 1.0)], false)?.0)
    }

    /// Loss and gradient of `sum_t weight_t * mean_CE(data_t)`.
    pub fn objective_gradient(&self, terms: &[(&Dataset, f64)]) -> Result<(f64, Vec<f64>), ModelError> {
        self.objective(terms, true)
    }

    fn objective(&self, terms: &[(&Dataset, f64)], with_grad: bool) -> Result<(f64, Vec<f64>), ModelError> {
        let acts = self.acts();
        let mut grad = if with_grad {
            vec![0.0; self.params.len()]
        } else {
            Vec::new()
        };
        let mut trace = Trace::default();
        let mut d_out = vec![0.0; self.num_classes()];
        let mut loss = 0.0;
        for (data, weight) in terms {
            self.check_data(data)?;
            if data.is_empty() {
                return Err(ModelError::EmptyDataset);
            }
            let w = weight / data.len() as f64;
            for (x, y) in data.iter() {
                net::forward_into(&self.layer_shapes, &self.params, &acts, x, &mut trace);
                let p = net::softmax(trace.output());
                loss -= w * p[y].max(1e-300).ln();
                if with_grad {
                    for (c, d) in d_out.iter_mut().enumerate() {
                        *d = w * (p[c] - if c == y { 1.0 } else { 0.0 });
                    }
                    net::backward_into(&self.layer_shapes, &self.params, &acts, &trace, &d_out, &mut grad);
                }
            }
        }
        Ok((loss, grad))
    }

    /// `params -= lr * grad`
    pub fn step(&mut self, grad: &[f64], lr: f64) {
        self.params.iter_mut().zip(grad).for_each(|(p, g)| *p -= lr * g);
    }

    pub fn info(&self, round: u32) -> ModelInfo {
        ModelInfo::new(
            self.layer_shapes.iter().map(|&(i, o)| (i as u32, o as u32)).collect(),
            round,
        )
    }

    pub fn digest(&self) -> Digest {
        hash0(&self.to_bytes())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        io::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        io::decode(bytes)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &x)| if x > best.1 { (i, x) } else { best },
        )
        .0
}

/// Full-batch gradient of mean cross-entropy on `data`.
pub fn local_gradient(model: &ToyModel, data: &Dataset) -> Result<Vec<f64>, ModelError> {
    Ok(model.objective_gradient(&[(data, 1.0)])?.1)
}

/// `epochs` full-batch gradient-descent steps; returns the trained copy.
pub fn train(model: &ToyModel, data: &Dataset, epochs: usize, lr: f64) -> Result<ToyModel, ModelError> {
    Ok(train_with_history(model, data, epochs, lr)?.0)
}

/// Like [`train`], also returning the loss before each step.
pub fn train_with_history(
    model: &ToyModel,
    data: &Dataset,
    epochs: usize,
    lr: f64,
) -> Result<(ToyModel, Vec<f64>), ModelError> {
    model.check_data(data)?;
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut m = model.clone();
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let (loss, grad) = m.objective_gradient(&[(data, 1.0)])?;
        losses.push(loss);
        m.step(&grad, lr);
    }
    Ok((m, losses))
}

pub fn evaluate(model: &ToyModel, test: &Dataset) -> Result<EvalMetric, ModelError> {
    if test.is_empty() {
        return Ok(EvalMetric { accuracy: 0.0 });
    }
    let preds = model.predict_all(test)?;
    let correct = preds.iter().zip(test.labels()).filter(|(p, y)| p == y).count();
    Ok(EvalMetric {
        accuracy: correct as f64 / test.len() as f64,
    })
}

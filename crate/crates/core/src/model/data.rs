use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::prf::Seed;

/// Labelled samples, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dim: usize,
    num_classes: usize,
    inputs: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(dim: usize, num_classes: usize, inputs: Vec<f64>, labels: Vec<usize>) -> Result<Self, ModelError> {
        if dim == 0 || num_classes == 0 {
            return Err(ModelError::InvalidConfig("dataset needs dim and classes > 0".into()));
        }
        if inputs.len() != labels.len() * dim {
            return Err(ModelError::DimensionMismatch {
                expected: labels.len() * dim,
                got: inputs.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(ModelError::InvalidConfig(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(Dataset {
            dim,
            num_classes,
            inputs,
            labels,
        })
    }

    pub fn from_rows(rows: &[(Vec<f64>, usize)], num_classes: usize) -> Result<Self, ModelError> {
        let dim = rows.first().map_or(0, |(x, _)| x.len());
        let mut inputs = Vec::with_capacity(rows.len() * dim);
        for (x, _) in rows {
            if x.len() != dim {
                return Err(ModelError::DimensionMismatch {
                    expected: dim,
                    got: x.len(),
                });
            }
            inputs.extend_from_slice(x);
        }
        Dataset::new(dim, num_classes, inputs, rows.iter().map(|(_, y)| *y).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.inputs.chunks_exact(self.dim).zip(self.labels.iter().copied())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            inputs.extend_from_slice(self.row(i));
        }
        Dataset {
            dim: self.dim,
            num_classes: self.num_classes,
            inputs,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Splits into `k` disjoint contiguous blocks whose sizes differ by at
    /// most one. Synthetic tasks interleave their classes, so each block
    /// keeps roughly the full label mix.
    pub fn shards(&self, k: usize) -> Vec<Dataset> {
        let k = k.max(1);
        let (n, extra) = (self.len() / k, self.len() % k);
        let mut start = 0;
        (0..k)
            .map(|s| {
                let end = start + n + usize::from(s < extra);
                let idx: Vec<usize> = (start..end).collect();
                start = end;
                self.subset(&idx)
            })
            .collect()
    }

    /// First `n` samples (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn concat(parts: &[&Dataset]) -> Result<Dataset, ModelError> {
        let first = parts
            .first()
            .ok_or_else(|| ModelError::InvalidConfig("nothing to concatenate".into()))?;
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.dim != first.dim || p.num_classes != first.num_classes {
                return Err(ModelError::DimensionMismatch {
                    expected: first.dim,
                    got: p.dim,
                });
            }
            inputs.extend_from_slice(&p.inputs);
            labels.extend_from_slice(&p.labels);
        }
        Dataset::new(first.dim, first.num_classes, inputs, labels)
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// Gaussian-blob classification task parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub n_per_class: usize,
    /// Distance of each class mean from the origin, in noise standard deviations.
    #[serde(default = "TaskSpec::default_separation")]
    pub separation: f64,
}

impl TaskSpec {
    fn default_separation() -> f64 {
        3.0
    }

    pub fn new(num_classes: usize, dim: usize, n_per_class: usize) -> Self {
        TaskSpec {
            num_classes,
            dim,
            n_per_class,
            separation: Self::default_separation(),
        }
    }
}

/// Train and test splits drawn from the same blobs, `n_per_class` each.
pub fn make_synthetic_task(
    num_classes: usize,
    dim: usize,
    n_per_class: usize,
    seed: u64,
) -> Result<(Dataset, Dataset), ModelError> {
    make_task(&TaskSpec::new(num_classes, dim, n_per_class), Seed::from_u64(seed))
}

pub fn make_task(spec: &TaskSpec, seed: Seed) -> Result<(Dataset, Dataset), ModelError> {
    let TaskSpec {
        num_classes,
        dim,
        n_per_class,
        separation,
    } = *spec;
    if num_classes < 2 || dim < 2 || n_per_class == 0 || !(separation.is_finite() && separation > 0.0) {
        return Err(ModelError::InvalidConfig(format!(
            "need classes >= 2, dim >= 2, n_per_class >= 1, separation > 0; got {spec:?}"
        )));
    }
    let mut rng = seed.child("blob-means").rng();
    let means = class_means(num_classes, dim, separation, &mut rng);

    let sample = |label: &str| -> Dataset {
        let mut rng = seed.child(label).rng();
        let mut inputs = Vec::with_capacity(num_classes * n_per_class * dim);
        let mut labels = Vec::with_capacity(num_classes * n_per_class);
        for _ in 0..n_per_class {
            for (c, mean) in means.iter().enumerate() {
                inputs.extend(mean.iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)));
                labels.push(c);
            }
        }
        Dataset {
            dim,
            num_classes,
            inputs,
            labels,
        }
    };
    Ok((sample("blob-train"), sample("blob-test")))
}

/// Mutually orthogonal directions when `classes <= dim`, random otherwise,
/// each scaled to norm `separation`.
fn class_means(classes: usize, dim: usize, separation: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(classes);
    while basis.len() < classes {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if basis.len() < dim {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        basis.push(v.into_iter().map(|x| x / norm).collect());
    }
    basis
        .into_iter()
        .map(|b| b.into_iter().map(|x| x * separation).collect())
        .collect()
}

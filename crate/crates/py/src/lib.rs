//! Python bindings: hashing and Merkle paths, signing identities, the toy
//! model, watermark embed/verify, and the scenario runner.

use std::path::Path;

use msign::cli::{self, ScenarioConfig};
use msign::crypto::{self, AuthPath, AuthorId, Digest, SigningIdentity};
use msign::fl::KEY_BITS;
use msign::model::{self, ArchKind, TaskSpec};
use msign::prf::Seed;
use msign::watermark::trigger::TriggerParams;
use msign::watermark::weight::WeightMarkParams;
use msign::watermark::{self, Scheme, VerifierSpec};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn digest(bytes: &[u8]) -> PyResult<Digest> {
    Digest::from_slice(bytes).ok_or_else(|| err(format!("expected 32 bytes, got {}", bytes.len())))
}

fn seed32(bytes: &[u8]) -> PyResult<[u8; 32]> {
    bytes
        .try_into()
        .map_err(|_| err(format!("seed must be 32 bytes, got {}", bytes.len())))
}

#[pyfunction]
fn hash0<'py>(py: Python<'py>, data: &[u8]) -> Bound<'py, PyBytes> {
    PyBytes::new(py, &crypto::hash0(data).0)
}

#[pyfunction]
fn hash2<'py>(py: Python<'py>, left: &[u8], right: &[u8]) -> PyResult<Bound<'py, PyBytes>> {
    Ok(PyBytes::new(py, &crypto::hash2(&digest(left)?, &digest(right)?).0))
}

fn tree(leaves: &[Vec<u8>]) -> PyResult<crypto::MerkleTree> {
    let ds = leaves.iter().map(|l| digest(l)).collect::<PyResult<Vec<_>>>()?;
    crypto::build_merkle(&ds).map_err(err)
}

/// Root over 32-byte leaf digests.
#[pyfunction]
fn merkle_root<'py>(py: Python<'py>, leaves: Vec<Vec<u8>>) -> PyResult<Bound<'py, PyBytes>> {
    Ok(PyBytes::new(py, &tree(&leaves)?.root().0))
}

/// Authentication path of leaf `index`, as JSON.
#[pyfunction]
fn auth_path(leaves: Vec<Vec<u8>>, index: usize) -> PyResult<String> {
    let path = tree(&leaves)?.prove(index).map_err(err)?;
    serde_json::to_string(&path).map_err(err)
}

#[pyfunction]
fn verify_path(path_json: &str, root: &[u8]) -> PyResult<bool> {
    let path: AuthPath = serde_json::from_str(path_json).map_err(err)?;
    Ok(crypto::verify_membership(&path, &digest(root)?))
}

#[pyclass(name = "Identity")]
struct PyIdentity(SigningIdentity);

#[pymethods]
impl PyIdentity {
    #[new]
    fn new(author_id: &str, seed: &[u8]) -> PyResult<Self> {
        Ok(PyIdentity(SigningIdentity::from_seed(
            AuthorId::new(author_id),
            seed32(seed)?,
        )))
    }

    #[getter]
    fn author_id(&self) -> String {
        self.0.author_id().0.clone()
    }

    fn public_key<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.0.public_key().to_bytes())
    }

    fn sign<'py>(&self, py: Python<'py>, message: &[u8]) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.0.sign(message))
    }
}

#[pyclass(name = "Dataset", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset(model::Dataset);

#[pymethods]
impl PyDataset {
    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn head(&self, n: usize) -> Self {
        PyDataset(self.0.head(n))
    }
}

/// Train and test splits of the synthetic Gaussian task.
#[pyfunction]
fn make_task(num_classes: usize, dim: usize, n_per_class: usize, seed: u64) -> PyResult<(PyDataset, PyDataset)> {
    let (train, test) =
        model::make_task(&TaskSpec::new(num_classes, dim, n_per_class), Seed::from_u64(seed)).map_err(err)?;
    Ok((PyDataset(train), PyDataset(test)))
}

#[pyclass(name = "Model", skip_from_py_object)]
#[derive(Clone)]
struct PyModel(model::ToyModel);

#[pymethods]
impl PyModel {
    /// `arch` is "default" or "deep".
    #[new]
    fn new(arch: &str, dim: usize, num_classes: usize, seed: u64) -> PyResult<Self> {
        let kind: ArchKind = serde_json::from_value(serde_json::Value::String(arch.into())).map_err(err)?;
        Ok(PyModel(
            model::ToyModel::with_arch(kind, dim, num_classes, Seed::from_u64(seed)).map_err(err)?,
        ))
    }

    fn train(&self, data: &PyDataset, epochs: usize, lr: f64) -> PyResult<Self> {
        Ok(PyModel(model::train(&self.0, &data.0, epochs, lr).map_err(err)?))
    }

    fn accuracy(&self, data: &PyDataset) -> PyResult<f64> {
        Ok(model::evaluate(&self.0, &data.0).map_err(err)?.accuracy)
    }

    fn digest(&self) -> String {
        self.0.digest().to_hex()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.0.num_params()
    }
}

#[pyclass(name = "Key", skip_from_py_object)]
#[derive(Clone)]
struct PyKey(watermark::Key);

#[pymethods]
impl PyKey {
    #[new]
    fn new(author_id: &str, seed: u64) -> PyResult<Self> {
        let key = watermark::gen(KEY_BITS, &mut Seed::from_u64(seed).rng(), AuthorId::new(author_id)).map_err(err)?;
        Ok(PyKey(key))
    }

    #[getter]
    fn author_id(&self) -> String {
        self.0.author_id.0.clone()
    }
}

fn scheme(name: &str) -> PyResult<Scheme> {
    match name {
        "weightmark" => Ok(Scheme::WeightMark(WeightMarkParams::default())),
        "triggermark" => Ok(Scheme::TriggerMark(TriggerParams::default())),
        other => Err(err(format!(
            "unknown scheme {other:?}, expected weightmark or triggermark"
        ))),
    }
}

/// Returns the marked model and its verifier as JSON.
#[pyfunction]
#[pyo3(signature = (scheme_name, model, key, replay=None))]
fn embed(scheme_name: &str, model: &PyModel, key: &PyKey, replay: Option<&PyDataset>) -> PyResult<(PyModel, String)> {
    let (marked, spec) = scheme(scheme_name)?
        .embed(&model.0, &key.0, replay.map(|d| &d.0))
        .map_err(err)?;
    Ok((PyModel(marked), serde_json::to_string(&spec).map_err(err)?))
}

#[pyfunction]
fn verify(model: &PyModel, key: &PyKey, spec_json: &str) -> PyResult<bool> {
    let spec: VerifierSpec = serde_json::from_str(spec_json).map_err(err)?;
    Ok(watermark::verify(&model.0, &key.0, &spec))
}

/// Runs a scenario config given as JSON text and returns the report as
/// JSON. Nothing is written to disk.
#[pyfunction]
fn run_scenario(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let config = ScenarioConfig::from_json(config_json, Path::new("<python>")).map_err(err)?;
    let report = py.detach(|| cli::run_config(&config)).map_err(err)?;
    serde_json::to_string(&report).map_err(err)
}

#[pyfunction]
fn config_schema() -> PyResult<String> {
    serde_json::to_string(&msign::cli::config_schema()).map_err(err)
}

/// `(name, passed, detail)` for each selfcheck line.
#[pyfunction]
fn selfcheck(py: Python<'_>) -> Vec<(String, bool, String)> {
    py.detach(|| cli::selfcheck::run(false))
        .into_iter()
        .map(|l| (l.name.to_string(), l.passed, l.detail))
        .collect()
}

#[pymodule]
fn merkle_sign(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(hash0, m)?)?;
    m.add_function(wrap_pyfunction!(hash2, m)?)?;
    m.add_function(wrap_pyfunction!(merkle_root, m)?)?;
    m.add_function(wrap_pyfunction!(auth_path, m)?)?;
    m.add_function(wrap_pyfunction!(verify_path, m)?)?;
    m.add_function(wrap_pyfunction!(make_task, m)?)?;
    m.add_function(wrap_pyfunction!(embed, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(config_schema, m)?)?;
    m.add_function(wrap_pyfunction!(selfcheck, m)?)?;
    m.add_class::<PyIdentity>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyKey>()?;
    Ok(())
}

//! Python bindings: molecule encoding, model loading and embedding, formulation features,
//! the gradient-boosted regressor and the end-to-end runs.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use elyte_core::featurizer::{featurize, Component, EmbeddingCache, Formulation};
use elyte_core::gbt::{self, GbtEnsemble, GbtHyperparams};
use elyte_core::pipeline::{self, PipelineError, PretrainConfig, TrainOptions};
use elyte_core::selfies;
use elyte_core::transformer::{embed_molecule, load_bundle, ModelBundle};

fn pipeline_err(e: PipelineError) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_python<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Canonical SELFIES for a SMILES string.
#[pyfunction]
fn smiles_to_selfies(smiles: &str) -> PyResult<String> {
    Ok(selfies::encode_smiles(smiles)
        .map_err(value_err)?
        .to_string())
}

/// Decodes SELFIES and writes the molecule as SMILES.
#[pyfunction]
fn selfies_to_smiles(text: &str) -> PyResult<String> {
    let g = selfies::decode_str(text).map_err(value_err)?;
    Ok(elyte_core::write_smiles(&g))
}

/// `(train_indices, test_indices)` of the seeded 80/20 split.
#[pyfunction]
fn split_indices(n: usize, seed: u64) -> PyResult<(Vec<usize>, Vec<usize>)> {
    pipeline::split_indices(n, seed).map_err(pipeline_err)
}

/// A pretrained (frozen) molecule encoder with its vocabulary.
#[pyclass(module = "elyte", frozen)]
struct Model {
    bundle: ModelBundle,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(py: Python<'_>, path: PathBuf) -> PyResult<Self> {
        let bundle = py
            .detach(|| load_bundle(&path))
            .map_err(|e| pipeline_err(e.into()))?;
        Ok(Model { bundle })
    }

    /// Pretrains on a SMILES corpus with a JSON config and writes the bundle to `out`.
    #[staticmethod]
    fn pretrain(
        py: Python<'_>,
        corpus: PathBuf,
        config: PathBuf,
        out: PathBuf,
        seed: u64,
    ) -> PyResult<Self> {
        let bundle = py
            .detach(|| {
                let text = std::fs::read_to_string(&config)?;
                let mut cfg: PretrainConfig = serde_json::from_str(&text)?;
                cfg.train.seed = seed;
                pipeline::run_pretrain(&corpus, &cfg, &out).map(|(b, _)| b)
            })
            .map_err(pipeline_err)?;
        Ok(Model { bundle })
    }

    #[getter]
    fn width(&self) -> usize {
        self.bundle.params.config.d_model
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.bundle.vocab.len()
    }

    /// Pooled representation of one molecule.
    fn embed(&self, py: Python<'_>, smiles: &str) -> PyResult<Vec<f32>> {
        let b = &self.bundle;
        py.detach(|| embed_molecule(&b.params, &b.vocab, smiles))
            .map(|r| r.0)
            .map_err(|e| pipeline_err(e.into()))
    }

    /// Composition-weighted feature vector of `[(smiles, mole_fraction), ...]`.
    #[pyo3(signature = (components, strict = true))]
    fn featurize(
        &self,
        py: Python<'_>,
        components: Vec<(String, f64)>,
        strict: bool,
    ) -> PyResult<Vec<f64>> {
        let f = Formulation {
            id: "formulation".into(),
            components: components
                .into_iter()
                .map(|(s, c)| Component::new(s, c))
                .collect(),
            target: None,
        };
        let b = &self.bundle;
        py.detach(|| {
            let cache = EmbeddingCache::new(&b.params, &b.vocab);
            featurize(&f, |s| cache.get(s), strict)
        })
        .map(|v| v.0)
        .map_err(|e| pipeline_err(e.into()))
    }

    fn __repr__(&self) -> String {
        let c = &self.bundle.params.config;
        format!(
            "Model(width={}, layers={}+{}, heads={}, vocab_size={})",
            c.d_model, c.n_layers_enc, c.n_layers_dec, c.n_heads, c.vocab_size
        )
    }
}

/// Gradient-boosted regression trees.
#[pyclass(module = "elyte", frozen)]
struct Regressor {
    ensemble: GbtEnsemble,
}

#[pymethods]
impl Regressor {
    #[staticmethod]
    #[pyo3(signature = (
        x, y, n_trees = 100, max_depth = 3, learning_rate = 0.1, min_samples_leaf = 1,
        l2_leaf_penalty = 1.0, subsample_fraction = 1.0, seed = 0
    ))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        py: Python<'_>,
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        n_trees: usize,
        max_depth: usize,
        learning_rate: f64,
        min_samples_leaf: usize,
        l2_leaf_penalty: f64,
        subsample_fraction: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let hp = GbtHyperparams {
            n_trees,
            max_depth,
            learning_rate,
            min_samples_leaf,
            l2_leaf_penalty,
            subsample_fraction,
            seed,
        };
        let ensemble = py.detach(|| gbt::fit(&x, &y, &hp)).map_err(value_err)?;
        Ok(Regressor { ensemble })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ensemble = GbtEnsemble::load(&path).map_err(value_err)?;
        Ok(Regressor { ensemble })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let ensemble = GbtEnsemble::from_json(text).map_err(value_err)?;
        Ok(Regressor { ensemble })
    }

    fn to_json(&self) -> PyResult<String> {
        self.ensemble.to_json().map_err(value_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.ensemble.save(&path).map_err(value_err)
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.ensemble.n_features
    }

    #[getter]
    fn n_trees(&self) -> usize {
        self.ensemble.trees.len()
    }

    fn predict(&self, x: Vec<f64>) -> PyResult<f64> {
        self.ensemble.predict(&x).map_err(value_err)
    }

    fn predict_many(&self, xs: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.ensemble.predict_many(&xs).map_err(value_err)
    }
}

/// Split, tune and fit on a labeled CSV; writes the run directory and returns the report.
#[pyfunction]
#[pyo3(signature = (model, dataset, out, split_seed, search_trials, search_seed, log10_target = false))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    model: PathBuf,
    dataset: PathBuf,
    out: PathBuf,
    split_seed: u64,
    search_trials: usize,
    search_seed: u64,
    log10_target: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let mut opts = TrainOptions {
        split_seed,
        log10_target,
        ..TrainOptions::default()
    };
    opts.search.trials = search_trials;
    opts.search.seed = search_seed;
    let report = py
        .detach(|| pipeline::run_train(&model, &dataset, &opts, &out))
        .map_err(pipeline_err)?;
    to_python(py, &report)
}

/// Predictions for every formulation of a CSV, also written to `out`.
#[pyfunction]
fn predict(
    py: Python<'_>,
    model: PathBuf,
    regressor: PathBuf,
    dataset: PathBuf,
    out: PathBuf,
) -> PyResult<Vec<(String, f64)>> {
    py.detach(|| pipeline::run_predict(&model, &regressor, &dataset, &out))
        .map_err(pipeline_err)
}

/// RMSE and parity pairs on a labeled CSV, also written to `out` as JSON.
#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    model: PathBuf,
    regressor: PathBuf,
    dataset: PathBuf,
    out: PathBuf,
) -> PyResult<Bound<'py, PyAny>> {
    let report = py
        .detach(|| pipeline::run_evaluate(&model, &regressor, &dataset, &out))
        .map_err(pipeline_err)?;
    to_python(py, &report)
}

#[pymodule]
fn elyte(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(smiles_to_selfies, m)?)?;
    m.add_function(wrap_pyfunction!(selfies_to_smiles, m)?)?;
    m.add_function(wrap_pyfunction!(split_indices, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_class::<Model>()?;
    m.add_class::<Regressor>()?;
    Ok(())
}

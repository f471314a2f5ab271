//! Python bindings: datasets, transforms, trend clustering and the model
//! pipeline. Reports come back as plain dicts and lists.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use trendcast_core::dataset::{self, Response, SyntheticSpec, ValidationMode};
use trendcast_core::features::{self, ModelKind};
use trendcast_core::pipeline::{self, FittedModel, Hyperparameters, SearchGrid};
use trendcast_core::{transforms, trend_clustering, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Numerical(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn parse_kind(kind: &str) -> PyResult<ModelKind> {
    ModelKind::parse(kind).map_err(py_err)
}

#[allow(clippy::too_many_arguments)]
fn hyperparameters(
    k: usize,
    gamma: f64,
    lambda: f64,
    rbf_c: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Hyperparameters {
    Hyperparameters {
        k,
        gamma,
        lambda,
        rbf_c,
        seed,
        max_iter,
        tol,
    }
}

/// Pages with first-hour series, metadata and optional 48-hour targets.
#[pyclass(frozen)]
struct Dataset {
    inner: dataset::Dataset,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    #[pyo3(signature = (path, lenient = false))]
    fn from_csv(path: PathBuf, lenient: bool) -> PyResult<Self> {
        let mode = if lenient {
            ValidationMode::Lenient
        } else {
            ValidationMode::Strict
        };
        let file = File::open(&path).map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
        let inner = dataset::parse_csv(BufReader::new(file), mode).map_err(py_err)?;
        Ok(Dataset { inner })
    }

    fn to_csv(&self, path: PathBuf) -> PyResult<()> {
        let file = File::create(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        dataset::write_csv(&self.inner, BufWriter::new(file)).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn page_ids(&self) -> Vec<String> {
        self.inner.pages().iter().map(|p| p.page_id.clone()).collect()
    }

    fn hosts(&self) -> Vec<String> {
        self.inner.hosts().to_vec()
    }

    /// Cumulative visit series, one list per page.
    fn visits(&self) -> Vec<Vec<f64>> {
        self.inner
            .pages()
            .iter()
            .map(|p| p.visits.values().to_vec())
            .collect()
    }

    fn targets(&self, response: &str) -> PyResult<Vec<f64>> {
        let r = Response::parse(response).map_err(py_err)?;
        self.inner.targets(r).map_err(py_err)
    }

    /// Host-stratified train/test split.
    fn split(&self, test_fraction: f64, seed: u64) -> PyResult<(Dataset, Dataset)> {
        let (a, b) = dataset::holdout_split(&self.inner, test_fraction, seed).map_err(py_err)?;
        Ok((Dataset { inner: a }, Dataset { inner: b }))
    }
}

/// Seeded synthetic dataset plus the true trend label of every page.
#[pyfunction]
#[pyo3(signature = (seed = 0, hosts = 4, pages_per_host = 100, noise = 0.0, target_noise = 0.0, offsets = None))]
fn synthesize(
    seed: u64,
    hosts: usize,
    pages_per_host: usize,
    noise: f64,
    target_noise: f64,
    offsets: Option<Vec<f64>>,
) -> PyResult<(Dataset, Vec<usize>)> {
    let base = SyntheticSpec::default();
    let spec = SyntheticSpec {
        n_hosts: hosts,
        pages_per_host,
        noise,
        target_noise,
        trend_offsets: offsets.unwrap_or(base.trend_offsets.clone()),
        seed,
        ..base
    };
    let data = dataset::generate_synthetic(&spec).map_err(py_err)?;
    Ok((Dataset { inner: data.dataset }, data.labels))
}

#[pyfunction]
fn to_delta(cumulative: Vec<f64>) -> Vec<f64> {
    transforms::to_delta(&cumulative)
}

#[pyfunction]
fn znorm(series: Vec<f64>) -> Vec<f64> {
    transforms::znorm(&series)
}

/// Returns `(distance, alpha, q)`.
#[pyfunction]
fn ksc_distance(t: Vec<f64>, o: Vec<f64>) -> PyResult<(f64, f64, isize)> {
    let a = trend_clustering::ksc_distance(&t, &o).map_err(py_err)?;
    Ok((a.distance, a.alpha, a.q))
}

#[pyfunction]
#[pyo3(signature = (kind, n_hosts, k = 50, rbf_c = 10))]
fn feature_count(kind: &str, n_hosts: usize, k: usize, rbf_c: usize) -> PyResult<usize> {
    Ok(features::feature_count(parse_kind(kind)?, n_hosts, k, rbf_c))
}

/// Clusters raw delta series; returns a dict with labels, distances,
/// centroids and the per-iteration objective.
#[pyfunction]
#[pyo3(signature = (rows, k, algorithm = "kmeans", seed = 0, max_iter = 100, tol = 1e-8))]
fn cluster(
    py: Python<'_>,
    rows: Vec<Vec<f64>>,
    k: usize,
    algorithm: &str,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> PyResult<Py<PyAny>> {
    let alg = trend_clustering::ClusterAlgorithm::parse(algorithm).map_err(py_err)?;
    let config = trend_clustering::ClusterConfig {
        max_iter,
        tol,
        ..trend_clustering::ClusterConfig::new(alg, k, seed)
    };
    let fit = py
        .detach(|| trend_clustering::fit(&rows, &config))
        .map_err(py_err)?;
    let out = serde_json::json!({
        "labels": fit.labels,
        "distances": fit.distances,
        "centroids": fit.model.centroids,
        "objective_history": fit.model.objective_history,
        "converged": fit.model.converged,
    });
    json_to_py(py, &out)
}

#[pyfunction]
fn adjusted_rand_index(a: Vec<usize>, b: Vec<usize>) -> f64 {
    trend_clustering::adjusted_rand_index(&a, &b)
}

/// Fitted model: one regression per response plus its feature plan.
#[pyclass(frozen)]
struct Model {
    inner: FittedModel,
}

#[pymethods]
impl Model {
    #[staticmethod]
    #[pyo3(signature = (data, kind, k = 50, gamma = 1.0, lambda_ = 0.0, rbf_c = 10, seed = 0, max_iter = 100, tol = 1e-8))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        data: &Dataset,
        kind: &str,
        k: usize,
        gamma: f64,
        lambda_: f64,
        rbf_c: usize,
        seed: u64,
        max_iter: usize,
        tol: f64,
    ) -> PyResult<Self> {
        let kind = parse_kind(kind)?;
        let hp = hyperparameters(k, gamma, lambda_, rbf_c, seed, max_iter, tol);
        let inner = py
            .detach(|| pipeline::train(&data.inner, kind, &hp))
            .map_err(py_err)?;
        Ok(Model { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            inner: pipeline::load_model(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        pipeline::save_model(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.name()
    }

    fn coefficients(&self, response: &str) -> PyResult<Vec<f64>> {
        let r = Response::parse(response).map_err(py_err)?;
        let m = self
            .inner
            .response(r)
            .ok_or_else(|| PyValueError::new_err("response missing from model"))?;
        Ok(m.fit.coefficients.clone())
    }

    fn column_names(&self, response: &str) -> PyResult<Vec<String>> {
        let r = Response::parse(response).map_err(py_err)?;
        let m = self
            .inner
            .response(r)
            .ok_or_else(|| PyValueError::new_err("response missing from model"))?;
        Ok(m.columns.iter().map(|c| c.name.clone()).collect())
    }

    /// List of dicts keyed like the prediction CSV columns.
    fn predict(&self, py: Python<'_>, data: &Dataset) -> PyResult<Py<PyAny>> {
        let rows = py
            .detach(|| pipeline::predict(&self.inner, &data.inner))
            .map_err(py_err)?;
        let out: Vec<serde_json::Value> = rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "page_id": r.page_id,
                    "visits_log": r.visits_log,
                    "visits": r.visits,
                    "likes_log": r.likes_log,
                    "likes": r.likes,
                    "mentions_log": r.mentions_log,
                    "mentions": r.mentions,
                })
            })
            .collect();
        json_to_py(py, &out)
    }
}

/// In-sample, LOOCV and GCV log-RMSE plus AIC/BIC per response.
#[pyfunction]
#[pyo3(signature = (data, kind, k = 50, gamma = 1.0, lambda_ = 0.0, rbf_c = 10, seed = 0, max_iter = 100, tol = 1e-8))]
#[allow(clippy::too_many_arguments)]
fn evaluate(
    py: Python<'_>,
    data: &Dataset,
    kind: &str,
    k: usize,
    gamma: f64,
    lambda_: f64,
    rbf_c: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> PyResult<Py<PyAny>> {
    let kind = parse_kind(kind)?;
    let hp = hyperparameters(k, gamma, lambda_, rbf_c, seed, max_iter, tol);
    let report = py
        .detach(|| pipeline::evaluate(&data.inner, kind, &hp))
        .map_err(py_err)?;
    json_to_py(py, &report)
}

/// Grid search by LOOCV RMSE; unspecified grids use the defaults.
#[pyfunction]
#[pyo3(signature = (data, kind, k_grid = None, gamma_grid = None, lambda_grid = None, rbf_c_grid = None, response = "visits", seed = 0))]
#[allow(clippy::too_many_arguments)]
fn grid_search(
    py: Python<'_>,
    data: &Dataset,
    kind: &str,
    k_grid: Option<Vec<usize>>,
    gamma_grid: Option<Vec<f64>>,
    lambda_grid: Option<Vec<f64>>,
    rbf_c_grid: Option<Vec<usize>>,
    response: &str,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let kind = parse_kind(kind)?;
    let base = Hyperparameters {
        seed,
        ..Hyperparameters::default()
    };
    let mut grid = SearchGrid::defaults(kind, base);
    grid.selection = Response::parse(response).map_err(py_err)?;
    if let Some(v) = k_grid {
        grid.k = v;
    }
    if let Some(v) = gamma_grid {
        grid.gamma = v;
    }
    if let Some(v) = lambda_grid {
        grid.lambda = v;
    }
    if let Some(v) = rbf_c_grid {
        grid.rbf_c = v;
    }
    let result = py
        .detach(|| pipeline::grid_search(&data.inner, kind, &grid))
        .map_err(py_err)?;
    json_to_py(py, &result)
}

#[pyfunction]
fn characterize(py: Python<'_>, data: &Dataset) -> PyResult<Py<PyAny>> {
    let c = pipeline::characterize(&data.inner).map_err(py_err)?;
    json_to_py(py, &c)
}

#[pymodule]
fn trendcast(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(to_delta, m)?)?;
    m.add_function(wrap_pyfunction!(znorm, m)?)?;
    m.add_function(wrap_pyfunction!(ksc_distance, m)?)?;
    m.add_function(wrap_pyfunction!(feature_count, m)?)?;
    m.add_function(wrap_pyfunction!(cluster, m)?)?;
    m.add_function(wrap_pyfunction!(adjusted_rand_index, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(grid_search, m)?)?;
    m.add_function(wrap_pyfunction!(characterize, m)?)?;
    Ok(())
}

//! Python bindings for the semiblind channel-estimation library.
//!
//! Conventions at the boundary: observation/channel matrices travel as lists
//! of length-M complex vectors (one vector per snapshot/sample/user), square
//! matrices (covariances, projectors) as row-major lists of lists.

// the pymethods macro expansion trips this lint on every PyResult
#![allow(clippy::useless_conversion)]

use num_complex::Complex64;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use semiblind::cli::{cmd_fit, cmd_generate, ExperimentConfig};
use semiblind::estimators::{
    build_gmm_filters, run_estimator, EstimatorInput, EstimatorKind, EstimatorResources,
};
use semiblind::gmm;
use semiblind::linalg::{stream_rng, CMatrix, CVector};
use semiblind::scenarios;
use semiblind::simulator;
use semiblind::subspace;
use semiblind::Error;

fn py_err(e: Error) -> PyErr {
    match &e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::Numerical(_) | Error::InvalidState(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn vector_from_py(v: Vec<Complex64>) -> CVector {
    CVector::from_vec(v)
}

fn vector_to_py(v: &CVector) -> Vec<Complex64> {
    v.iter().copied().collect()
}

/// Columns-of-vectors to an M x N matrix.
fn matrix_from_columns(columns: Vec<Vec<Complex64>>) -> PyResult<CMatrix> {
    if columns.is_empty() {
        return Err(PyValueError::new_err("expected at least one vector"));
    }
    let m = columns[0].len();
    if m == 0 || columns.iter().any(|c| c.len() != m) {
        return Err(PyValueError::new_err("all vectors must share one nonzero length"));
    }
    let mut out = CMatrix::zeros(m, columns.len());
    for (j, col) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

fn matrix_to_columns(m: &CMatrix) -> Vec<Vec<Complex64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

/// Row-major lists to a square matrix.
fn matrix_from_rows(rows: Vec<Vec<Complex64>>) -> PyResult<CMatrix> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("expected a square row-major matrix"));
    }
    let mut out = CMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

fn matrix_to_rows(m: &CMatrix) -> Vec<Vec<Complex64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

#[pyclass(name = "ArrayGeometry")]
#[derive(Clone)]
struct PyArrayGeometry {
    inner: scenarios::ArrayGeometry,
}

#[pymethods]
impl PyArrayGeometry {
    #[new]
    #[pyo3(signature = (vertical_count=4, horizontal_count=16, vertical_spacing=1.0, horizontal_spacing=0.5))]
    fn new(
        vertical_count: usize,
        horizontal_count: usize,
        vertical_spacing: f64,
        horizontal_spacing: f64,
    ) -> PyResult<Self> {
        let inner = scenarios::ArrayGeometry {
            vertical_count,
            horizontal_count,
            vertical_spacing,
            horizontal_spacing,
        };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn antenna_count(&self) -> usize {
        self.inner.antenna_count()
    }

    fn __repr__(&self) -> String {
        format!(
            "ArrayGeometry({}x{}, spacing {}x{})",
            self.inner.vertical_count,
            self.inner.horizontal_count,
            self.inner.vertical_spacing,
            self.inner.horizontal_spacing
        )
    }
}

#[pyclass(name = "ClusterScenario")]
#[derive(Clone)]
struct PyClusterScenario {
    inner: scenarios::ClusterScenario,
}

#[pymethods]
impl PyClusterScenario {
    #[new]
    #[pyo3(signature = (
        cluster_count=(1, 3),
        paths_per_cluster=20,
        angular_spread_deg=5.0,
        azimuth_range_deg=(-60.0, 60.0),
        elevation_range_deg=(-15.0, 15.0),
        gain_decay_db=None,
    ))]
    fn new(
        cluster_count: (usize, usize),
        paths_per_cluster: usize,
        angular_spread_deg: f64,
        azimuth_range_deg: (f64, f64),
        elevation_range_deg: (f64, f64),
        gain_decay_db: Option<f64>,
    ) -> PyResult<Self> {
        let gain_profile = match gain_decay_db {
            None => scenarios::GainProfile::Equal,
            Some(decay_db) => scenarios::GainProfile::Exponential { decay_db },
        };
        let inner = scenarios::ClusterScenario {
            cluster_count,
            paths_per_cluster,
            angular_spread_deg,
            azimuth_range_deg,
            elevation_range_deg,
            gain_profile,
        };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }
}

#[pyclass(name = "ChannelDataset")]
struct PyChannelDataset {
    inner: scenarios::ChannelDataset,
}

#[pymethods]
impl PyChannelDataset {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: scenarios::read_dataset(path).map_err(py_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        scenarios::write_dataset(&self.inner, path).map_err(py_err)
    }

    fn export_csv(&self, path: &str) -> PyResult<()> {
        scenarios::export_dataset_csv(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn antennas(&self) -> usize {
        self.inner.antennas()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn mean_power(&self) -> f64 {
        self.inner.mean_power()
    }

    fn sample(&self, index: usize) -> PyResult<Vec<Complex64>> {
        if index >= self.inner.len() {
            return Err(PyValueError::new_err(format!(
                "sample index {index} out of range ({} samples)",
                self.inner.len()
            )));
        }
        Ok(vector_to_py(self.inner.sample(index)))
    }

    /// Training sample covariance (1/T) sum h h^H as row-major lists.
    fn sample_covariance(&self) -> PyResult<Vec<Vec<Complex64>>> {
        let cov = subspace::sample_covariance(&self.inner.as_matrix()).map_err(py_err)?;
        Ok(matrix_to_rows(&cov))
    }
}

#[pyclass(name = "Gmm")]
struct PyGmm {
    inner: gmm::GmmModel,
}

#[pymethods]
impl PyGmm {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: gmm::GmmModel::load(path).map_err(py_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    #[getter]
    fn component_count(&self) -> usize {
        self.inner.component_count()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    fn mean(&self, k: usize) -> PyResult<Vec<Complex64>> {
        self.check_component(k)?;
        Ok(vector_to_py(self.inner.mean(k)))
    }

    fn covariance(&self, k: usize) -> PyResult<Vec<Vec<Complex64>>> {
        self.check_component(k)?;
        Ok(matrix_to_rows(self.inner.covariance(k)))
    }

    #[pyo3(signature = (point, noise_variance=None))]
    fn log_mixture_density(
        &self,
        point: Vec<Complex64>,
        noise_variance: Option<f64>,
    ) -> PyResult<f64> {
        let x = vector_from_py(point);
        let noise = noise_variance.map(|s| {
            CMatrix::identity(self.inner.dim(), self.inner.dim()) * Complex64::new(s, 0.0)
        });
        self.inner.log_mixture_density(&x, noise.as_ref()).map_err(py_err)
    }
}

impl PyGmm {
    fn check_component(&self, k: usize) -> PyResult<()> {
        if k >= self.inner.component_count() {
            return Err(PyValueError::new_err(format!(
                "component {k} out of range ({} components)",
                self.inner.component_count()
            )));
        }
        Ok(())
    }
}

#[pyclass(name = "Subspace")]
struct PySubspace {
    inner: subspace::SubspaceBasis,
}

#[pymethods]
impl PySubspace {
    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    #[getter]
    fn antenna_count(&self) -> usize {
        self.inner.antenna_count()
    }

    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues().to_vec()
    }

    fn basis_columns(&self) -> Vec<Vec<Complex64>> {
        matrix_to_columns(self.inner.basis())
    }

    fn projector(&self) -> Vec<Vec<Complex64>> {
        matrix_to_rows(&self.inner.projector())
    }

    fn project(&self, vector: Vec<Complex64>) -> PyResult<Vec<Complex64>> {
        if vector.len() != self.inner.antenna_count() {
            return Err(PyValueError::new_err("vector length must match the antenna count"));
        }
        let v = self.inner.basis();
        let projected = v * (v.adjoint() * vector_from_py(vector));
        Ok(vector_to_py(&projected))
    }
}

#[pyclass(name = "Block")]
struct PyBlock {
    inner: simulator::ScenarioRealization,
}

#[pymethods]
impl PyBlock {
    #[getter]
    fn noise_variance(&self) -> f64 {
        self.inner.noise_variance
    }

    fn true_channels(&self) -> Vec<Vec<Complex64>> {
        matrix_to_columns(&self.inner.true_channels)
    }

    fn pilot_observations(&self) -> Vec<Vec<Complex64>> {
        matrix_to_columns(&self.inner.pilot_observations)
    }

    fn data_observations(&self) -> Vec<Vec<Complex64>> {
        matrix_to_columns(&self.inner.data_observations)
    }
}

/// URA steering vector for (azimuth, elevation) in radians.
#[pyfunction]
fn steering_vector(
    geometry: &PyArrayGeometry,
    azimuth: f64,
    elevation: f64,
) -> Vec<Complex64> {
    vector_to_py(&scenarios::steering_vector(&geometry.inner, azimuth, elevation))
}

/// Generate a channel dataset; `normalization` defaults to the antenna count.
#[pyfunction]
#[pyo3(signature = (scenario, geometry, count, normalization=None, seed=0))]
fn generate_dataset(
    py: Python<'_>,
    scenario: &PyClusterScenario,
    geometry: &PyArrayGeometry,
    count: usize,
    normalization: Option<f64>,
    seed: u64,
) -> PyResult<PyChannelDataset> {
    let normalization = normalization.unwrap_or(geometry.inner.antenna_count() as f64);
    let inner = py
        .allow_threads(|| {
            scenarios::generate_dataset(&scenario.inner, &geometry.inner, count, normalization, seed)
        })
        .map_err(py_err)?;
    Ok(PyChannelDataset { inner })
}

/// Fit a complex Gaussian mixture with EM; returns the model and the
/// per-iteration log-likelihoods.
#[pyfunction]
#[pyo3(signature = (dataset, components, max_iterations=300, rel_tolerance=1e-6,
                    covariance_floor=1e-6, init="kmeans_plus_plus", seed=0))]
#[allow(clippy::too_many_arguments)]
fn fit_gmm(
    py: Python<'_>,
    dataset: &PyChannelDataset,
    components: usize,
    max_iterations: usize,
    rel_tolerance: f64,
    covariance_floor: f64,
    init: &str,
    seed: u64,
) -> PyResult<(PyGmm, Vec<f64>)> {
    let init_strategy = match init {
        "kmeans_plus_plus" => gmm::InitStrategy::KMeansPlusPlus,
        "random_responsibility" => gmm::InitStrategy::RandomResponsibility,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown init '{other}' (expected kmeans_plus_plus or random_responsibility)"
            )))
        }
    };
    let config = gmm::EmConfig {
        component_count: components,
        max_iterations,
        rel_tolerance,
        covariance_floor,
        init_strategy,
        seed,
    };
    let (model, report) =
        py.allow_threads(|| gmm::fit(&dataset.inner, &config)).map_err(py_err)?;
    Ok((PyGmm { inner: model }, report.log_likelihoods))
}

/// Simulate one coherence block for channels given as a list of per-user
/// length-M vectors.
#[pyfunction]
#[pyo3(signature = (channels, snapshots, snr_db, pilot_type="identity", seed=0))]
fn simulate_block(
    channels: Vec<Vec<Complex64>>,
    snapshots: usize,
    snr_db: f64,
    pilot_type: &str,
    seed: u64,
) -> PyResult<PyBlock> {
    let h = matrix_from_columns(channels)?;
    let pilot_type = match pilot_type {
        "identity" => simulator::PilotType::Identity,
        "dft" => simulator::PilotType::Dft,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown pilot type '{other}' (expected identity or dft)"
            )))
        }
    };
    let config = simulator::SystemConfig {
        antennas: h.nrows(),
        users: h.ncols(),
        snapshots,
        snr_db,
        symbol_powers: None,
        pilot_type,
    };
    let mut rng = stream_rng(seed, 0);
    let inner = simulator::simulate_block(&config, &h, &mut rng).map_err(py_err)?;
    Ok(PyBlock { inner })
}

/// Blind ML subspace estimate from pilot/data observations (lists of
/// length-M snapshot vectors).
#[pyfunction]
#[pyo3(signature = (pilot_observations, data_observations, users, include_pilots=false))]
fn estimate_subspace(
    pilot_observations: Vec<Vec<Complex64>>,
    data_observations: Vec<Vec<Complex64>>,
    users: usize,
    include_pilots: bool,
) -> PyResult<PySubspace> {
    let pilots = matrix_from_columns(pilot_observations)?;
    let data = matrix_from_columns(data_observations)?;
    let inner =
        subspace::estimate_subspace(&pilots, &data, users, include_pilots).map_err(py_err)?;
    Ok(PySubspace { inner })
}

/// Run one estimator from the registry (ls, ml, scov, sub_scov, proj_scov,
/// gmm, sub_gmm, proj_gmm) on a single pilot observation.
#[pyfunction]
#[pyo3(signature = (name, pilot_observation, noise_variance, users,
                    sample_covariance=None, model=None, subspace=None))]
fn estimate(
    name: &str,
    pilot_observation: Vec<Complex64>,
    noise_variance: f64,
    users: usize,
    sample_covariance: Option<Vec<Vec<Complex64>>>,
    model: Option<&PyGmm>,
    subspace: Option<&PySubspace>,
) -> PyResult<(Vec<Complex64>, Option<Vec<f64>>)> {
    let kind = EstimatorKind::from_name(name).map_err(py_err)?;
    let y = vector_from_py(pilot_observation);
    let m = y.len();

    let scov = match sample_covariance {
        Some(rows) => matrix_from_rows(rows)?,
        None => CMatrix::identity(m, m),
    };
    let needs_model = matches!(
        kind,
        EstimatorKind::Gmm | EstimatorKind::SubGmm | EstimatorKind::ProjGmm
    );
    let fallback_model;
    let model_ref = match model {
        Some(g) => &g.inner,
        None => {
            if needs_model {
                return Err(PyValueError::new_err(format!("estimator {name} needs a model")));
            }
            fallback_model = gmm::GmmModel::new(
                vec![1.0],
                vec![CVector::zeros(m)],
                vec![CMatrix::identity(m, m)],
            )
            .map_err(py_err)?;
            &fallback_model
        }
    };
    let filters = build_gmm_filters(model_ref, noise_variance).map_err(py_err)?;
    let projected_filters =
        build_gmm_filters(model_ref, noise_variance * users as f64 / m as f64).map_err(py_err)?;
    let resources = EstimatorResources {
        sample_covariance: &scov,
        model: model_ref,
        filters: &filters,
        projected_filters: &projected_filters,
    };
    let input = EstimatorInput {
        pilot_observation: &y,
        noise_variance,
        subspace: subspace.map(|s| &s.inner),
        user_count: users,
    };
    let out = run_estimator(kind, &input, &resources).map_err(py_err)?;
    Ok((vector_to_py(&out.estimate), out.responsibilities))
}

/// NMSE between equally long lists of truth/estimate vectors.
#[pyfunction]
fn nmse(truths: Vec<Vec<Complex64>>, estimates: Vec<Vec<Complex64>>) -> PyResult<f64> {
    if truths.is_empty() {
        return Err(PyValueError::new_err("NMSE needs at least one pair"));
    }
    let antennas = truths[0].len();
    let t: Vec<CVector> = truths.into_iter().map(vector_from_py).collect();
    let e: Vec<CVector> = estimates.into_iter().map(vector_from_py).collect();
    simulator::nmse(&t, &e, antennas).map_err(py_err)
}

/// Generate the train/test datasets described by a TOML experiment config;
/// returns (train_path, test_path).
#[pyfunction]
fn generate_from_config(py: Python<'_>, config_toml: &str) -> PyResult<(String, String)> {
    let config = ExperimentConfig::from_toml_str(config_toml).map_err(py_err)?;
    let summary = py.allow_threads(|| cmd_generate(&config)).map_err(py_err)?;
    Ok((
        summary.train_path.display().to_string(),
        summary.test_path.display().to_string(),
    ))
}

/// Fit the mixture described by a TOML experiment config; returns the model
/// path.
#[pyfunction]
fn fit_from_config(py: Python<'_>, config_toml: &str) -> PyResult<String> {
    let config = ExperimentConfig::from_toml_str(config_toml).map_err(py_err)?;
    let summary = py.allow_threads(|| cmd_fit(&config)).map_err(py_err)?;
    Ok(summary.model_path.display().to_string())
}

/// Run the sweep described by a TOML experiment config and return the results
/// CSV as text. Dataset and model files must exist at the configured paths.
#[pyfunction]
fn run_sweep_csv(py: Python<'_>, config_toml: &str) -> PyResult<String> {
    let config = ExperimentConfig::from_toml_str(config_toml).map_err(py_err)?;
    let result = py
        .allow_threads(|| semiblind::cli::run_sweep_from_config(&config))
        .map_err(py_err)?;
    Ok(result.to_csv())
}

#[pymodule]
fn semiblind_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyArrayGeometry>()?;
    m.add_class::<PyClusterScenario>()?;
    m.add_class::<PyChannelDataset>()?;
    m.add_class::<PyGmm>()?;
    m.add_class::<PySubspace>()?;
    m.add_class::<PyBlock>()?;
    m.add_function(wrap_pyfunction!(steering_vector, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(fit_gmm, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_block, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_subspace, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(nmse, m)?)?;
    m.add_function(wrap_pyfunction!(generate_from_config, m)?)?;
    m.add_function(wrap_pyfunction!(fit_from_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep_csv, m)?)?;
    Ok(())
}

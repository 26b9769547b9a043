//! Python bindings: simulate, fit, replicate and check from Python.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use jmcheck_core::data::{load_joint_dataset, split_folds, JointDataset};
use jmcheck_core::draws::PosteriorDraws;
use jmcheck_core::fitter::{fit_joint_model, McmcConfig, PriorConfig};
use jmcheck_core::gof::{run_check, CheckOptions, Statistic};
use jmcheck_core::model::ModelSpec;
use jmcheck_core::replicate::{
    replicate_cross_validated, replicate_dynamic, replicate_posterior_posterior, replicate_posterior_prior,
    replication_mh_config, Regime, ReplicatedData,
};
use jmcheck_core::scenario::{analysis_model_spec, generate_scenario_dataset, AnalysisModelKind, ScenarioConfig};
use jmcheck_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Data(_) | Error::Domain(_) | Error::Json(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn scenario(config_json: Option<&str>) -> PyResult<ScenarioConfig> {
    config_json.map_or_else(|| Ok(ScenarioConfig::default()), |t| ScenarioConfig::from_json(t).map_err(to_py))
}

/// A joint longitudinal and survival dataset.
#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    inner: JointDataset,
}

#[pymethods]
impl PyDataset {
    /// Simulates from the scenario model (`config_json` overrides its fields).
    #[staticmethod]
    #[pyo3(signature = (seed, config_json = None))]
    fn simulate(seed: u64, config_json: Option<&str>) -> PyResult<Self> {
        let cfg = scenario(config_json)?;
        Ok(PyDataset {
            inner: generate_scenario_dataset(&cfg, seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_csv(longitudinal: PathBuf, survival: PathBuf) -> PyResult<Self> {
        Ok(PyDataset {
            inner: load_joint_dataset(&longitudinal, &survival).map_err(to_py)?,
        })
    }

    fn to_csv(&self, longitudinal: PathBuf, survival: PathBuf) -> PyResult<()> {
        self.inner.write_csv(&longitudinal, &survival).map_err(to_py)
    }

    #[getter]
    fn n_subjects(&self) -> usize {
        self.inner.n_subjects()
    }

    #[getter]
    fn n_measurements(&self) -> usize {
        self.inner.n_measurements()
    }

    #[getter]
    fn n_events(&self) -> usize {
        self.inner.n_events()
    }

    #[getter]
    fn covariate_names(&self) -> Vec<String> {
        self.inner.covariate_names().to_vec()
    }

    /// The subject at `index` as a dict.
    fn subject<'py>(&self, py: Python<'py>, index: usize) -> PyResult<Bound<'py, PyDict>> {
        let s = self
            .inner
            .subjects()
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("subject index {index} out of range")))?;
        let d = PyDict::new(py);
        d.set_item("id", &s.id)?;
        d.set_item("times", &s.times)?;
        d.set_item("values", &s.values)?;
        d.set_item("event_time", s.event_time)?;
        d.set_item("event", s.event)?;
        d.set_item("covariates", &s.covariates)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n_subjects={}, n_measurements={}, n_events={})",
            self.inner.n_subjects(),
            self.inner.n_measurements(),
            self.inner.n_events()
        )
    }
}

/// A model specification with its posterior sample.
#[pyclass(name = "Fit", frozen)]
struct PyFit {
    model: String,
    spec: ModelSpec,
    draws: PosteriorDraws,
    priors: PriorConfig,
    mcmc: McmcConfig,
}

#[pymethods]
impl PyFit {
    #[getter]
    fn model(&self) -> &str {
        &self.model
    }

    #[getter]
    fn n_draws(&self) -> usize {
        self.draws.n_draws()
    }

    #[getter]
    fn has_random_effects(&self) -> bool {
        self.draws.random_effects.is_some()
    }

    /// Draws of one parameter: `sigma`, `tau`, or `beta`/`gamma`/`alpha`/`gamma_h0` with an index.
    #[pyo3(signature = (name, index = 0))]
    fn parameter(&self, name: &str, index: usize) -> PyResult<Vec<f64>> {
        let pick = |v: &[f64]| v.get(index).copied();
        self.draws
            .draws
            .iter()
            .map(|d| {
                match name {
                    "sigma" => Some(d.sigma),
                    "tau" => d.tau,
                    "beta" => pick(&d.beta),
                    "gamma" => pick(&d.gamma),
                    "alpha" => pick(&d.alpha),
                    "gamma_h0" => pick(&d.gamma_h0),
                    _ => None,
                }
                .ok_or_else(|| PyValueError::new_err(format!("no parameter {name}[{index}]")))
            })
            .collect()
    }

    fn write_draws(&self, path: PathBuf) -> PyResult<()> {
        self.draws.write_csv(&path).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Fit(model={:?}, n_draws={})", self.model, self.draws.n_draws())
    }
}

/// Fits one of `true_model`, `linear_trend`, `exp_outcome`, `slope_form`.
#[pyfunction]
#[pyo3(signature = (dataset, model = "true_model", n_iter = 2000, burn_in = 1000, thin = 10, seed = 1, config_json = None))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    dataset: &PyDataset,
    model: &str,
    n_iter: usize,
    burn_in: usize,
    thin: usize,
    seed: u64,
    config_json: Option<&str>,
) -> PyResult<PyFit> {
    let kind: AnalysisModelKind = model.parse().map_err(to_py)?;
    let cfg = scenario(config_json)?;
    let spec = analysis_model_spec(kind, &cfg, &dataset.inner).map_err(to_py)?;
    let mcmc = McmcConfig {
        n_iter,
        burn_in,
        thin,
        seed,
        survival: true,
    };
    let priors = PriorConfig::default();
    let data = &dataset.inner;
    let draws = py
        .detach(|| fit_joint_model(data, &spec, &priors, &mcmc))
        .map_err(to_py)?;
    Ok(PyFit {
        model: kind.name().to_string(),
        spec,
        draws,
        priors,
        mcmc,
    })
}

/// The generating model with its true parameters as a single draw.
#[pyfunction]
#[pyo3(signature = (config_json = None))]
fn oracle_fit(config_json: Option<&str>) -> PyResult<PyFit> {
    let cfg = scenario(config_json)?;
    Ok(PyFit {
        model: "oracle".into(),
        spec: cfg.generating_spec(),
        draws: PosteriorDraws::single(cfg.true_draw()),
        priors: PriorConfig::default(),
        mcmc: McmcConfig::default(),
    })
}

/// Replicated datasets under one regime.
#[pyclass(name = "Replicated", frozen)]
struct PyReplicated {
    inner: ReplicatedData,
}

#[pymethods]
impl PyReplicated {
    #[getter]
    fn n_replicates(&self) -> usize {
        self.inner.n_replicates()
    }

    #[getter]
    fn regime(&self) -> String {
        self.inner.regime.to_string()
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon
    }

    /// Subjects in the observed counterpart (the risk set under a landmark).
    #[getter]
    fn n_subjects(&self) -> usize {
        self.inner.observed.subjects.len()
    }

    /// Replicated event times and indicators of replicate `index`.
    fn event_times(&self, index: usize) -> PyResult<(Vec<f64>, Vec<bool>)> {
        self.inner
            .replicates
            .get(index)
            .map(|r| r.data.event_times())
            .ok_or_else(|| PyValueError::new_err(format!("replicate index {index} out of range")))
    }

    fn write_dir(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_dir(&path).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Replicated(regime={:?}, n_replicates={})", self.regime(), self.n_replicates())
    }
}

/// Replicates under `pp`, `prior`, `dynamic:<t>`, `cv:<V>` or `cv:<V>:dynamic`.
#[pyfunction]
#[pyo3(signature = (dataset, fit, regime = "pp", m = 50, seed = 1))]
fn replicate(py: Python<'_>, dataset: &PyDataset, fit: &PyFit, regime: &str, m: usize, seed: u64) -> PyResult<PyReplicated> {
    let regime: Regime = regime.parse().map_err(to_py)?;
    let data = &dataset.inner;
    let mh = replication_mh_config();
    let inner = py
        .detach(|| match regime {
            Regime::PosteriorPosterior => replicate_posterior_posterior(data, &fit.spec, &fit.draws, m, seed),
            Regime::PosteriorPrior => replicate_posterior_prior(data, &fit.spec, &fit.draws, m, seed),
            Regime::Dynamic { landmark } => replicate_dynamic(data, &fit.spec, &fit.draws, landmark, m, &mh, seed),
            Regime::CrossValidated { inner, folds } => {
                let assignment = split_folds(data, folds, seed)?;
                replicate_cross_validated(data, &fit.spec, &fit.priors, &fit.mcmc, &assignment, inner, m, &mh, seed)
            }
        })
        .map_err(to_py)?;
    Ok(PyReplicated { inner })
}

/// Runs one statistic and returns its curves and MISE as a dict.
#[pyfunction]
#[pyo3(signature = (replicated, statistic, span = None, kappa = None))]
fn check<'py>(
    py: Python<'py>,
    replicated: &PyReplicated,
    statistic: &str,
    span: Option<f64>,
    kappa: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let stat: Statistic = statistic.parse().map_err(to_py)?;
    let mut options = CheckOptions::default();
    if let Some(s) = span {
        options.loess.span = s;
    }
    options.concordance.kappa = kappa;
    let report = run_check(stat, &replicated.inner, &options).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("statistic", stat.name())?;
    d.set_item("regime", report.regime.clone())?;
    d.set_item("mise", report.mise)?;
    d.set_item("band_coverage", report.band_coverage)?;
    d.set_item("grid", &report.observed.grid)?;
    d.set_item("observed", &report.observed.values)?;
    let reps: Vec<&Vec<f64>> = report.replicates.iter().map(|c| &c.values).collect();
    d.set_item("replicates", reps)?;
    if let Some(b) = &report.observed_band {
        d.set_item("lower", &b.lower)?;
        d.set_item("upper", &b.upper)?;
    }
    Ok(d)
}

/// Names accepted by `check`.
#[pyfunction]
fn statistics() -> Vec<&'static str> {
    Statistic::ALL.iter().map(|s| s.name()).collect()
}

#[pymodule]
fn jmcheck(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyFit>()?;
    m.add_class::<PyReplicated>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_fit, m)?)?;
    m.add_function(wrap_pyfunction!(replicate, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    m.add_function(wrap_pyfunction!(statistics, m)?)?;
    Ok(())
}

//! Python bindings: problems, simulation, inference, scoring and the COVID-19
//! pipeline. Arrays cross the boundary as nested lists, one row per time.

use std::path::PathBuf;

use lfm_core::covid_ingest::{self, CovidOptions};
use lfm_core::filter_smoother::FilterMode;
use lfm_core::metrics::{self, ScoreReport};
use lfm_core::pipeline::{self, InferenceOptions, InferenceRun, PosteriorSummary};
use lfm_core::problems::{self, ProblemConfig};
use lfm_core::simulate::{self as sim, FileHeader, GroundTruth};
use lfm_core::Error;
use nalgebra::DVector;
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Argument(_) => PyValueError::new_err(e.to_string()),
        Error::Numerical { .. } | Error::Evaluation(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyIOError::new_err(e.to_string()),
    }
}

fn rows(v: &[DVector<f64>]) -> Vec<Vec<f64>> {
    v.iter().map(|r| r.iter().copied().collect()).collect()
}

fn mode(dense: bool) -> FilterMode {
    if dense {
        FilterMode::Dense
    } else {
        FilterMode::SquareRoot
    }
}

/// A problem configuration: vector field, priors, links, grid and
/// simulation settings.
#[pyclass(module = "lfm", skip_from_py_object)]
#[derive(Clone)]
struct Problem {
    inner: ProblemConfig,
}

#[pymethods]
impl Problem {
    /// `van-der-pol`, `lotka-volterra` or `sird`.
    #[new]
    fn new(name: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ProblemConfig::by_name(name).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: ProblemConfig = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    #[getter]
    fn state_names(&self) -> PyResult<Vec<String>> {
        Ok(self.inner.vector_field().map_err(py_err)?.state_names())
    }

    #[getter]
    fn latent_names(&self) -> PyResult<Vec<String>> {
        Ok(self.inner.vector_field().map_err(py_err)?.latent_names())
    }

    #[getter]
    fn grid(&self) -> Vec<f64> {
        self.inner.grid.points()
    }

    #[getter]
    fn ode_noise(&self) -> f64 {
        self.inner.ode_noise
    }

    fn __repr__(&self) -> String {
        format!("Problem('{}')", self.inner.name())
    }
}

/// Observations at increasing times with a diagonal noise covariance.
#[pyclass(module = "lfm", skip_from_py_object)]
#[derive(Clone)]
struct Dataset {
    inner: sim::Dataset,
}

#[pymethods]
impl Dataset {
    /// `values[k][j]` observes state coordinate `observed[j]` at `times[k]`.
    #[new]
    #[pyo3(signature = (times, values, observed, noise_var, columns=None))]
    fn new(
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
        observed: Vec<usize>,
        noise_var: Vec<f64>,
        columns: Option<Vec<String>>,
    ) -> PyResult<Self> {
        if times.len() != values.len() || values.iter().any(|v| v.len() != observed.len()) {
            return Err(PyValueError::new_err("need one row of len(observed) values per time"));
        }
        if noise_var.len() != observed.len() {
            return Err(PyValueError::new_err("need one noise variance per observed coordinate"));
        }
        let columns = columns.unwrap_or_else(|| observed.iter().map(|i| format!("x{i}")).collect());
        Ok(Self {
            inner: sim::Dataset {
                meta: sim::DatasetMeta {
                    source: "python".into(),
                    seed: 0,
                    config_hash: String::new(),
                    observed,
                    columns,
                    noise_var,
                    obs_stride: None,
                    grid: None,
                    population: None,
                    start_date: None,
                },
                times,
                values: values.into_iter().map(DVector::from_vec).collect(),
            },
        })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: sim::Dataset::read(&path).map_err(py_err)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write(&path).map_err(py_err)
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }

    #[getter]
    fn values(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.values)
    }

    #[getter]
    fn observed(&self) -> Vec<usize> {
        self.inner.meta.observed.clone()
    }

    #[getter]
    fn noise_var(&self) -> Vec<f64> {
        self.inner.meta.noise_var.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.meta.seed
    }

    fn __len__(&self) -> usize {
        self.inner.times.len()
    }
}

/// Ground-truth latent force and ODE solution on the grid.
#[pyclass(module = "lfm", skip_from_py_object)]
#[derive(Clone)]
struct Truth {
    inner: GroundTruth,
}

#[pymethods]
impl Truth {
    #[getter]
    fn grid(&self) -> Vec<f64> {
        self.inner.grid.clone()
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.x)
    }

    #[getter]
    fn u_native(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.u_native)
    }

    #[getter]
    fn u_linked(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.u_linked)
    }
}

/// Smoothed posterior summary plus the run report.
#[pyclass(module = "lfm", skip_from_py_object)]
#[derive(Clone)]
struct Posterior {
    summary: PosteriorSummary,
    report_json: String,
    config_hash: String,
    seed: u64,
}

impl Posterior {
    fn from_run(run: &InferenceRun) -> PyResult<Self> {
        Ok(Self {
            summary: run.summary.clone(),
            report_json: serde_json::to_string_pretty(&run.report).map_err(|e| PyValueError::new_err(e.to_string()))?,
            config_hash: run.report.config_hash.clone(),
            seed: run.report.seed,
        })
    }
}

#[pymethods]
impl Posterior {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.summary.times.clone()
    }

    #[getter]
    fn state_mean(&self) -> Vec<Vec<f64>> {
        rows(&self.summary.state_mean)
    }

    #[getter]
    fn state_std(&self) -> Vec<Vec<f64>> {
        rows(&self.summary.state_std)
    }

    #[getter]
    fn state_lo95(&self) -> Vec<Vec<f64>> {
        rows(&self.summary.state_lo)
    }

    #[getter]
    fn state_hi95(&self) -> Vec<Vec<f64>> {
        rows(&self.summary.state_hi)
    }

    /// Linked latent-force mean.
    #[getter]
    fn latent_mean(&self) -> Vec<Vec<f64>> {
        rows(&self.summary.latent_linked_mean)
    }

    #[getter]
    fn latent_std(&self) -> Vec<Vec<f64>> {
        rows(&self.summary.latent_linked_std)
    }

    #[getter]
    fn latent_native_mean(&self) -> Vec<Vec<f64>> {
        rows(&self.summary.latent_native_mean)
    }

    /// Run report as JSON text.
    #[getter]
    fn report(&self) -> String {
        self.report_json.clone()
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        let header = FileHeader {
            config_hash: self.config_hash.clone(),
            seed: self.seed,
        };
        self.summary.write_csv(&path, &header).map_err(py_err)
    }
}

/// RMSE and χ² calibration of a latent posterior.
#[pyclass(module = "lfm", get_all, skip_from_py_object)]
#[derive(Clone)]
struct Score {
    rmse_native: f64,
    rmse_linked: f64,
    chi2: f64,
    chi2_dof: usize,
    chi2_ci90: (f64, f64),
    chi2_in_ci90: bool,
}

impl From<ScoreReport> for Score {
    fn from(s: ScoreReport) -> Self {
        Self {
            rmse_native: s.rmse_native,
            rmse_linked: s.rmse_linked,
            chi2: s.chi2,
            chi2_dof: s.chi2_dof,
            chi2_ci90: s.chi2_ci90,
            chi2_in_ci90: s.chi2_in_ci90,
        }
    }
}

#[pymethods]
impl Score {
    fn __repr__(&self) -> String {
        format!(
            "Score(rmse_native={:.4}, chi2={:.4}, in_ci90={})",
            self.rmse_native, self.chi2, self.chi2_in_ci90
        )
    }
}

/// Draw ground truth and a noisy dataset; returns `(dataset, truth)`.
#[pyfunction]
fn simulate(problem: &Problem, seed: u64) -> PyResult<(Dataset, Truth)> {
    let s = sim::simulate(&problem.inner, seed).map_err(py_err)?;
    Ok((Dataset { inner: s.dataset }, Truth { inner: s.truth }))
}

/// One forward filtering and one backward smoothing pass.
#[pyfunction]
#[pyo3(signature = (problem, dataset, dense=false, ode_noise=None, t_end=None))]
fn infer(
    py: Python<'_>,
    problem: &Problem,
    dataset: &Dataset,
    dense: bool,
    ode_noise: Option<f64>,
    t_end: Option<f64>,
) -> PyResult<Posterior> {
    let opts = InferenceOptions {
        mode: mode(dense),
        ode_noise,
        data_noise: None,
        t_end,
    };
    let cfg = problem.inner.clone();
    let data = dataset.inner.clone();
    let run = py
        .detach(move || {
            let hash = sim::config_hash(&(&cfg, &opts))?;
            pipeline::run_inference(&cfg, &data, &opts, &hash)
        })
        .map_err(py_err)?;
    Posterior::from_run(&run)
}

#[pyfunction]
fn score(problem: &Problem, posterior: &Posterior, truth: &Truth) -> PyResult<Score> {
    pipeline::score_against_truth(&problem.inner, &posterior.summary, &truth.inner)
        .map(Score::from)
        .map_err(py_err)
}

/// 5% and 95% quantiles of χ² with `dof` degrees of freedom (1..=10).
#[pyfunction]
fn chi2_ci90(dof: usize) -> PyResult<(f64, f64)> {
    metrics::chi2_ci90(dof).map_err(py_err)
}

/// SIRD contact-rate inference on a JHU CSSE snapshot directory.
#[pyfunction]
#[pyo3(signature = (snapshot_dir, country="Germany", population=None, log_space=false, holdout=14, horizon=31))]
fn covid(
    py: Python<'_>,
    snapshot_dir: PathBuf,
    country: &str,
    population: Option<f64>,
    log_space: bool,
    holdout: usize,
    horizon: usize,
) -> PyResult<Posterior> {
    let population = match population {
        Some(p) => p,
        None if country == "Germany" => problems::GERMANY_POPULATION,
        None => return Err(PyValueError::new_err(format!("population is required for {country}"))),
    };
    let country = country.to_string();
    let run = py
        .detach(move || {
            let raw = covid_ingest::parse_jhu_csv(
                &snapshot_dir.join(covid_ingest::CONFIRMED_FILE),
                &snapshot_dir.join(covid_ingest::RECOVERED_FILE),
                &snapshot_dir.join(covid_ingest::DEATHS_FILE),
                &country,
            )?;
            let series = covid_ingest::to_sird(&raw, population)?;
            covid_ingest::run_covid(
                &series,
                &CovidOptions {
                    log_space,
                    holdout_days: holdout,
                    horizon_days: horizon,
                    inference: InferenceOptions::default(),
                },
            )
        })
        .map_err(py_err)?;
    Posterior::from_run(&run.run)
}

#[pymodule]
fn lfm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Problem>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<Truth>()?;
    m.add_class::<Posterior>()?;
    m.add_class::<Score>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(infer, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(chi2_ci90, m)?)?;
    m.add_function(wrap_pyfunction!(covid, m)?)?;
    m.add("PROBLEMS", problems::PROBLEM_NAMES.to_vec())?;
    Ok(())
}

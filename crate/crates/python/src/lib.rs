//! Python bindings for the consideration-set logit sampler.
//!
//! Categories are 1-based on the Python side, matching the CSV formats.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use dpcs::checks::run_oracle_checks;
use dpcs::config::Config;
use dpcs::io::{read_chain, read_dataset, write_chain, write_dataset};
use dpcs::oracle::mixture_cs_pmf;
use dpcs::sampler::{fit as run_fit, ChainStore, FitConfig, Variant};
use dpcs::simulate::{default_small_pmf, simulate_small as sim_small};
use dpcs::summaries::{cs_point_estimate, inclusion_probs, predictive_loglik, similarity_matrix};
use dpcs::{validate_dataset, Error, PanelDataset, SubjectRecord};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::Index(_) | Error::UnknownSubject(_) => PyIndexError::new_err(e.to_string()),
        Error::Numerical { .. } | Error::NotSpd(_) | Error::NoAdmissibleComponent(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn one_based(sets: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    sets.into_iter().map(|s| s.into_iter().map(|j| j + 1).collect()).collect()
}

/// Panel of categorical choices with alternative-specific covariates.
///
/// Each subject is a tuple `(id, responses, x, z)`. Responses are 1-based
/// category labels; `x` and `z` are flat lists laid out occasion-major, then
/// alternative, then covariate.
#[pyclass(name = "Dataset", module = "dpcs_py")]
pub struct PyDataset {
    pub inner: PanelDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (j, d_x, subjects, d_z=0, outside_option=false))]
    fn new(
        j: usize,
        d_x: usize,
        subjects: Vec<(u64, Vec<usize>, Vec<f64>, Vec<f64>)>,
        d_z: usize,
        outside_option: bool,
    ) -> PyResult<Self> {
        let mut recs = Vec::with_capacity(subjects.len());
        for (id, responses, x, z) in subjects {
            let responses = responses
                .into_iter()
                .map(|r| r.checked_sub(1).ok_or_else(|| PyValueError::new_err("responses are 1-based")))
                .collect::<PyResult<Vec<_>>>()?;
            recs.push(SubjectRecord { id, responses, x, z });
        }
        let inner = PanelDataset::from_subjects(j, d_x, d_z, outside_option, recs).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_csv(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: read_dataset(&path).map_err(to_py)? })
    }

    fn to_csv(&self, path: PathBuf) -> PyResult<()> {
        write_dataset(&path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn j(&self) -> usize {
        self.inner.j()
    }

    #[getter]
    fn n_alt(&self) -> usize {
        self.inner.n_alt()
    }

    #[getter]
    fn d_x(&self) -> usize {
        self.inner.d_x()
    }

    #[getter]
    fn d_z(&self) -> usize {
        self.inner.d_z()
    }

    #[getter]
    fn subject_ids(&self) -> Vec<u64> {
        self.inner.subject_ids().to_vec()
    }

    fn responses(&self, i: usize) -> PyResult<Vec<usize>> {
        if i >= self.inner.n() {
            return Err(PyIndexError::new_err(format!("subject index {i} out of range")));
        }
        Ok(self.inner.responses(i).iter().map(|r| r + 1).collect())
    }

    /// Descriptions of every data-invariant violation; empty when valid.
    fn validate(&self) -> Vec<String> {
        validate_dataset(&self.inner).iter().map(|v| v.to_string()).collect()
    }

    /// Splits off the last `h` occasions of every subject.
    fn split_holdout(&self, h: usize) -> (Self, Self) {
        let (est, hold) = self.inner.split_holdout(h);
        (Self { inner: est }, Self { inner: hold })
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, J={}, d_x={}, d_z={}, occasions={})",
            self.inner.n(),
            self.inner.j(),
            self.inner.d_x(),
            self.inner.d_z(),
            self.inner.total_occasions()
        )
    }
}

/// Stored posterior draws from one run.
#[pyclass(name = "Chain", module = "dpcs_py")]
pub struct PyChain {
    pub inner: ChainStore,
    acceptance: Vec<(String, f64)>,
}

#[pymethods]
impl PyChain {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: read_chain(&dir).map_err(to_py)?, acceptance: vec![] })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        write_chain(&dir, &self.inner).map_err(to_py)
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.meta.variant.to_string()
    }

    #[getter]
    fn subject_ids(&self) -> Vec<u64> {
        self.inner.meta.subject_ids.clone()
    }

    fn beta(&self) -> Vec<Vec<f64>> {
        self.inner.draws.iter().map(|d| d.beta.clone()).collect()
    }

    fn delta(&self) -> Vec<Vec<f64>> {
        self.inner.draws.iter().map(|d| d.delta.clone()).collect()
    }

    fn alpha(&self) -> Vec<f64> {
        self.inner.draws.iter().map(|d| d.alpha).collect()
    }

    fn k_star(&self) -> Vec<usize> {
        self.inner.draws.iter().map(|d| d.k_star).collect()
    }

    fn loglik(&self) -> Vec<f64> {
        self.inner.draws.iter().map(|d| d.loglik).collect()
    }

    /// Per-block acceptance rates of the run; empty for a loaded chain.
    fn acceptance(&self) -> Vec<(String, f64)> {
        self.acceptance.clone()
    }

    fn inclusion_probs(&self) -> PyResult<Vec<Vec<f64>>> {
        inclusion_probs(&self.inner).map_err(to_py)
    }

    #[pyo3(signature = (threshold=0.5))]
    fn cs_point(&self, threshold: f64) -> PyResult<Vec<Vec<usize>>> {
        let incl = inclusion_probs(&self.inner).map_err(to_py)?;
        Ok(one_based(cs_point_estimate(&incl, threshold)))
    }

    fn similarity(&self) -> PyResult<Vec<Vec<f64>>> {
        similarity_matrix(&self.inner).map_err(to_py)
    }

    /// `(subject, h, logpred)` per holdout subject.
    fn predictive_loglik(&self, holdout: &PyDataset) -> PyResult<Vec<(u64, usize, f64)>> {
        let rows = predictive_loglik(&self.inner, &holdout.inner).map_err(to_py)?;
        Ok(rows.into_iter().map(|r| (r.subject, r.h, r.logpred)).collect())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Chain(variant={}, draws={}, n={})", self.inner.meta.variant, self.inner.len(), self.inner.meta.n)
    }
}

fn rate(accepted: u64, tried: u64) -> f64 {
    if tried == 0 {
        f64::NAN
    } else {
        accepted as f64 / tried as f64
    }
}

/// Runs the sampler. `config` is a preset name or a config file path; the
/// keyword arguments override it.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (data, variant=None, iters=None, burnin=None, thin=None, seed=None, config=None))]
pub fn fit(
    py: Python<'_>,
    data: &PyDataset,
    variant: Option<&str>,
    iters: Option<u64>,
    burnin: Option<u64>,
    thin: Option<u64>,
    seed: Option<u64>,
    config: Option<&str>,
) -> PyResult<PyChain> {
    let mut cfg = match config {
        Some(spec) => Config::load_or_preset(spec).and_then(|c| c.fit_config(&data.inner)).map_err(to_py)?,
        None => FitConfig::new(&data.inner, Variant::MnlRc),
    };
    if let Some(v) = variant {
        cfg.variant = v.parse().map_err(to_py)?;
    }
    if let Some(g) = iters {
        cfg.mcmc.iters = g;
    }
    if burnin.is_some() {
        cfg.mcmc.burnin = burnin;
    }
    if let Some(t) = thin {
        cfg.mcmc.thin = t;
    }
    if let Some(s) = seed {
        cfg.mcmc.seed = s;
    }
    let data = &data.inner;
    let out = py.detach(|| run_fit(data, cfg)).map_err(to_py)?;
    let c = out.counters;
    let acceptance = vec![
        ("beta".to_string(), rate(c.beta.accepted, c.beta.tried)),
        ("delta".to_string(), rate(c.delta.accepted, c.delta.tried)),
        ("b".to_string(), rate(c.b.accepted, c.b.tried)),
        ("cs".to_string(), rate(c.cs.accepted, c.cs.proposed)),
    ];
    Ok(PyChain { inner: out.chain, acceptance })
}

/// Small-design simulation over J = 4. Returns the dataset and the true
/// consideration sets.
#[pyfunction]
#[pyo3(signature = (n=100, t=10, beta=1.0, seed=1))]
pub fn simulate_small(n: usize, t: usize, beta: f64, seed: u64) -> PyResult<(PyDataset, Vec<Vec<usize>>)> {
    let sim = sim_small(n, t, &default_small_pmf(), beta, seed).map_err(to_py)?;
    let truth = (0..sim.data.n()).map(|i| sim.truth.set(i)).collect();
    Ok((PyDataset { inner: sim.data }, one_based(truth)))
}

/// Exact consideration-set pmf of a finite Bernoulli mixture, indexed by
/// bitmask with bit `j - 1` for category `j`.
#[pyfunction]
pub fn mixture_pmf(weights: Vec<f64>, q: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    Ok(mixture_cs_pmf(&weights, &q).map_err(to_py)?.probs)
}

/// Sampler-against-enumeration checks as `(name, passed, value, tolerance)`.
#[pyfunction]
#[pyo3(signature = (sweeps=200_000, seed=1))]
pub fn oracle_checks(py: Python<'_>, sweeps: u64, seed: u64) -> PyResult<Vec<(String, bool, f64, f64)>> {
    let checks = py.detach(|| run_oracle_checks(sweeps, seed)).map_err(to_py)?;
    Ok(checks.into_iter().map(|c| (c.name, c.passed, c.value, c.tolerance)).collect())
}

#[pymodule]
fn dpcs_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("VARIANTS", Variant::ALL.iter().map(|v| v.to_string()).collect::<Vec<_>>())?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyChain>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_small, m)?)?;
    m.add_function(wrap_pyfunction!(mixture_pmf, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_checks, m)?)?;
    Ok(())
}

//! Python bindings. Laws are built from the same spec strings as the
//! experiment files; structured results come back as dicts.

use ::gwdev as core;
use core::deviations::{self, DecompositionOptions, DeviationExperiment, EpsilonFamily, Regime};
use core::distengine::{self, EngineConfig};
use core::limits::{self, LimitConfig, DEFAULT_TOL};
use core::montecarlo::{self, McConfig};
use core::{IncrementSpec, LawSpec, TailOptions};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(gwdev, GwdevError, PyValueError);

fn err(e: core::Error) -> PyErr {
    GwdevError::new_err(e.to_string())
}

/// Converts any serializable value into Python objects through JSON.
fn to_py<T: serde::Serialize>(py: Python<'_>, v: &T) -> PyResult<PyObject> {
    let text = serde_json::to_string(v).map_err(|e| GwdevError::new_err(e.to_string()))?;
    Ok(py.import_bound("json")?.call_method1("loads", (text,))?.unbind())
}

/// Offspring law, e.g. `OffspringLaw("linear_fractional m=2")` or `OffspringLaw("{1: 0.2, 2: 0.8}")`.
#[pyclass(frozen, name = "OffspringLaw", module = "gwdev")]
#[derive(Clone)]
struct PyOffspringLaw {
    inner: core::OffspringLaw,
}

#[pymethods]
impl PyOffspringLaw {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        let spec: LawSpec = spec.parse().map_err(err)?;
        Ok(Self {
            inner: spec.build().map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_pairs(pairs: Vec<(u64, f64)>) -> PyResult<Self> {
        Ok(Self {
            inner: core::OffspringLaw::from_pairs(&pairs).map_err(err)?,
        })
    }

    #[getter]
    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    #[getter]
    fn variance(&self) -> f64 {
        self.inner.variance()
    }

    #[getter]
    fn extinction_prob(&self) -> f64 {
        self.inner.extinction_prob()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    /// Schröder exponent α, or `None` in the Böttcher case.
    #[getter]
    fn alpha(&self) -> Option<f64> {
        self.inner.is_schroder().then(|| self.inner.alpha())
    }

    #[getter]
    fn bottcher_beta(&self) -> Option<f64> {
        self.inner.bottcher_beta()
    }

    #[getter]
    fn lattice_span(&self) -> u64 {
        self.inner.lattice_span()
    }

    #[getter]
    fn min_offspring(&self) -> u64 {
        self.inner.min_offspring()
    }

    fn pgf(&self, s: f64) -> f64 {
        self.inner.pgf(s)
    }

    fn pgf_iterate(&self, s: f64, n: usize) -> f64 {
        self.inner.pgf_iterate(s, n)
    }

    fn summary(&self, py: Python<'_>) -> PyResult<PyObject> {
        to_py(py, &self.inner.summary())
    }

    fn __repr__(&self) -> String {
        format!("OffspringLaw(\"{}\")", self.inner.spec())
    }
}

/// Increment law, e.g. `IncrementLaw("rademacher")` or `IncrementLaw("pareto theta=2.5")`.
#[pyclass(frozen, name = "IncrementLaw", module = "gwdev")]
#[derive(Clone)]
struct PyIncrementLaw {
    inner: core::IncrementLaw,
}

#[pymethods]
impl PyIncrementLaw {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        let spec: IncrementSpec = spec.parse().map_err(err)?;
        Ok(Self {
            inner: spec.build().map_err(err)?,
        })
    }

    #[getter]
    fn variance(&self) -> f64 {
        self.inner.variance()
    }

    #[getter]
    fn tail_index(&self) -> Option<f64> {
        self.inner.tail_index()
    }

    /// P(S_k >= x) as `(value, error_bar, tier)`.
    fn sum_tail(&self, k: u64, x: f64) -> PyResult<(f64, f64, String)> {
        let t = self.inner.sum_tail(k, x, &TailOptions::default()).map_err(err)?;
        Ok((t.value, t.error_bar, t.tier.to_string()))
    }

    /// P(S_k >= εk) / (k P(X >= εk)) as `(value, error_bar)`.
    fn big_jump_ratio(&self, k: u64, eps: f64) -> PyResult<(f64, f64)> {
        let t = self.inner.big_jump_ratio(k, eps, &TailOptions::default()).map_err(err)?;
        Ok((t.value, t.error_bar))
    }

    fn __repr__(&self) -> String {
        format!("IncrementLaw(\"{}\")", self.inner.spec())
    }
}

/// Law of Z_n as a list of `(k, P(Z_n = k))` plus the truncated mass.
#[pyclass(frozen, name = "ProbVector", module = "gwdev")]
struct PyProbVector {
    inner: core::ProbVector,
}

#[pymethods]
impl PyProbVector {
    fn items(&self) -> Vec<(i64, f64)> {
        self.inner.iter().collect()
    }

    fn mass_at(&self, k: i64) -> f64 {
        self.inner.mass_at(k)
    }

    #[getter]
    fn truncated_mass(&self) -> f64 {
        self.inner.truncated_mass
    }

    #[getter]
    fn total_mass(&self) -> f64 {
        self.inner.total_mass()
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    /// E[Z^{-r}; Z > 0].
    fn harmonic_moment(&self, r: f64) -> f64 {
        self.inner.harmonic_moment(r)
    }

    fn __len__(&self) -> usize {
        self.inner.masses.len()
    }
}

#[pyfunction]
fn generation_pmf(law: &PyOffspringLaw, n: usize) -> PyResult<PyProbVector> {
    let mut pmfs = distengine::generation_pmfs(&law.inner, n, &EngineConfig::default()).map_err(err)?;
    Ok(PyProbVector {
        inner: pmfs.swap_remove(n),
    })
}

/// φ(h) = E e^{-hW}.
#[pyfunction]
#[pyo3(signature = (law, h, tol = DEFAULT_TOL))]
fn laplace_w(law: &PyOffspringLaw, h: f64, tol: f64) -> PyResult<f64> {
    Ok(limits::laplace_w(&law.inner, h, tol).map_err(err)?.value)
}

#[pyfunction]
#[pyo3(signature = (law, s, tol = DEFAULT_TOL))]
fn schroder_function(law: &PyOffspringLaw, s: f64, tol: f64) -> PyResult<f64> {
    Ok(limits::schroder_function(&law.inner, s, tol).map_err(err)?.value)
}

/// I_θ as `(value, error)`.
#[pyfunction]
#[pyo3(signature = (law, theta, tol = 1e-10))]
fn i_theta(law: &PyOffspringLaw, theta: f64, tol: f64) -> PyResult<(f64, f64)> {
    let c = limits::i_theta(&law.inner, theta, tol).map_err(err)?;
    Ok((c.value, c.error))
}

#[pyfunction]
fn gamma_alpha(alpha: f64, sigma: f64) -> f64 {
    deviations::gamma_alpha(alpha, sigma)
}

/// P(R_n >= ε, Z_n > 0) by decomposition over Z_n, as a dict.
#[pyfunction]
fn decomposition_tail(py: Python<'_>, law: &PyOffspringLaw, x: &PyIncrementLaw, n: usize, eps: f64) -> PyResult<PyObject> {
    let v = deviations::decomposition_tail(&law.inner, &x.inner, n, eps, None, &DecompositionOptions::default())
        .map_err(err)?;
    to_py(py, &v)
}

/// Runs a regime verification; `epsilon` is an optional dict such as
/// `{"form": "power", "c": 1.0, "rho": 0.25}`.
#[pyfunction]
#[pyo3(signature = (law, x, regime, n_range, epsilon = None))]
fn verify(
    py: Python<'_>,
    law: &PyOffspringLaw,
    x: &PyIncrementLaw,
    regime: &str,
    n_range: (usize, usize),
    epsilon: Option<Bound<'_, PyDict>>,
) -> PyResult<PyObject> {
    let regime: Regime = regime.parse().map_err(err)?;
    let mut exp = DeviationExperiment::new(law.inner.clone(), x.inner.clone(), regime, n_range).map_err(err)?;
    if let Some(d) = epsilon {
        let text: String = py.import_bound("json")?.call_method1("dumps", (d,))?.extract()?;
        let fam: EpsilonFamily = serde_json::from_str(&text).map_err(|e| GwdevError::new_err(e.to_string()))?;
        exp = exp.with_epsilon(fam);
    }
    let report = py
        .allow_threads(|| deviations::verify(&exp, &LimitConfig::default(), &DecompositionOptions::default()))
        .map_err(err)?;
    to_py(py, &report)
}

/// Monte Carlo estimate of P(R_n >= ε, Z_n > 0) with its Wilson interval.
#[pyfunction]
#[pyo3(signature = (law, x, n, eps, seed, replications = 100_000))]
fn estimate_rn_tail(
    py: Python<'_>,
    law: &PyOffspringLaw,
    x: &PyIncrementLaw,
    n: usize,
    eps: f64,
    seed: u64,
    replications: u64,
) -> PyResult<PyObject> {
    let cfg = McConfig {
        replications,
        ..McConfig::default()
    };
    let est = py
        .allow_threads(|| montecarlo::simulate(&law.inner, Some(&x.inner), n, &[eps], seed, &cfg))
        .map_err(err)?
        .estimates();
    to_py(py, &est[0])
}

#[pymodule]
#[pyo3(name = "gwdev")]
fn gwdev_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("GwdevError", m.py().get_type_bound::<GwdevError>())?;
    m.add_class::<PyOffspringLaw>()?;
    m.add_class::<PyIncrementLaw>()?;
    m.add_class::<PyProbVector>()?;
    m.add_function(wrap_pyfunction!(generation_pmf, m)?)?;
    m.add_function(wrap_pyfunction!(laplace_w, m)?)?;
    m.add_function(wrap_pyfunction!(schroder_function, m)?)?;
    m.add_function(wrap_pyfunction!(i_theta, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(decomposition_tail, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_rn_tail, m)?)?;
    Ok(())
}

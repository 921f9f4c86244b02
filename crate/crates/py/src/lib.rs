//! Python bindings: spaces, polyhedral operators, bounds, maximal
//! extensions, scenario systems and the report runner.

use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sandwich_core::dynamic::{extend_system, ExtendedSystem};
use sandwich_core::extension::{conjugate, maximal_extension, ExtendedOperator, PenaltyValue};
use sandwich_core::operator::{validate_operator, BoundPair, PolyhedralOperator};
use sandwich_core::prob::{FilteredSpace, RandomVariable};
use sandwich_core::report::ValidationReport;
use sandwich_core::scenario::{run, Command, PayoffRef, RunOptions, Scenario, Suite};
use sandwich_core::subspace::Subspace;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn penalties(p: &PenaltyValue) -> Vec<f64> {
    p.values().iter().map(|v| v.to_f64()).collect()
}

fn checks<'py>(py: Python<'py>, rep: &ValidationReport) -> PyResult<Vec<Bound<'py, PyDict>>> {
    rep.entries
        .iter()
        .map(|e| {
            let d = PyDict::new(py);
            d.set_item("name", &e.name)?;
            d.set_item("passed", e.passed)?;
            d.set_item("detail", &e.detail)?;
            Ok(d)
        })
        .collect()
}

#[pyclass(name = "FilteredSpace", frozen)]
struct PySpace {
    inner: Arc<FilteredSpace>,
}

impl PySpace {
    fn rv(&self, values: Vec<f64>) -> PyResult<RandomVariable> {
        let level = self.inner.measurability_level(&values);
        RandomVariable::new(&self.inner, values, level).map_err(err)
    }
}

#[pymethods]
impl PySpace {
    #[new]
    #[pyo3(signature = (probs, partitions, time_labels=None))]
    fn new(probs: Vec<f64>, partitions: Vec<Vec<Vec<usize>>>, time_labels: Option<Vec<f64>>) -> PyResult<Self> {
        let labels = time_labels.unwrap_or_else(|| (0..partitions.len()).map(|l| l as f64).collect());
        let inner = FilteredSpace::new(probs, partitions, labels).map_err(err)?;
        Ok(Self { inner: Arc::new(inner) })
    }

    #[getter]
    fn n_atoms(&self) -> usize {
        self.inner.n_atoms()
    }

    #[getter]
    fn n_levels(&self) -> usize {
        self.inner.n_levels()
    }

    #[getter]
    fn probs(&self) -> Vec<f64> {
        self.inner.probs().to_vec()
    }

    fn blocks(&self, level: usize) -> PyResult<Vec<Vec<usize>>> {
        Ok(self.inner.level(level).map_err(err)?.blocks().to_vec())
    }

    /// `E[x | F_level]`, one value per atom.
    fn cond_expectation(&self, x: Vec<f64>, level: usize) -> PyResult<Vec<f64>> {
        if x.len() != self.inner.n_atoms() {
            return Err(err(format!("expected {} values", self.inner.n_atoms())));
        }
        self.inner.cond_expectation_values(&x, level).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("FilteredSpace(n_atoms={}, n_levels={})", self.inner.n_atoms(), self.inner.n_levels())
    }
}

/// `x(X) = max_j E[f_j X | A] - c_j` on the span closure of `generators`
/// (the full space when omitted).
#[pyclass(name = "PolyhedralOperator", frozen)]
struct PyOperator {
    space: Arc<FilteredSpace>,
    inner: PolyhedralOperator,
}

#[pymethods]
impl PyOperator {
    #[new]
    #[pyo3(signature = (space, level_a, level_b, pieces, generators=None))]
    fn new(
        space: &PySpace,
        level_a: usize,
        level_b: usize,
        pieces: Vec<(Vec<f64>, Vec<f64>)>,
        generators: Option<Vec<Vec<f64>>>,
    ) -> PyResult<Self> {
        let s = space.inner.clone();
        let dom = match generators {
            Some(gens) => {
                let gens = gens.into_iter().map(|g| space.rv(g)).collect::<PyResult<Vec<_>>>()?;
                Subspace::span_closure(s.clone(), level_b, level_a, &gens)
            }
            None => Subspace::full(s.clone(), level_b, level_a),
        }
        .map_err(err)?;
        let inner = PolyhedralOperator::from_vectors(dom, pieces).map_err(err)?;
        Ok(Self { space: s, inner })
    }

    #[getter]
    fn level_a(&self) -> usize {
        self.inner.level_a()
    }

    #[getter]
    fn level_b(&self) -> usize {
        self.inner.level_b()
    }

    /// Orthonormal basis of the domain.
    fn domain_basis(&self) -> Vec<Vec<f64>> {
        self.inner.domain().basis().into_iter().map(|b| b.into_values()).collect()
    }

    fn evaluate(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let x = RandomVariable::finest(&self.space, x).map_err(err)?;
        Ok(self.inner.evaluate(&x).map_err(err)?.into_values())
    }

    /// Minimal penalty `x*(f)` per atom; `inf` where unbounded.
    fn conjugate(&self, f: Vec<f64>) -> PyResult<Vec<f64>> {
        let f = RandomVariable::finest(&self.space, f).map_err(err)?;
        Ok(penalties(&conjugate(&self.inner, &f).map_err(err)?))
    }

    fn validate<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        checks(py, &validate_operator(&self.inner))
    }
}

#[pyclass(name = "BoundPair", frozen)]
struct PyBounds {
    inner: BoundPair,
}

#[pymethods]
impl PyBounds {
    /// Linear bounds with kernels `m0 <= M0`, one value per atom.
    #[staticmethod]
    fn linear(space: &PySpace, level_a: usize, level_b: usize, m0: Vec<f64>, big_m0: Vec<f64>) -> PyResult<Self> {
        let (lo, hi) = (space.rv(m0)?, space.rv(big_m0)?);
        Ok(Self {
            inner: BoundPair::linear(&space.inner, level_a, level_b, lo, hi).map_err(err)?,
        })
    }

    #[staticmethod]
    fn constant(space: &PySpace, level_a: usize, level_b: usize, lo: f64, hi: f64) -> PyResult<Self> {
        Ok(Self {
            inner: BoundPair::constant(&space.inner, level_a, level_b, lo, hi).map_err(err)?,
        })
    }

    #[staticmethod]
    fn polyhedral(space: &PySpace, level_a: usize, level_b: usize, lower_kernels: Vec<Vec<f64>>, upper_kernels: Vec<Vec<f64>>) -> PyResult<Self> {
        let lo = lower_kernels.into_iter().map(|k| space.rv(k)).collect::<PyResult<Vec<_>>>()?;
        let hi = upper_kernels.into_iter().map(|k| space.rv(k)).collect::<PyResult<Vec<_>>>()?;
        Ok(Self {
            inner: BoundPair::polyhedral(&space.inner, level_a, level_b, lo, hi).map_err(err)?,
        })
    }
}

#[pyclass(name = "ExtendedOperator", frozen)]
struct PyExtended {
    space: Arc<FilteredSpace>,
    inner: ExtendedOperator,
}

#[pymethods]
impl PyExtended {
    fn evaluate(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let x = RandomVariable::finest(&self.space, x).map_err(err)?;
        Ok(self.inner.evaluate(&x).map_err(err)?.into_values())
    }

    /// Maximising density with the value and its penalty.
    fn attain<'py>(&self, py: Python<'py>, x: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let x = RandomVariable::finest(&self.space, x).map_err(err)?;
        let a = self.inner.attain(&x).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("value", a.value.into_values())?;
        d.set_item("density", a.density.into_values())?;
        d.set_item("penalty", penalties(&a.penalty))?;
        Ok(d)
    }

    fn penalty(&self, f: Vec<f64>) -> PyResult<Vec<f64>> {
        let f = RandomVariable::finest(&self.space, f).map_err(err)?;
        Ok(penalties(&self.inner.conjugate_full(&f).map_err(err)?))
    }

    #[getter]
    fn positivity_guaranteed(&self) -> bool {
        self.inner.positivity_guaranteed()
    }
}

/// Maximal sandwich-preserving extension of `op` under `bounds`.
#[pyfunction(name = "maximal_extension")]
fn py_maximal_extension(op: &PyOperator, bounds: &PyBounds) -> PyResult<PyExtended> {
    Ok(PyExtended {
        space: op.space.clone(),
        inner: maximal_extension(&op.inner, &bounds.inner).map_err(err)?,
    })
}

/// A scenario file with its assembled, extended operator system.
#[pyclass(name = "Scenario", frozen)]
struct PyScenario {
    scenario: Scenario,
    system: ExtendedSystem,
}

fn command(name: &str, from: Option<usize>, to: Option<usize>, payoff: Option<Vec<f64>>, suite: Option<&str>) -> PyResult<Command> {
    Ok(match name {
        "validate" => Command::Validate,
        "extend" => Command::Extend,
        "report" => Command::Report,
        "price" => match (from, to, payoff) {
            (Some(from), Some(to), Some(p)) => Command::Price {
                from,
                to,
                payoff: PayoffRef::Inline(p),
            },
            _ => return Err(err("price needs from, to and payoff")),
        },
        "check" => Command::Check(suite.ok_or_else(|| err("check needs a suite"))?.parse::<Suite>().map_err(err)?),
        other => return Err(err(format!("unknown command {other:?}"))),
    })
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let scenario = Scenario::from_json(text).map_err(err)?;
        let built = scenario.build().map_err(err)?;
        let system = extend_system(&built.system).map_err(err)?;
        Ok(Self { scenario, system })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(err)?;
        Self::from_json(&text)
    }

    #[getter]
    fn grid(&self) -> Vec<usize> {
        self.system.grid().to_vec()
    }

    /// Composed `x̂_{s,t}(X)`.
    fn evaluate(&self, s: usize, t: usize, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let x = RandomVariable::finest(self.system.space(), x).map_err(err)?;
        Ok(self.system.evaluate(s, t, &x).map_err(err)?.into_values())
    }

    /// Value, attaining product density, its factors and penalty.
    fn price<'py>(&self, py: Python<'py>, s: usize, t: usize, x: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let x = RandomVariable::finest(self.system.space(), x).map_err(err)?;
        let p = self.system.price(s, t, &x).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("value", p.value.into_values())?;
        d.set_item("density", p.density.into_values())?;
        d.set_item("factors", p.factors.into_iter().map(|g| g.into_values()).collect::<Vec<_>>())?;
        d.set_item("penalty", penalties(&p.penalty))?;
        Ok(d)
    }

    /// Runs a CLI command; returns `(passed, json_report, text_report)`.
    #[pyo3(signature = (name, from_=None, to=None, payoff=None, suite=None, seed=0, tol=1e-6))]
    #[allow(clippy::too_many_arguments)]
    fn run(
        &self,
        name: &str,
        from_: Option<usize>,
        to: Option<usize>,
        payoff: Option<Vec<f64>>,
        suite: Option<&str>,
        seed: u64,
        tol: f64,
    ) -> PyResult<(bool, String, String)> {
        let cmd = command(name, from_, to, payoff, suite)?;
        let out = run(&self.scenario, &cmd, &RunOptions { seed, tol }).map_err(err)?;
        Ok((out.passed, out.json, out.text))
    }
}

#[pymodule]
fn sandwich_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySpace>()?;
    m.add_class::<PyOperator>()?;
    m.add_class::<PyBounds>()?;
    m.add_class::<PyExtended>()?;
    m.add_class::<PyScenario>()?;
    m.add_function(wrap_pyfunction!(py_maximal_extension, m)?)?;
    Ok(())
}

//! Python bindings: preset models, the ODE Picard solver, exploitability and
//! Monte Carlo cost estimates.

use std::collections::BTreeMap;

use picard_mpe as core;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: core::Error) -> PyErr {
    match e {
        core::Error::InvalidArgument(_)
        | core::Error::NotOnSimplex { .. }
        | core::Error::IndexOutOfRange { .. }
        | core::Error::TooLarge { .. }
        | core::Error::DimensionMismatch(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// A symmetric `(N+1)`-player game.
#[pyclass(module = "picard_mpe_py", frozen)]
struct Model {
    inner: core::GameModel,
}

#[pymethods]
impl Model {
    /// Build a preset (`kuramoto1`, `kuramoto2`, `cyber`) with optional
    /// population size, horizon and parameter overrides.
    #[staticmethod]
    #[pyo3(signature = (name, n=None, horizon=None, params=None))]
    fn preset(name: &str, n: Option<u32>, horizon: Option<f64>, params: Option<BTreeMap<String, f64>>) -> PyResult<Self> {
        let id: core::PresetId = name.parse().map_err(err)?;
        let inner = id
            .build(
                n.unwrap_or(id.default_n()),
                horizon.unwrap_or(id.default_horizon()),
                &params.unwrap_or_default(),
            )
            .map_err(err)?;
        Ok(Model { inner })
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn n(&self) -> u32 {
        self.inner.n()
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon()
    }

    #[getter]
    fn num_states(&self) -> usize {
        self.inner.num_states()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels().to_vec()
    }

    /// Count vector of the population with rank `mu`.
    fn counts(&self, mu: usize) -> PyResult<Vec<u32>> {
        let t = self.inner.table();
        if mu >= t.len() {
            return Err(PyValueError::new_err(format!("rank {mu} out of range 0..{}", t.len())));
        }
        Ok(t.counts(mu).to_vec())
    }

    /// Rank of a count vector.
    fn rank(&self, counts: Vec<u32>) -> PyResult<usize> {
        self.inner.table().rank(&counts).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(d={}, n={}, horizon={}, states={})",
            self.inner.d(),
            self.inner.n(),
            self.inner.horizon(),
            self.inner.num_states()
        )
    }
}

/// Outcome of a Picard run.
#[pyclass(module = "picard_mpe_py", frozen)]
struct Solution {
    model: core::GameModel,
    report: core::PicardReport,
    ode: core::OdeConfig,
}

#[pymethods]
impl Solution {
    #[getter]
    fn residuals(&self) -> Vec<f64> {
        self.report.residuals.clone()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.report.converged
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.report.iterations_run
    }

    /// Fitted contraction factor, if enough residuals were recorded.
    #[getter]
    fn gamma(&self) -> Option<f64> {
        self.report.rate_fit.map(|f| f.gamma())
    }

    /// Grid nodes of the value and control.
    fn times(&self) -> Vec<f64> {
        self.report.final_value.grid().nodes().collect()
    }

    /// `values()[k][flat]` at grid node `k`, with `flat = x * |states| + mu`.
    fn values(&self) -> Vec<Vec<f64>> {
        let v = &self.report.final_value;
        (0..v.grid().num_nodes()).map(|k| v.node(k).to_vec()).collect()
    }

    /// `control()[k][flat]`: packed rate vector of length `d - 1`.
    fn control(&self) -> Vec<Vec<Vec<f64>>> {
        let c = &self.report.final_control;
        (0..c.grid().num_nodes())
            .map(|k| (0..c.states()).map(|f| c.at(k, f).to_vec()).collect())
            .collect()
    }

    /// `(p, z)` pairs at `t = 0`; two-state models only.
    fn slice(&self) -> PyResult<Vec<(f64, f64)>> {
        core::slice_observable(&self.model, &self.report.final_value, 0).map_err(err)
    }

    /// Exploitability of the final control: `(epsilon, t, x, counts)`.
    fn exploitability(&self, py: Python<'_>) -> PyResult<(f64, f64, usize, Vec<u32>)> {
        let c = &self.report.final_control;
        let cert = py
            .detach(|| core::exploitability(&self.model, c, c.grid(), &self.ode))
            .map_err(err)?;
        Ok((cert.epsilon, cert.argmax.t, cert.argmax.x, cert.argmax.counts))
    }

    /// Monte Carlo cost of the final control against itself from a uniform
    /// start: `(mean, stderr)`.
    #[pyo3(signature = (trajectories=1000, seed=0, thinning=false))]
    fn simulate_cost(&self, py: Python<'_>, trajectories: usize, seed: u64, thinning: bool) -> PyResult<(f64, f64)> {
        let c = &self.report.final_control;
        let opts = core::SimOptions {
            mode: if thinning {
                core::SimMode::Thinning { bound: None }
            } else {
                core::SimMode::Frozen
            },
            ..core::SimOptions::default()
        };
        let theta0 = core::InitialDistribution::uniform(self.model.d());
        let est = py
            .detach(|| core::estimate_cost(&self.model, c, c, &theta0, trajectories, seed, &opts))
            .map_err(err)?;
        Ok((est.mean, est.stderr))
    }
}

/// Weighted Picard iteration on a uniform grid of `intervals` steps.
#[pyfunction]
#[pyo3(signature = (model, intervals=100, rho=0.0, max_iter=100, tol=1e-8, rtol=1e-6, atol=1e-8))]
#[allow(clippy::too_many_arguments)]
fn picard(
    py: Python<'_>,
    model: &Model,
    intervals: usize,
    rho: f64,
    max_iter: usize,
    tol: f64,
    rtol: f64,
    atol: f64,
) -> PyResult<Solution> {
    let grid = core::TimeGrid::new(model.inner.horizon(), intervals).map_err(err)?;
    let mut cfg = core::PicardConfig::new(grid);
    cfg.rho = rho;
    cfg.max_iter = max_iter;
    cfg.tol = tol;
    cfg.ode = core::OdeConfig::with_tolerances(rtol, atol);
    let report = py.detach(|| core::picard_run(&model.inner, &cfg)).map_err(err)?;
    Ok(Solution {
        model: model.inner.clone(),
        report,
        ode: cfg.ode,
    })
}

/// Names of the built-in presets.
#[pyfunction]
fn presets() -> Vec<&'static str> {
    core::PresetId::ALL.iter().map(|p| p.as_str()).collect()
}

#[pymodule]
fn picard_mpe_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<Solution>()?;
    m.add_function(wrap_pyfunction!(picard, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    Ok(())
}

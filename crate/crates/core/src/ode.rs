//! Backward integration of the value-function ODE systems.
//!
//! Every system here is terminal-valued at `T`. We integrate in reversed time
//! `s = T - t` with the Dormand–Prince pair, landing on every node of the
//! output grid and of any control grid so piecewise-linear controls never
//! introduce a kink inside a step.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dopri::{self, DopriOptions};
use crate::error::{Error, Result};
use crate::game_model::GameModel;
use crate::grid::{ControlField, TimeGrid, ValueField};

/// Right-hand sides are evaluated in parallel above this many states.
const PAR_MIN_STATES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeConfig {
    pub rtol: f64,
    pub atol: f64,
    /// Extra cap on the step size; steps never exceed the grid spacing anyway.
    #[serde(default)]
    pub max_step: Option<f64>,
}

impl Default for OdeConfig {
    fn default() -> Self {
        OdeConfig {
            rtol: 1e-6,
            atol: 1e-8,
            max_step: None,
        }
    }
}

impl OdeConfig {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        OdeConfig {
            rtol,
            atol,
            max_step: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerances must be positive (rtol={}, atol={})",
                self.rtol, self.atol
            )));
        }
        Ok(())
    }
}

/// Output of the direct coupled solve.
#[derive(Debug, Clone)]
pub struct DirectSolution {
    pub value: ValueField,
    pub control: ControlField,
    /// `max |v|` over the grid.
    pub max_abs: f64,
    /// `c_v` from the model bounds.
    pub bound: f64,
    /// Set when `max |v|` exceeds `10 c_v`.
    pub unstable: bool,
}

fn check_grid(model: &GameModel, grid: &TimeGrid) -> Result<()> {
    if (grid.horizon() - model.horizon()).abs() > 1e-12 * model.horizon().max(1.0) {
        return Err(Error::DimensionMismatch(format!(
            "grid horizon {} differs from model horizon {}",
            grid.horizon(),
            model.horizon()
        )));
    }
    Ok(())
}

fn check_control(model: &GameModel, c: &ControlField, what: &str) -> Result<()> {
    check_grid(model, c.grid())?;
    if c.states() != model.num_states() || c.dim() != model.d() - 1 {
        return Err(Error::DimensionMismatch(format!(
            "{what}: control has {} states x {} rates, model needs {} x {}",
            c.states(),
            c.dim(),
            model.num_states(),
            model.d() - 1
        )));
    }
    Ok(())
}

#[inline]
fn fill_states(out: &mut [f64], f: impl Fn(usize) -> f64 + Sync) {
    if out.len() >= PAR_MIN_STATES {
        out.par_iter_mut().enumerate().for_each(|(i, o)| *o = f(i));
    } else {
        out.iter_mut().enumerate().for_each(|(i, o)| *o = f(i));
    }
}

/// Integrates `-dv/dt = rhs(t, v)` from the terminal data back to 0 and
/// samples on `grid`. `kinks` are further grids whose nodes steps must hit.
fn integrate_backward<F>(
    grid: &TimeGrid,
    kinks: &[&TimeGrid],
    terminal: Vec<f64>,
    cfg: &OdeConfig,
    mut rhs: F,
) -> Result<ValueField>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    cfg.validate()?;
    let horizon = grid.horizon();
    let states = terminal.len();
    let m = grid.intervals();

    // In s = T - t the output node s_j = grid.node(j) holds v at t_{M-j}.
    let samples: Vec<f64> = grid.nodes().collect();
    let mut stops = samples.clone();
    for g in kinks {
        stops.extend(g.nodes());
    }
    stops.sort_by(f64::total_cmp);
    stops.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * horizon.max(1.0));

    let opts = DopriOptions {
        rtol: cfg.rtol,
        atol: cfg.atol,
        max_step: cfg.max_step.unwrap_or(f64::INFINITY).min(grid.dt()),
    };
    let mut field = ValueField::zeros(*grid, states);
    let result = dopri::integrate(
        |s, y, dy| rhs(horizon - s, y, dy),
        0.0,
        horizon,
        &terminal,
        &stops,
        &samples,
        &opts,
        |j, y| field.node_mut(m - j).copy_from_slice(y),
    );
    match result {
        Ok(_) => {}
        Err(Error::StepUnderflow { t, h }) => return Err(Error::StepUnderflow { t: horizon - t, h }),
        Err(Error::NonFinite { t, state }) => return Err(Error::NonFinite { t: horizon - t, state }),
        Err(e) => return Err(e),
    }
    // the terminal slice is the initial condition, bit for bit
    field.node_mut(m).copy_from_slice(&terminal);
    Ok(field)
}

fn terminal_data(model: &GameModel) -> Vec<f64> {
    (0..model.num_states()).map(|f| model.terminal_cost(f)).collect()
}

/// Value function of the tagged player when everybody else uses `beta`.
pub fn solve_hjb(model: &GameModel, beta: &ControlField, grid: &TimeGrid, cfg: &OdeConfig) -> Result<ValueField> {
    check_grid(model, grid)?;
    check_control(model, beta, "beta")?;
    let mut beta_t = vec![0.0; beta.states() * beta.dim()];
    integrate_backward(grid, &[beta.grid()], terminal_data(model), cfg, |t, v, dv| {
        beta.eval_all(t, &mut beta_t);
        let b = &beta_t;
        fill_states(dv, |flat| model.hamiltonian_of_field(v, flat) + model.population_generator(v, b, flat));
    })
}

/// Solves the coupled equilibrium system directly: the population control is
/// the minimizer evaluated on the current value inside every right-hand side.
pub fn solve_nll_direct(model: &GameModel, grid: &TimeGrid, cfg: &OdeConfig) -> Result<DirectSolution> {
    check_grid(model, grid)?;
    let dim = model.d() - 1;
    let mut alpha = vec![0.0; model.num_states() * dim];
    let value = integrate_backward(grid, &[], terminal_data(model), cfg, |_, v, dv| {
        if alpha.len() >= PAR_MIN_STATES {
            alpha
                .par_chunks_mut(dim)
                .enumerate()
                .for_each(|(flat, a)| model.best_response_of_field(v, flat, a));
        } else {
            for (flat, a) in alpha.chunks_mut(dim).enumerate() {
                model.best_response_of_field(v, flat, a);
            }
        }
        let a = &alpha;
        fill_states(dv, |flat| model.hamiltonian_of_field(v, flat) + model.population_generator(v, a, flat));
    })?;
    let control = crate::picard::best_response_from_value(model, &value);
    let max_abs = value.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let bound = model.compute_bounds().c_v;
    let unstable = max_abs > 10.0 * bound;
    if unstable {
        log::warn!("direct solve exceeded 10 c_v: max |v| = {max_abs}, c_v = {bound}");
    }
    Ok(DirectSolution {
        value,
        control,
        max_abs,
        bound,
        unstable,
    })
}

/// Cost `J(t, x, mu, alpha; beta)` of the tagged player using `alpha` while
/// the others use `beta` (linear backward equation, no minimization).
pub fn evaluate_policy(
    model: &GameModel,
    alpha: &ControlField,
    beta: &ControlField,
    grid: &TimeGrid,
    cfg: &OdeConfig,
) -> Result<ValueField> {
    check_grid(model, grid)?;
    check_control(model, alpha, "alpha")?;
    check_control(model, beta, "beta")?;
    let dim = model.d() - 1;
    let mut alpha_t = vec![0.0; alpha.states() * dim];
    let mut beta_t = vec![0.0; beta.states() * dim];
    integrate_backward(grid, &[alpha.grid(), beta.grid()], terminal_data(model), cfg, |t, v, dv| {
        alpha.eval_all(t, &mut alpha_t);
        beta.eval_all(t, &mut beta_t);
        let (a, b) = (&alpha_t, &beta_t);
        fill_states(dv, |flat| {
            model.running_cost(flat, &a[flat * dim..(flat + 1) * dim])
                + model.tagged_generator(v, a, flat)
                + model.population_generator(v, b, flat)
        });
    })
}

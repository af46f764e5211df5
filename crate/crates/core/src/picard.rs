//! Picard and weighted Picard iterations on feedback controls.
//!
//! Iteration `n` solves the tagged player's equation against
//! `beta^(n-1)`, takes the pointwise minimizer as `alpha^(n)` and sets
//! `beta^(n) = rho beta^(n-1) + (1 - rho) alpha^(n)`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game_model::GameModel;
use crate::grid::{ControlField, TimeGrid, ValueField};
use crate::ode::{solve_hjb, OdeConfig};
use crate::verification::{exploitability, field_distance};

#[derive(Debug, Clone)]
pub struct PicardConfig {
    /// Weight `rho` in `[0, 1)`; `0` is the plain Picard iteration.
    pub rho: f64,
    /// Maximum number of best-response solves.
    pub max_iter: usize,
    /// Stop once `sup_t |v^(n+1)(t) - v^(n)(t)|_2 < tol`.
    pub tol: f64,
    pub grid: TimeGrid,
    pub ode: OdeConfig,
    /// `beta^(0)`; zero when absent.
    pub initial_control: Option<ControlField>,
    /// Also certify every iterate (one extra policy evaluation per iteration).
    pub track_exploitability: bool,
}

impl PicardConfig {
    pub fn new(grid: TimeGrid) -> Self {
        PicardConfig {
            rho: 0.0,
            max_iter: 100,
            tol: 1e-8,
            grid,
            ode: OdeConfig::default(),
            initial_control: None,
            track_exploitability: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidArgument(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Least-squares fit of `ln(residual_n)` against `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl RateFit {
    /// Empirical contraction factor `exp(slope)`.
    pub fn gamma(&self) -> f64 {
        self.slope.exp()
    }
}

#[derive(Debug, Clone)]
pub struct PicardReport {
    /// `sup_t |v^(n+1)(t) - v^(n)(t)|_2`, one entry per solve after the first.
    pub residuals: Vec<f64>,
    pub final_value: ValueField,
    /// Last iterate `beta^(n)`.
    pub final_control: ControlField,
    /// Last best response `alpha^(n)`.
    pub best_response: ControlField,
    pub rate_fit: Option<RateFit>,
    /// Number of best-response solves.
    pub iterations_run: usize,
    pub converged: bool,
    pub elapsed_secs: f64,
    /// Largest pointwise control norm seen, compared against `c_a`.
    pub max_control_norm: f64,
    pub c_a: f64,
    /// Exploitability of each iterate `beta^(n)` when tracking is enabled.
    pub exploitability: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub delta: f64,
    pub seed: u64,
}

/// Pointwise minimizer applied to `Delta_x v` at every grid node.
pub fn best_response_from_value(model: &GameModel, value: &ValueField) -> ControlField {
    let dim = model.d() - 1;
    let states = model.num_states();
    let grid = *value.grid();
    let mut control = ControlField::zeros(grid, states, dim);
    for k in 0..grid.num_nodes() {
        let v = value.node(k);
        let out = control.node_mut(k);
        for (flat, a) in out.chunks_mut(dim).enumerate() {
            model.best_response_of_field(v, flat, a);
        }
    }
    control
}

/// Best response to `beta`: solves HJB(beta) on `grid` and minimizes node by node.
pub fn best_response(
    model: &GameModel,
    beta: &ControlField,
    grid: &TimeGrid,
    cfg: &OdeConfig,
) -> Result<(ControlField, ValueField)> {
    let value = solve_hjb(model, beta, grid, cfg)?;
    Ok((best_response_from_value(model, &value), value))
}

/// Fits `ln r_n = intercept + slope * n` (`n` counted from 1).
pub fn fit_rate(residuals: &[f64]) -> Result<RateFit> {
    if residuals.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 residuals for a rate fit, got {}",
            residuals.len()
        )));
    }
    if let Some(r) = residuals.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
        return Err(Error::InvalidArgument(format!("residuals must be positive, got {r}")));
    }
    let n = residuals.len() as f64;
    let xs: Vec<f64> = (1..=residuals.len()).map(|i| i as f64).collect();
    let ys: Vec<f64> = residuals.iter().map(|r| r.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    // a flat sequence is fitted perfectly
    let r_squared = if ss_tot <= f64::EPSILON * n { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Leading residuals strictly above `floor`.
pub fn pre_floor(residuals: &[f64], floor: f64) -> &[f64] {
    let end = residuals.iter().position(|&r| r <= floor).unwrap_or(residuals.len());
    &residuals[..end]
}

/// Residual level below which differences are rounding noise.
fn rounding_floor(value: &ValueField) -> f64 {
    let scale = value.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    1e3 * f64::EPSILON * scale
}

fn max_pointwise_norm(c: &ControlField) -> f64 {
    c.data()
        .chunks(c.dim().max(1))
        .map(|a| a.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

fn initial_control(model: &GameModel, cfg: &PicardConfig) -> Result<ControlField> {
    match &cfg.initial_control {
        Some(c) => {
            if c.states() != model.num_states() || c.dim() != model.d() - 1 {
                return Err(Error::DimensionMismatch("initial control does not fit the model".into()));
            }
            Ok(if c.grid() == &cfg.grid { c.clone() } else { c.resample(cfg.grid) })
        }
        None => Ok(ControlField::zeros(cfg.grid, model.num_states(), model.d() - 1)),
    }
}

/// Runs the (weighted) Picard iteration until the value residual drops below
/// `tol` or `max_iter` solves have been made.
pub fn picard_run(model: &GameModel, cfg: &PicardConfig) -> Result<PicardReport> {
    cfg.validate()?;
    let start = Instant::now();
    let c_a = model.compute_bounds().c_a;
    let mut beta = initial_control(model, cfg)?;
    let mut max_norm = max_pointwise_norm(&beta);
    let mut residuals = Vec::new();
    let mut exploit = Vec::new();
    let mut prev: Option<ValueField> = None;
    let mut last = None;

    for n in 1..=cfg.max_iter {
        let (alpha, value) = best_response(model, &beta, &cfg.grid, &cfg.ode)?;
        if let Some(p) = &prev {
            let r = field_distance(&value, p)?;
            log::debug!("picard iteration {n}: residual {r:e}");
            residuals.push(r);
        }
        beta = beta.mix(&alpha, cfg.rho)?;
        max_norm = max_norm.max(max_pointwise_norm(&beta));
        if cfg.track_exploitability {
            exploit.push(exploitability(model, &beta, &cfg.grid, &cfg.ode)?.epsilon);
        }
        prev = Some(value.clone());
        last = Some((alpha, value));
        if residuals.last().is_some_and(|&r| r < cfg.tol) {
            break;
        }
    }
    if max_norm > c_a {
        log::warn!("control norm {max_norm} exceeds the a-priori bound c_a = {c_a}");
    }

    let (best, value) = last.expect("max_iter >= 1");
    let converged = residuals.last().is_some_and(|&r| r < cfg.tol);
    let rate_fit = fit_rate(pre_floor(&residuals, rounding_floor(&value))).ok();
    Ok(PicardReport {
        iterations_run: residuals.len() + 1,
        residuals,
        final_value: value,
        final_control: beta,
        best_response: best,
        rate_fit,
        converged,
        elapsed_secs: start.elapsed().as_secs_f64(),
        max_control_norm: max_norm,
        c_a,
        exploitability: exploit,
    })
}

/// Runs the error-corrupted iteration next to the clean one, both from the
/// same `beta^(0)` and for exactly `cfg.max_iter` iterations.
///
/// Returns the corrupted run's report and `sup_t |beta_hat^(n)(t) - beta^(n)(t)|_2^2`
/// for every `n`.
pub fn picard_run_noisy(model: &GameModel, cfg: &PicardConfig, noise: &NoiseConfig) -> Result<(PicardReport, Vec<f64>)> {
    cfg.validate()?;
    if !(noise.delta.is_finite() && noise.delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be nonnegative, got {}", noise.delta)));
    }
    let start = Instant::now();
    let c_a = model.compute_bounds().c_a;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut clean = initial_control(model, cfg)?;
    let mut noisy = clean.clone();
    let mut eps = vec![0.0; noisy.data().len()];
    let mut residuals = Vec::new();
    let mut deviations = Vec::with_capacity(cfg.max_iter);
    let mut max_norm = max_pointwise_norm(&noisy);
    let mut prev: Option<ValueField> = None;
    let mut last = None;

    for _ in 0..cfg.max_iter {
        let (alpha, _) = best_response(model, &clean, &cfg.grid, &cfg.ode)?;
        clean = clean.mix(&alpha, cfg.rho)?;

        let (alpha_hat, value_hat) = best_response(model, &noisy, &cfg.grid, &cfg.ode)?;
        for e in eps.iter_mut() {
            *e = noise.delta * rng.gen::<f64>();
        }
        noisy = noisy.mix(&alpha_hat.add(&eps)?, cfg.rho)?;
        max_norm = max_norm.max(max_pointwise_norm(&noisy));

        deviations.push(control_sup_sq_distance(&noisy, &clean));
        if let Some(p) = &prev {
            residuals.push(field_distance(&value_hat, p)?);
        }
        prev = Some(value_hat.clone());
        last = Some((alpha_hat, value_hat));
    }

    let (best, value) = last.expect("max_iter >= 1");
    let converged = residuals.last().is_some_and(|&r| r < cfg.tol);
    let rate_fit = fit_rate(pre_floor(&residuals, rounding_floor(&value))).ok();
    let report = PicardReport {
        iterations_run: cfg.max_iter,
        residuals,
        final_value: value,
        final_control: noisy,
        best_response: best,
        rate_fit,
        converged,
        elapsed_secs: start.elapsed().as_secs_f64(),
        max_control_norm: max_norm,
        c_a,
        exploitability: Vec::new(),
    };
    Ok((report, deviations))
}

/// `sup_t |a(t) - b(t)|_2^2` over grid nodes.
fn control_sup_sq_distance(a: &ControlField, b: &ControlField) -> f64 {
    (0..a.grid().num_nodes())
        .map(|k| {
            a.node(k)
                .iter()
                .zip(b.node(k))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

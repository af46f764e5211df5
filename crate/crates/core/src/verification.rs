//! Field norms, exploitability certificates and pipeline comparisons.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game_model::GameModel;
use crate::grid::{ControlField, TimeGrid, ValueField};
use crate::ode::{evaluate_policy, solve_hjb, solve_nll_direct, DirectSolution, OdeConfig};
use crate::picard::{picard_run, PicardConfig, PicardReport};
use crate::presets::slice_observable;

/// Anything stored node by node on a time grid.
pub trait GridField {
    fn time_grid(&self) -> &TimeGrid;
    /// All entries at node `k` (every state, every component).
    fn node_entries(&self, k: usize) -> &[f64];
}

impl GridField for ValueField {
    fn time_grid(&self) -> &TimeGrid {
        self.grid()
    }
    fn node_entries(&self, k: usize) -> &[f64] {
        self.node(k)
    }
}

impl GridField for ControlField {
    fn time_grid(&self) -> &TimeGrid {
        self.grid()
    }
    fn node_entries(&self, k: usize) -> &[f64] {
        self.node(k)
    }
}

/// Euclidean norm over all states at node `k`.
pub fn field_norm<F: GridField + ?Sized>(psi: &F, k: usize) -> f64 {
    psi.node_entries(k).iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest node norm.
pub fn sup_norm<F: GridField + ?Sized>(psi: &F) -> f64 {
    (0..psi.time_grid().num_nodes())
        .map(|k| field_norm(psi, k))
        .fold(0.0, f64::max)
}

/// `sup_t |a(t) - b(t)|_2` for fields on the same grid.
pub fn field_distance<F: GridField + ?Sized>(a: &F, b: &F) -> Result<f64> {
    if a.time_grid() != b.time_grid() {
        return Err(Error::DimensionMismatch("fields live on different grids".into()));
    }
    let mut sup = 0.0f64;
    for k in 0..a.time_grid().num_nodes() {
        let (x, y) = (a.node_entries(k), b.node_entries(k));
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch(format!("node sizes {} and {}", x.len(), y.len())));
        }
        let s: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
        sup = sup.max(s.sqrt());
    }
    Ok(sup)
}

/// Largest entrywise difference.
pub fn max_abs_difference<F: GridField + ?Sized>(a: &F, b: &F) -> Result<f64> {
    if a.time_grid() != b.time_grid() {
        return Err(Error::DimensionMismatch("fields live on different grids".into()));
    }
    let mut m = 0.0f64;
    for k in 0..a.time_grid().num_nodes() {
        let (x, y) = (a.node_entries(k), b.node_entries(k));
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch(format!("node sizes {} and {}", x.len(), y.len())));
        }
        m = x.iter().zip(y).fold(m, |m, (p, q)| m.max((p - q).abs()));
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgmaxState {
    pub t: f64,
    pub x: usize,
    pub counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumCertificate {
    /// Exploitability, clamped at 0.
    pub epsilon: f64,
    /// Unclamped maximum of `J(beta; beta) - v^beta`.
    pub raw: f64,
    pub argmax: ArgmaxState,
    pub grid: TimeGrid,
    pub rtol: f64,
    pub atol: f64,
}

/// Largest gain from deviating unilaterally from `beta`, over grid nodes and states.
pub fn exploitability(
    model: &GameModel,
    beta: &ControlField,
    grid: &TimeGrid,
    cfg: &OdeConfig,
) -> Result<EquilibriumCertificate> {
    let j = evaluate_policy(model, beta, beta, grid, cfg)?;
    let v = solve_hjb(model, beta, grid, cfg)?;
    let states = model.num_states();
    let mut raw = f64::NEG_INFINITY;
    let mut at = (0, 0);
    for (i, (a, b)) in j.data().iter().zip(v.data()).enumerate() {
        if a - b > raw {
            raw = a - b;
            at = (i / states, i % states);
        }
    }
    if raw < 0.0 {
        log::debug!("exploitability {raw:e} below zero, reported as 0");
    }
    let (x, mu) = model.table().split(at.1);
    Ok(EquilibriumCertificate {
        epsilon: raw.max(0.0),
        raw,
        argmax: ArgmaxState {
            t: grid.node(at.0),
            x,
            counts: model.table().counts(mu).to_vec(),
        },
        grid: *grid,
        rtol: cfg.rtol,
        atol: cfg.atol,
    })
}

#[derive(Debug, Clone)]
pub struct PipelineComparison {
    pub picard: PicardReport,
    pub direct: DirectSolution,
    /// `sup_t |v_picard(t) - v_direct(t)|_2`.
    pub value_gap: f64,
    /// Largest entrywise value difference.
    pub value_max_gap: f64,
    pub control_gap: f64,
    /// Slices `(p, z)` at `t = 0` for two-state models.
    pub slice_picard: Option<Vec<(f64, f64)>>,
    pub slice_direct: Option<Vec<(f64, f64)>>,
    /// `max_p |z_picard(p) - z_direct(p)|`.
    pub slice_gap: Option<f64>,
    /// Instability diagnostic of the direct solve.
    pub unstable: bool,
}

/// Runs the Picard iteration and the direct coupled solve on the same grid.
pub fn compare_pipelines(model: &GameModel, picard: &PicardConfig) -> Result<PipelineComparison> {
    let report = picard_run(model, picard)?;
    let direct = solve_nll_direct(model, &picard.grid, &picard.ode)?;
    let value_gap = field_distance(&report.final_value, &direct.value)?;
    let value_max_gap = max_abs_difference(&report.final_value, &direct.value)?;
    let control_gap = field_distance(&report.best_response, &direct.control)?;
    let (slice_picard, slice_direct, slice_gap) = if model.d() == 2 {
        let a = slice_observable(model, &report.final_value, 0)?;
        let b = slice_observable(model, &direct.value, 0)?;
        let gap = a.iter().zip(&b).fold(0.0f64, |m, (p, q)| m.max((p.1 - q.1).abs()));
        (Some(a), Some(b), Some(gap))
    } else {
        (None, None, None)
    };
    Ok(PipelineComparison {
        unstable: direct.unstable,
        picard: report,
        direct,
        value_gap,
        value_max_gap,
        control_gap,
        slice_picard,
        slice_direct,
        slice_gap,
    })
}

//! Uniform time grids and the value/control fields stored on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nodes `t_k = k T / M`, `k = 0..=M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    intervals: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, intervals: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        if intervals == 0 {
            return Err(Error::InvalidArgument("grid needs at least one interval".into()));
        }
        Ok(TimeGrid { horizon, intervals })
    }

    /// Grid with spacing as close as possible to `dt` (at least one interval).
    pub fn with_step(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        Self::new(horizon, ((horizon / dt).round() as usize).max(1))
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn num_nodes(&self) -> usize {
        self.intervals + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.intervals as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k == self.intervals {
            self.horizon
        } else {
            k as f64 * self.horizon / self.intervals as f64
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.num_nodes()).map(|k| self.node(k))
    }

    /// Interval index `k` and weight `theta` with `t = (1-theta) t_k + theta t_{k+1}`.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let pos = (t / self.dt()).clamp(0.0, self.intervals as f64);
        let k = (pos.floor() as usize).min(self.intervals - 1);
        (k, (pos - k as f64).clamp(0.0, 1.0))
    }

    /// Grid with `factor` times as many intervals.
    pub fn refine(&self, factor: usize) -> Self {
        TimeGrid {
            horizon: self.horizon,
            intervals: self.intervals * factor.max(1),
        }
    }
}

/// Real values on `grid x joint states`, node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    grid: TimeGrid,
    states: usize,
    data: Vec<f64>,
}

impl ValueField {
    pub fn zeros(grid: TimeGrid, states: usize) -> Self {
        ValueField {
            grid,
            states,
            data: vec![0.0; grid.num_nodes() * states],
        }
    }

    pub fn from_vec(grid: TimeGrid, states: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.num_nodes() * states {
            return Err(Error::DimensionMismatch(format!(
                "value data has {} entries, expected {}",
                data.len(),
                grid.num_nodes() * states
            )));
        }
        Ok(ValueField { grid, states, data })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.data[k * self.states..(k + 1) * self.states]
    }

    pub fn node_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.states..(k + 1) * self.states]
    }

    #[inline]
    pub fn get(&self, k: usize, flat: usize) -> f64 {
        self.data[k * self.states + flat]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Linear interpolation in time at one state.
    pub fn eval(&self, t: f64, flat: usize) -> f64 {
        let (k, th) = self.grid.locate(t);
        (1.0 - th) * self.get(k, flat) + th * self.get(k + 1, flat)
    }

    /// Keeps every `factor`-th node (inverse of solving on a refined grid).
    pub fn restrict(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.grid.intervals() % factor != 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot restrict {} intervals by {factor}",
                self.grid.intervals()
            )));
        }
        let grid = TimeGrid::new(self.grid.horizon(), self.grid.intervals() / factor)?;
        let mut data = Vec::with_capacity(grid.num_nodes() * self.states);
        for k in 0..grid.num_nodes() {
            data.extend_from_slice(self.node(k * factor));
        }
        Ok(ValueField {
            grid,
            states: self.states,
            data,
        })
    }
}

/// Nonnegative packed rate vectors on `grid x joint states`, linear in time.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    grid: TimeGrid,
    states: usize,
    dim: usize,
    data: Vec<f64>,
}

impl ControlField {
    pub fn zeros(grid: TimeGrid, states: usize, dim: usize) -> Self {
        ControlField {
            grid,
            states,
            dim,
            data: vec![0.0; grid.num_nodes() * states * dim],
        }
    }

    pub fn constant(grid: TimeGrid, states: usize, dim: usize, value: f64) -> Result<Self> {
        let mut c = Self::zeros(grid, states, dim);
        c.data.fill(value);
        c.validate()?;
        Ok(c)
    }

    pub fn from_vec(grid: TimeGrid, states: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.num_nodes() * states * dim {
            return Err(Error::DimensionMismatch(format!(
                "control data has {} entries, expected {}",
                data.len(),
                grid.num_nodes() * states * dim
            )));
        }
        let c = ControlField {
            grid,
            states,
            dim,
            data,
        };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        match self.data.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            None => Ok(()),
            Some(i) => Err(Error::InvalidArgument(format!(
                "control entry {i} is {} (must be finite and nonnegative)",
                self.data[i]
            ))),
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn states(&self) -> usize {
        self.states
    }

    /// Length of each rate vector, `d - 1`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Packed rates of every state at node `k`.
    pub fn node(&self, k: usize) -> &[f64] {
        let w = self.states * self.dim;
        &self.data[k * w..(k + 1) * w]
    }

    pub fn node_mut(&mut self, k: usize) -> &mut [f64] {
        let w = self.states * self.dim;
        &mut self.data[k * w..(k + 1) * w]
    }

    pub fn at(&self, k: usize, flat: usize) -> &[f64] {
        let base = (k * self.states + flat) * self.dim;
        &self.data[base..base + self.dim]
    }

    /// Rates of every state at time `t`, written into `out`.
    pub fn eval_all(&self, t: f64, out: &mut [f64]) {
        let (k, th) = self.grid.locate(t);
        let (a, b) = (self.node(k), self.node(k + 1));
        for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
            *o = ((1.0 - th) * x + th * y).max(0.0);
        }
    }

    /// Rates of one state at time `t`.
    pub fn eval_state(&self, t: f64, flat: usize, out: &mut [f64]) {
        let (k, th) = self.grid.locate(t);
        let (a, b) = (self.at(k, flat), self.at(k + 1, flat));
        for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
            *o = ((1.0 - th) * x + th * y).max(0.0);
        }
    }

    /// Convex combination `rho * self + (1 - rho) * other`, node by node.
    pub fn mix(&self, other: &ControlField, rho: f64) -> Result<ControlField> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (rho * a + (1.0 - rho) * b).max(0.0))
            .collect();
        Ok(ControlField {
            grid: self.grid,
            states: self.states,
            dim: self.dim,
            data,
        })
    }

    /// Adds `noise` entrywise (same layout as the data).
    pub fn add(&self, noise: &[f64]) -> Result<ControlField> {
        if noise.len() != self.data.len() {
            return Err(Error::DimensionMismatch("noise length".into()));
        }
        let data = self.data.iter().zip(noise).map(|(a, e)| a + e).collect();
        ControlField::from_vec(self.grid, self.states, self.dim, data)
    }

    pub fn check_same_shape(&self, other: &ControlField) -> Result<()> {
        if self.grid != other.grid || self.states != other.states || self.dim != other.dim {
            return Err(Error::DimensionMismatch(format!(
                "control shapes differ: ({:?}, {}, {}) vs ({:?}, {}, {})",
                self.grid, self.states, self.dim, other.grid, other.states, other.dim
            )));
        }
        Ok(())
    }

    /// Samples this control on another grid of the same horizon.
    pub fn resample(&self, grid: TimeGrid) -> ControlField {
        let w = self.states * self.dim;
        let mut data = vec![0.0; grid.num_nodes() * w];
        for (k, chunk) in data.chunks_exact_mut(w).enumerate() {
            self.eval_all(grid.node(k), chunk);
        }
        ControlField {
            grid,
            states: self.states,
            dim: self.dim,
            data,
        }
    }
}

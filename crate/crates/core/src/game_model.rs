//! Game data: rates, costs, the Hamiltonian and its minimizer, and the two
//! infinitesimal generators acting on functions of the joint state.
//!
//! Rate vectors are packed into `d - 1` slots. For a player in state `x`, the
//! rate towards `y < x` sits in slot `y` and the rate towards `y > x` in slot
//! `y - 1` (0-based). [`slot`] and [`destination`] are the only places that
//! encode this mapping.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::state_space::SimplexTable;

/// Packed slot holding the rate `x -> y`.
#[inline]
pub fn slot(x: usize, y: usize) -> usize {
    debug_assert_ne!(x, y);
    if y < x {
        y
    } else {
        y - 1
    }
}

/// Destination state stored in packed slot `k` of a player in state `x`.
#[inline]
pub fn destination(x: usize, k: usize) -> usize {
    if k < x {
        k
    } else {
        k + 1
    }
}

/// `(from, to, counts) -> rate`.
pub type RateFn = Arc<dyn Fn(usize, usize, &[u32]) -> f64 + Send + Sync>;
/// `(x, counts) -> value`.
pub type StateFn = Arc<dyn Fn(usize, &[u32]) -> f64 + Send + Sync>;

/// A strongly convex running cost supplied together with its minimizer.
pub trait CustomCost: Send + Sync {
    /// `l(x, mu, a)` for a packed rate vector `a`.
    fn running(&self, x: usize, counts: &[u32], a: &[f64]) -> f64;
    /// `argmin_{a >= 0} l(x, mu, a) + sum_k a_k lambda1_k p_k`, written into `out`.
    fn minimizer(&self, x: usize, counts: &[u32], lambda1: &[f64], p: &[f64], out: &mut [f64]);
    /// Strong convexity constant of `a -> l(x, mu, a)`.
    fn convexity(&self) -> f64;
}

#[derive(Clone)]
pub enum CostModel {
    /// `l(x, mu, a) = |a|^2 / 2 + f(x, mu)` with `f` the model's state cost.
    QuadraticPlusState,
    Custom(Arc<dyn CustomCost>),
}

impl fmt::Debug for CostModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostModel::QuadraticPlusState => write!(f, "QuadraticPlusState"),
            CostModel::Custom(_) => write!(f, "Custom"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    /// Upper bound on every value function.
    pub c_v: f64,
    /// Upper bound on the Euclidean norm of every best response.
    pub c_a: f64,
}

#[derive(Clone)]
struct Callbacks {
    lambda0: RateFn,
    lambda1: RateFn,
    state_cost: StateFn,
    terminal: StateFn,
}

#[derive(Clone)]
struct Dense {
    lambda0: Vec<f64>,
    lambda1: Vec<f64>,
    state_cost: Vec<f64>,
    terminal: Vec<f64>,
}

/// One term of the population generator at a fixed joint state:
/// an untagged player in `z` (seeing `mu + e_{x,z}`) jumps to `y`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PopulationTerm {
    /// `n^mu_z`
    pub weight: f64,
    /// Joint index of `(z, mu + e_{x,z})`, where the jumping player's rates live.
    pub source: usize,
    /// Packed slot of `y` relative to `z`.
    pub slot: usize,
    /// Joint index of `(x, mu + e_{y,z})`.
    pub target: usize,
}

/// Flattened list of population-generator terms for every joint state.
#[derive(Debug, Clone)]
pub(crate) struct PopulationStencil {
    offsets: Vec<usize>,
    terms: Vec<PopulationTerm>,
}

impl PopulationStencil {
    fn build(table: &SimplexTable) -> Self {
        let d = table.d();
        let mut offsets = Vec::with_capacity(table.num_states() + 1);
        let mut terms = Vec::new();
        offsets.push(0);
        for x in 0..d {
            for mu in 0..table.len() {
                for z in 0..d {
                    let n_z = table.count(mu, z);
                    if n_z == 0 {
                        continue;
                    }
                    let seen = table
                        .shift_index(mu, x, z)
                        .expect("n_z > 0 makes the shift legal");
                    for y in (0..d).filter(|&y| y != z) {
                        let moved = table.shift_index(mu, y, z).expect("n_z > 0");
                        terms.push(PopulationTerm {
                            weight: n_z as f64,
                            source: table.joint(z, seen),
                            slot: slot(z, y),
                            target: table.joint(x, moved),
                        });
                    }
                }
                offsets.push(terms.len());
            }
        }
        PopulationStencil { offsets, terms }
    }

    #[inline]
    pub fn terms(&self, flat: usize) -> &[PopulationTerm] {
        &self.terms[self.offsets[flat]..self.offsets[flat + 1]]
    }
}

/// Symmetric `(N+1)`-player game on `d` states over `[0, T]`.
#[derive(Clone)]
pub struct GameModel {
    name: String,
    table: Arc<SimplexTable>,
    horizon: f64,
    cost: CostModel,
    callbacks: Callbacks,
    dense: Option<Arc<Dense>>,
    stencil: Arc<PopulationStencil>,
    labels: Vec<String>,
}

impl fmt::Debug for GameModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GameModel")
            .field("name", &self.name)
            .field("d", &self.d())
            .field("n", &self.n())
            .field("horizon", &self.horizon)
            .field("cost", &self.cost)
            .field("memoized", &self.dense.is_some())
            .finish()
    }
}

pub struct GameModelBuilder {
    name: String,
    d: usize,
    n: u32,
    horizon: f64,
    lambda0: RateFn,
    lambda1: RateFn,
    state_cost: StateFn,
    terminal: StateFn,
    cost: CostModel,
    labels: Option<Vec<String>>,
    memo_cap: usize,
}

impl GameModelBuilder {
    pub fn name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn lambda0(mut self, f: impl Fn(usize, usize, &[u32]) -> f64 + Send + Sync + 'static) -> Self {
        self.lambda0 = Arc::new(f);
        self
    }

    pub fn lambda1(mut self, f: impl Fn(usize, usize, &[u32]) -> f64 + Send + Sync + 'static) -> Self {
        self.lambda1 = Arc::new(f);
        self
    }

    pub fn state_cost(mut self, f: impl Fn(usize, &[u32]) -> f64 + Send + Sync + 'static) -> Self {
        self.state_cost = Arc::new(f);
        self
    }

    pub fn terminal_cost(mut self, f: impl Fn(usize, &[u32]) -> f64 + Send + Sync + 'static) -> Self {
        self.terminal = Arc::new(f);
        self
    }

    pub fn custom_cost(mut self, cost: Arc<dyn CustomCost>) -> Self {
        self.cost = CostModel::Custom(cost);
        self
    }

    pub fn labels(mut self, labels: Vec<String>) -> Self {
        self.labels = Some(labels);
        self
    }

    /// Largest number of table entries memoized densely (default `1e7`).
    pub fn memo_cap(mut self, cap: usize) -> Self {
        self.memo_cap = cap;
        self
    }

    pub fn build(self) -> Result<GameModel> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        let table = Arc::new(SimplexTable::new(self.d, self.n)?);
        let d = self.d;
        let labels = match self.labels {
            Some(l) if l.len() == d => l,
            Some(l) => {
                return Err(Error::InvalidArgument(format!(
                    "{} labels for {d} states",
                    l.len()
                )))
            }
            None => (1..=d).map(|i| i.to_string()).collect(),
        };
        let callbacks = Callbacks {
            lambda0: self.lambda0,
            lambda1: self.lambda1,
            state_cost: self.state_cost,
            terminal: self.terminal,
        };

        let states = table.num_states();
        let mut lambda0 = Vec::with_capacity(states * (d - 1));
        let mut lambda1 = Vec::with_capacity(states * (d - 1));
        let mut state_cost = Vec::with_capacity(states);
        let mut terminal = Vec::with_capacity(states);
        for flat in 0..states {
            let (x, mu) = table.split(flat);
            let counts = table.counts(mu);
            for k in 0..d - 1 {
                let y = destination(x, k);
                let r0 = (callbacks.lambda0)(x, y, counts);
                let r1 = (callbacks.lambda1)(x, y, counts);
                if !(r0.is_finite() && r0 >= 0.0 && r1.is_finite() && r1 >= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "rates {x}->{y} at {counts:?} must be finite and nonnegative (got {r0}, {r1})"
                    )));
                }
                lambda0.push(r0);
                lambda1.push(r1);
            }
            let f = (callbacks.state_cost)(x, counts);
            let g = (callbacks.terminal)(x, counts);
            if !(f.is_finite() && f >= 0.0 && g.is_finite() && g >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "costs at x={x}, {counts:?} must be finite and nonnegative (got f={f}, g={g})"
                )));
            }
            state_cost.push(f);
            terminal.push(g);
        }
        let dense = (states * (d - 1) <= self.memo_cap).then(|| {
            Arc::new(Dense {
                lambda0,
                lambda1,
                state_cost,
                terminal,
            })
        });

        let stencil = Arc::new(PopulationStencil::build(&table));
        Ok(GameModel {
            name: self.name,
            table,
            horizon: self.horizon,
            cost: self.cost,
            callbacks,
            dense,
            stencil,
            labels,
        })
    }
}

impl GameModel {
    /// Starts a model with zero rates and zero costs.
    pub fn builder(d: usize, n: u32, horizon: f64) -> GameModelBuilder {
        GameModelBuilder {
            name: "custom".into(),
            d,
            n,
            horizon,
            lambda0: Arc::new(|_, _, _| 0.0),
            lambda1: Arc::new(|_, _, _| 0.0),
            state_cost: Arc::new(|_, _| 0.0),
            terminal: Arc::new(|_, _| 0.0),
            cost: CostModel::QuadraticPlusState,
            labels: None,
            memo_cap: 10_000_000,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn d(&self) -> usize {
        self.table.d()
    }

    pub fn n(&self) -> u32 {
        self.table.n()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn table(&self) -> &SimplexTable {
        &self.table
    }

    pub fn num_states(&self) -> usize {
        self.table.num_states()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn cost_model(&self) -> &CostModel {
        &self.cost
    }

    pub fn is_memoized(&self) -> bool {
        self.dense.is_some()
    }

    /// Same model with a different horizon.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        let mut m = self.clone();
        m.horizon = horizon;
        Ok(m)
    }

    /// Strong convexity constant of the running cost.
    pub fn convexity(&self) -> f64 {
        match &self.cost {
            CostModel::QuadraticPlusState => 1.0,
            CostModel::Custom(c) => c.convexity(),
        }
    }

    /// Uncontrolled rate in packed slot `k` at joint state `flat`.
    #[inline]
    pub fn lambda0(&self, flat: usize, k: usize) -> f64 {
        let d = self.d();
        match &self.dense {
            Some(t) => t.lambda0[flat * (d - 1) + k],
            None => {
                let (x, mu) = self.table.split(flat);
                (self.callbacks.lambda0)(x, destination(x, k), self.table.counts(mu))
            }
        }
    }

    /// Control gain in packed slot `k` at joint state `flat`.
    #[inline]
    pub fn lambda1(&self, flat: usize, k: usize) -> f64 {
        let d = self.d();
        match &self.dense {
            Some(t) => t.lambda1[flat * (d - 1) + k],
            None => {
                let (x, mu) = self.table.split(flat);
                (self.callbacks.lambda1)(x, destination(x, k), self.table.counts(mu))
            }
        }
    }

    /// State part `f(x, mu)` of the running cost.
    #[inline]
    pub fn state_cost(&self, flat: usize) -> f64 {
        match &self.dense {
            Some(t) => t.state_cost[flat],
            None => {
                let (x, mu) = self.table.split(flat);
                (self.callbacks.state_cost)(x, self.table.counts(mu))
            }
        }
    }

    /// Terminal cost `g(x, mu)`.
    #[inline]
    pub fn terminal_cost(&self, flat: usize) -> f64 {
        match &self.dense {
            Some(t) => t.terminal[flat],
            None => {
                let (x, mu) = self.table.split(flat);
                (self.callbacks.terminal)(x, self.table.counts(mu))
            }
        }
    }

    /// Running cost `l(x, mu, a)`.
    pub fn running_cost(&self, flat: usize, a: &[f64]) -> f64 {
        match &self.cost {
            CostModel::QuadraticPlusState => {
                0.5 * a.iter().map(|v| v * v).sum::<f64>() + self.state_cost(flat)
            }
            CostModel::Custom(c) => {
                let (x, mu) = self.table.split(flat);
                c.running(x, self.table.counts(mu), a)
            }
        }
    }

    /// Gradient of `a -> l(x, mu, a)`; central differences for custom costs.
    pub fn running_cost_grad(&self, flat: usize, a: &[f64], out: &mut [f64]) {
        match &self.cost {
            CostModel::QuadraticPlusState => out.copy_from_slice(a),
            CostModel::Custom(c) => {
                let (x, mu) = self.table.split(flat);
                let counts = self.table.counts(mu);
                let mut p = a.to_vec();
                for (k, o) in out.iter_mut().enumerate() {
                    let h = 1e-6 * a[k].abs().max(1.0);
                    p[k] = a[k] + h;
                    let up = c.running(x, counts, &p);
                    p[k] = (a[k] - h).max(0.0);
                    let down = c.running(x, counts, &p);
                    *o = (up - down) / (a[k] + h - p[k]);
                    p[k] = a[k];
                }
            }
        }
    }

    /// `Delta_x v = (v(y, mu) - v(x, mu))_{y != x}` for a field `v` over joint states.
    pub fn delta_x(&self, v: &[f64], flat: usize, out: &mut [f64]) {
        let (x, mu) = self.table.split(flat);
        let here = v[flat];
        for (k, o) in out.iter_mut().enumerate() {
            *o = v[self.table.joint(destination(x, k), mu)] - here;
        }
    }

    /// Minimizer of `a -> l(x, mu, a) + sum_k lambda1_k a_k p_k` over `a >= 0`.
    pub fn minimizer(&self, flat: usize, p: &[f64], out: &mut [f64]) {
        match &self.cost {
            CostModel::QuadraticPlusState => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = (-self.lambda1(flat, k) * p[k]).max(0.0);
                }
            }
            CostModel::Custom(c) => {
                let (x, mu) = self.table.split(flat);
                let gains: Vec<f64> = (0..self.d() - 1).map(|k| self.lambda1(flat, k)).collect();
                c.minimizer(x, self.table.counts(mu), &gains, p, out);
            }
        }
    }

    /// `H(x, mu, p)`, the infimum over nonnegative rates.
    pub fn hamiltonian(&self, flat: usize, p: &[f64]) -> f64 {
        match &self.cost {
            CostModel::QuadraticPlusState => {
                let mut h = self.state_cost(flat);
                for (k, &pk) in p.iter().enumerate() {
                    let a = (-self.lambda1(flat, k) * pk).max(0.0);
                    h += self.lambda0(flat, k) * pk - 0.5 * a * a;
                }
                h
            }
            CostModel::Custom(_) => {
                let mut a = vec![0.0; p.len()];
                self.minimizer(flat, p, &mut a);
                self.pre_hamiltonian(flat, p, &a)
            }
        }
    }

    /// `l(x, mu, a) + sum_k (lambda0_k + lambda1_k a_k) p_k` for a given `a`.
    pub fn pre_hamiltonian(&self, flat: usize, p: &[f64], a: &[f64]) -> f64 {
        let mut h = self.running_cost(flat, a);
        for (k, &pk) in p.iter().enumerate() {
            h += (self.lambda0(flat, k) + self.lambda1(flat, k) * a[k]) * pk;
        }
        h
    }

    /// Tagged generator `L^alpha_x v` at `flat`; `alpha` is packed per joint state.
    pub fn tagged_generator(&self, v: &[f64], alpha: &[f64], flat: usize) -> f64 {
        let d = self.d();
        let (x, mu) = self.table.split(flat);
        let here = v[flat];
        (0..d - 1)
            .map(|k| {
                let rate = self.lambda0(flat, k) + self.lambda1(flat, k) * alpha[flat * (d - 1) + k];
                rate * (v[self.table.joint(destination(x, k), mu)] - here)
            })
            .sum()
    }

    /// Population generator `L^beta_mu v` at `flat`; `beta` is packed per joint state.
    pub fn population_generator(&self, v: &[f64], beta: &[f64], flat: usize) -> f64 {
        let d = self.d();
        let here = v[flat];
        self.stencil
            .terms(flat)
            .iter()
            .map(|t| {
                let rate = self.lambda0(t.source, t.slot)
                    + self.lambda1(t.source, t.slot) * beta[t.source * (d - 1) + t.slot];
                t.weight * rate * (v[t.target] - here)
            })
            .sum()
    }

    /// `H(x, mu, Delta_x v)` read straight from a field over joint states.
    #[inline]
    pub(crate) fn hamiltonian_of_field(&self, v: &[f64], flat: usize) -> f64 {
        let d = self.d();
        let (x, mu) = self.table.split(flat);
        let here = v[flat];
        match &self.cost {
            CostModel::QuadraticPlusState => {
                let mut h = self.state_cost(flat);
                for k in 0..d - 1 {
                    let p = v[self.table.joint(destination(x, k), mu)] - here;
                    let a = (-self.lambda1(flat, k) * p).max(0.0);
                    h += self.lambda0(flat, k) * p - 0.5 * a * a;
                }
                h
            }
            CostModel::Custom(_) => {
                let mut p = vec![0.0; d - 1];
                self.delta_x(v, flat, &mut p);
                self.hamiltonian(flat, &p)
            }
        }
    }

    /// `alpha_hat(x, mu, Delta_x v)` written into `out`.
    #[inline]
    pub(crate) fn best_response_of_field(&self, v: &[f64], flat: usize, out: &mut [f64]) {
        let (x, mu) = self.table.split(flat);
        let here = v[flat];
        match &self.cost {
            CostModel::QuadraticPlusState => {
                for (k, o) in out.iter_mut().enumerate() {
                    let p = v[self.table.joint(destination(x, k), mu)] - here;
                    *o = (-self.lambda1(flat, k) * p).max(0.0);
                }
            }
            CostModel::Custom(_) => {
                let mut p = vec![0.0; out.len()];
                self.delta_x(v, flat, &mut p);
                self.minimizer(flat, &p, out);
            }
        }
    }

    /// Uniform bounds `c_v` on value functions and `c_a` on best responses.
    pub fn compute_bounds(&self) -> Bounds {
        let d = self.d();
        let zero = vec![0.0; d - 1];
        let mut a0 = vec![0.0; d - 1];
        let mut c_v = 0.0f64;
        let mut a0_max = 0.0f64;
        let mut lambda1_max = 0.0f64;
        for flat in 0..self.num_states() {
            c_v = c_v.max(self.horizon * self.running_cost(flat, &zero) + self.terminal_cost(flat));
            self.minimizer(flat, &zero, &mut a0);
            a0_max = a0_max.max(a0.iter().map(|v| v * v).sum::<f64>().sqrt());
            for k in 0..d - 1 {
                lambda1_max = lambda1_max.max(self.lambda1(flat, k));
            }
        }
        let c_a = a0_max + 2.0 * lambda1_max * c_v * ((d - 1) as f64).sqrt() / self.convexity();
        Bounds { c_v, c_a }
    }
}

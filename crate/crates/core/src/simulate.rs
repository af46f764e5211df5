//! Event-driven simulation of the tagged player and the population counts.
//!
//! A single exponential clock with the total jump rate of all `N + 1` players
//! drives the system; at each ring the jumping actor and its destination are
//! drawn in proportion to their rates. By default rates are frozen at the
//! previous event time. [`SimMode::Thinning`] samples the exact law for
//! time-varying controls.

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game_model::{destination, GameModel};
use crate::grid::{ControlField, TimeGrid};

/// A Markov feedback control `(t, x, mu) -> packed rates`.
pub trait FeedbackControl: Sync {
    /// Packed rates of a player in state `x` facing population `mu` (rank) with
    /// counts `counts`.
    fn rates(&self, t: f64, x: usize, mu: usize, counts: &[u32], out: &mut [f64]);

    /// Grid on which the control is piecewise linear in time, if any.
    fn breakpoints(&self) -> Option<TimeGrid> {
        None
    }
}

impl FeedbackControl for ControlField {
    fn rates(&self, t: f64, x: usize, mu: usize, _counts: &[u32], out: &mut [f64]) {
        let per_x = self.states() / (self.dim() + 1);
        self.eval_state(t, x * per_x + mu, out);
    }

    fn breakpoints(&self) -> Option<TimeGrid> {
        Some(*self.grid())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    /// Rates are frozen at the last event time.
    Frozen,
    /// Acceptance/rejection against a rate bound. Without an explicit `bound`
    /// both controls must be piecewise linear; the bound is then computed
    /// exactly on every grid interval.
    Thinning { bound: Option<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub mode: SimMode,
    /// Quadrature step for the running cost when the tagged control has no grid.
    pub cost_step: f64,
    /// In frozen mode, also re-evaluate rates at the nodes of a grid with at
    /// most this spacing (rates are then piecewise constant on that grid).
    pub refresh: Option<f64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            mode: SimMode::Frozen,
            cost_step: 0.01,
            refresh: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Actor {
    Tagged,
    /// An untagged player that was in the given state.
    Untagged(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub actor: Actor,
    pub from: usize,
    pub to: usize,
    /// Population rank after the event.
    pub mu_after: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LogLikTerms {
    /// Sum of `ln(rate)` over tagged jumps.
    pub jump_log_rates: f64,
    /// Integral of the tagged player's total rate over `[0, T]`.
    pub integrated_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub x0: usize,
    pub mu0: usize,
    pub events: Vec<Event>,
    pub running_cost: f64,
    pub terminal_cost: f64,
    /// `running_cost + terminal_cost`.
    pub cost: f64,
    pub loglik: LogLikTerms,
    /// Whether rates were frozen between events.
    pub frozen: bool,
    /// Extra rate refresh nodes used in frozen mode.
    pub refresh: Option<TimeGrid>,
    pub horizon: f64,
}

/// Piece of the tagged path with constant `(x, mu)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub t0: f64,
    pub t1: f64,
    pub x: usize,
    pub mu: usize,
    /// Tagged jump that ends the segment, as `(to)`.
    pub tagged_jump: Option<usize>,
}

impl TrajectoryRecord {
    /// Constant pieces of the joint state, in time order.
    pub fn segments(&self) -> Vec<Segment> {
        let mut out = Vec::with_capacity(self.events.len() + 1);
        let (mut t, mut x, mut mu) = (0.0, self.x0, self.mu0);
        for e in &self.events {
            out.push(Segment {
                t0: t,
                t1: e.time,
                x,
                mu,
                tagged_jump: matches!(e.actor, Actor::Tagged).then_some(e.to),
            });
            t = e.time;
            if e.actor == Actor::Tagged {
                x = e.to;
            }
            mu = e.mu_after;
        }
        out.push(Segment {
            t0: t,
            t1: self.horizon,
            x,
            mu,
            tagged_jump: None,
        });
        out
    }

    /// Pieces on which the simulated rates were constant (frozen mode) or the
    /// state was constant (thinning): segments split at refresh nodes.
    pub fn pieces(&self) -> Vec<Segment> {
        let segs = self.segments();
        let Some(g) = &self.refresh else {
            return segs;
        };
        let mut out = Vec::with_capacity(segs.len());
        for s in segs {
            let mut a = s.t0;
            loop {
                let b = next_node(g, a).min(s.t1);
                let last = b >= s.t1;
                out.push(Segment {
                    t0: a,
                    t1: if last { s.t1 } else { b },
                    x: s.x,
                    mu: s.mu,
                    tagged_jump: if last { s.tagged_jump } else { None },
                });
                if last {
                    break;
                }
                a = b;
            }
        }
        out
    }

    /// Joint state `(x, mu)` at each of `times` (right-continuous).
    pub fn states_at(&self, times: &[f64]) -> Vec<(usize, usize)> {
        let segs = self.segments();
        times
            .iter()
            .map(|&t| {
                let s = segs.iter().rev().find(|s| s.t0 <= t).unwrap_or(&segs[0]);
                (s.x, s.mu)
            })
            .collect()
    }
}

/// Law of the initial joint state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialDistribution {
    Deterministic { x: usize, counts: Vec<u32> },
    /// All `N + 1` players i.i.d. with these probabilities; one is tagged.
    Iid { probs: Vec<f64> },
}

impl InitialDistribution {
    pub fn uniform(d: usize) -> Self {
        InitialDistribution::Iid {
            probs: vec![1.0 / d as f64; d],
        }
    }

    pub fn validate(&self, model: &GameModel) -> Result<()> {
        match self {
            InitialDistribution::Deterministic { x, counts } => {
                if *x >= model.d() {
                    return Err(Error::InvalidArgument(format!("initial state {x} out of range")));
                }
                model.table().rank(counts)?;
            }
            InitialDistribution::Iid { probs } => {
                let ok = probs.len() == model.d()
                    && probs.iter().all(|p| p.is_finite() && *p >= 0.0)
                    && (probs.iter().sum::<f64>() - 1.0).abs() < 1e-9;
                if !ok {
                    return Err(Error::InvalidArgument(format!(
                        "initial probabilities {probs:?} must be {} nonnegative numbers summing to 1",
                        model.d()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Draws `(x, mu)`.
    pub fn sample<R: Rng>(&self, model: &GameModel, rng: &mut R) -> Result<(usize, usize)> {
        match self {
            InitialDistribution::Deterministic { x, counts } => Ok((*x, model.table().rank(counts)?)),
            InitialDistribution::Iid { probs } => {
                let draw = |rng: &mut R| {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    for (i, p) in probs.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            return i;
                        }
                    }
                    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
                };
                let x = draw(rng);
                let mut counts = vec![0u32; model.d()];
                for _ in 0..model.n() {
                    counts[draw(rng)] += 1;
                }
                Ok((x, model.table().rank(&counts)?))
            }
        }
    }

    /// Exact probabilities of every joint state with positive mass.
    pub fn weights(&self, model: &GameModel) -> Result<Vec<(usize, f64)>> {
        let table = model.table();
        match self {
            InitialDistribution::Deterministic { x, counts } => Ok(vec![(table.joint(*x, table.rank(counts)?), 1.0)]),
            InitialDistribution::Iid { probs } => {
                let n = model.n();
                let mut out = Vec::new();
                for (mu, counts) in table.iter().enumerate() {
                    // multinomial coefficient times probabilities, in logs
                    let mut lw = ln_factorial(n);
                    let mut zero = false;
                    for (c, p) in counts.iter().zip(probs) {
                        if *c > 0 {
                            if *p == 0.0 {
                                zero = true;
                                break;
                            }
                            lw += *c as f64 * p.ln() - ln_factorial(*c);
                        }
                    }
                    if zero {
                        continue;
                    }
                    for (x, p) in probs.iter().enumerate() {
                        if *p > 0.0 {
                            out.push((table.joint(x, mu), p * lw.exp()));
                        }
                    }
                }
                Ok(out)
            }
        }
    }
}

fn ln_factorial(n: u32) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Total tagged rate and total untagged rate per source state `z`.
pub fn total_rates(
    model: &GameModel,
    t: f64,
    x: usize,
    mu: usize,
    alpha: &dyn FeedbackControl,
    beta: &dyn FeedbackControl,
) -> (f64, Vec<f64>) {
    let mut s = Scratch::new(model.d());
    s.fill(model, t, x, mu, alpha, beta);
    let untagged = s.untagged.chunks(model.d() - 1).map(|r| r.iter().sum()).collect();
    (s.tagged.iter().sum(), untagged)
}

struct Scratch {
    ctrl: Vec<f64>,
    /// Tagged control at the last fill.
    alpha: Vec<f64>,
    /// Packed tagged rates.
    tagged: Vec<f64>,
    /// Per source state `z`, packed rates times `n_z`.
    untagged: Vec<f64>,
}

impl Scratch {
    fn new(d: usize) -> Self {
        Scratch {
            ctrl: vec![0.0; d - 1],
            alpha: vec![0.0; d - 1],
            tagged: vec![0.0; d - 1],
            untagged: vec![0.0; d * (d - 1)],
        }
    }

    /// Fills all rates at `(t, x, mu)` and returns the overall total.
    fn fill(
        &mut self,
        model: &GameModel,
        t: f64,
        x: usize,
        mu: usize,
        alpha: &dyn FeedbackControl,
        beta: &dyn FeedbackControl,
    ) -> f64 {
        let d = model.d();
        let table = model.table();
        let flat = table.joint(x, mu);
        alpha.rates(t, x, mu, table.counts(mu), &mut self.alpha);
        for k in 0..d - 1 {
            self.tagged[k] = model.lambda0(flat, k) + model.lambda1(flat, k) * self.alpha[k];
        }
        for z in 0..d {
            let row = &mut self.untagged[z * (d - 1)..(z + 1) * (d - 1)];
            let nz = table.count(mu, z);
            if nz == 0 {
                row.fill(0.0);
                continue;
            }
            // the untagged player in z sees the tagged player and the others
            let seen = table.shift_index(mu, x, z).expect("n_z > 0");
            let src = table.joint(z, seen);
            beta.rates(t, z, seen, table.counts(seen), &mut self.ctrl);
            for k in 0..d - 1 {
                row[k] = nz as f64 * (model.lambda0(src, k) + model.lambda1(src, k) * self.ctrl[k]);
            }
        }
        self.tagged.iter().sum::<f64>() + self.untagged.iter().sum::<f64>()
    }

    /// Picks the jump with cumulative-rate position `u` in `[0, total)`.
    fn pick(&self, d: usize, mut u: f64) -> (Actor, usize, f64) {
        for (k, &r) in self.tagged.iter().enumerate() {
            if u < r {
                return (Actor::Tagged, k, r);
            }
            u -= r;
        }
        for (i, &r) in self.untagged.iter().enumerate() {
            if u < r {
                return (Actor::Untagged(i / (d - 1)), i % (d - 1), r);
            }
            u -= r;
        }
        // rounding at the top end: last positive rate
        if let Some(i) = self.untagged.iter().rposition(|&r| r > 0.0) {
            return (Actor::Untagged(i / (d - 1)), i % (d - 1), self.untagged[i]);
        }
        let k = self.tagged.iter().rposition(|&r| r > 0.0).unwrap_or(0);
        (Actor::Tagged, k, self.tagged[k])
    }
}

/// Next node of `grid` strictly after `t`, capped at the horizon.
fn next_node(grid: &TimeGrid, t: f64) -> f64 {
    let m = grid.intervals();
    let mut k = ((t / grid.dt()).floor() as usize + 1).min(m);
    while k < m && grid.node(k) <= t {
        k += 1;
    }
    grid.node(k)
}

/// Running cost and integrated tagged rate over `[t0, t1]` at fixed `(x, mu)`,
/// by the trapezoid rule on the tagged control's grid.
fn integrate_piece(
    model: &GameModel,
    alpha: &dyn FeedbackControl,
    opts: &SimOptions,
    t0: f64,
    t1: f64,
    x: usize,
    mu: usize,
    buf: &mut [f64],
) -> (f64, f64) {
    if t1 <= t0 {
        return (0.0, 0.0);
    }
    let table = model.table();
    let flat = table.joint(x, mu);
    let counts = table.counts(mu);
    let mut at = |t: f64| {
        alpha.rates(t, x, mu, counts, buf);
        let rate: f64 = (0..buf.len())
            .map(|k| model.lambda0(flat, k) + model.lambda1(flat, k) * buf[k])
            .sum();
        (model.running_cost(flat, buf), rate)
    };
    let mut cost = 0.0;
    let mut rate = 0.0;
    let mut push = |a: f64, b: f64, fa: (f64, f64), fb: (f64, f64)| {
        cost += 0.5 * (b - a) * (fa.0 + fb.0);
        rate += 0.5 * (b - a) * (fa.1 + fb.1);
    };
    let mut s = t0;
    let mut fs = at(s);
    match alpha.breakpoints() {
        Some(g) => loop {
            let e = next_node(&g, s).min(t1);
            let fe = at(e);
            push(s, e, fs, fe);
            if e >= t1 {
                break;
            }
            s = e;
            fs = fe;
        },
        None => {
            let pieces = ((t1 - t0) / opts.cost_step).ceil().max(1.0) as usize;
            let h = (t1 - t0) / pieces as f64;
            for i in 1..=pieces {
                let e = if i == pieces { t1 } else { t0 + i as f64 * h };
                let fe = at(e);
                push(s, e, fs, fe);
                s = e;
                fs = fe;
            }
        }
    }
    (cost, rate)
}

fn check_rates(total: f64, t: f64) -> Result<()> {
    if !total.is_finite() {
        return Err(Error::Simulation(format!("non-finite total rate {total} at t = {t}")));
    }
    Ok(())
}

/// Simulates one path of `(X_t, mu_t)` on `[0, T]` from `(x0, mu0)`.
pub fn simulate_trajectory<R: Rng>(
    model: &GameModel,
    alpha: &dyn FeedbackControl,
    beta: &dyn FeedbackControl,
    x0: usize,
    mu0: usize,
    opts: &SimOptions,
    rng: &mut R,
) -> Result<TrajectoryRecord> {
    let d = model.d();
    let table = model.table();
    if x0 >= d || mu0 >= table.len() {
        return Err(Error::InvalidArgument(format!("initial state ({x0}, {mu0}) out of range")));
    }
    let horizon = model.horizon();
    let mut s = Scratch::new(d);
    let mut buf = vec![0.0; d - 1];
    let (mut t, mut x, mut mu) = (0.0, x0, mu0);
    let mut events = Vec::new();
    let mut running = 0.0;
    let mut loglik = LogLikTerms::default();

    let mut apply = |t: f64, x: &mut usize, mu: &mut usize, actor: Actor, k: usize, rate: f64, ll: &mut LogLikTerms| {
        let (from, to) = match actor {
            Actor::Tagged => {
                let to = destination(*x, k);
                ll.jump_log_rates += rate.ln();
                let from = *x;
                *x = to;
                (from, to)
            }
            Actor::Untagged(z) => {
                let to = destination(z, k);
                *mu = table.shift_index(*mu, to, z).expect("source state is occupied");
                (z, to)
            }
        };
        events.push(Event {
            time: t,
            actor,
            from,
            to,
            mu_after: *mu,
        });
    };

    let refresh = match (opts.mode, opts.refresh) {
        (SimMode::Frozen, Some(h)) => Some(TimeGrid::with_step(horizon, h).and_then(|g| {
            // never coarser than requested
            if g.dt() > h {
                TimeGrid::new(horizon, g.intervals() + 1)
            } else {
                Ok(g)
            }
        })?),
        _ => None,
    };

    match opts.mode {
        SimMode::Frozen => loop {
            let total = s.fill(model, t, x, mu, alpha, beta);
            check_rates(total, t)?;
            let tagged: f64 = s.tagged.iter().sum();
            // the control is held along with the rates
            let lcost = model.running_cost(model.table().joint(x, mu), &s.alpha);
            let tau = if total > 0.0 {
                let e: f64 = rng.sample(Open01);
                -e.ln() / total
            } else {
                f64::INFINITY
            };
            let next = t + tau;
            let cap = refresh.as_ref().map_or(horizon, |g| next_node(g, t)).min(horizon);
            if next >= cap {
                running += lcost * (cap - t);
                loglik.integrated_rate += tagged * (cap - t);
                if cap >= horizon {
                    break;
                }
                t = cap;
                continue;
            }
            running += lcost * tau;
            loglik.integrated_rate += tagged * tau;
            let u: f64 = rng.gen::<f64>() * total;
            let (actor, k, rate) = s.pick(d, u);
            apply(next, &mut x, &mut mu, actor, k, rate, &mut loglik);
            t = next;
        },
        SimMode::Thinning { bound } => {
            let grids = if bound.is_none() {
                match (alpha.breakpoints(), beta.breakpoints()) {
                    (Some(a), Some(b)) => Some((a, b)),
                    _ => {
                        return Err(Error::InvalidArgument(
                            "thinning without a rate bound needs piecewise-linear controls".into(),
                        ))
                    }
                }
            } else {
                None
            };
            let mut piece_start = 0.0;
            let mut flush = |a: f64, b: f64, x: usize, mu: usize, running: &mut f64, ll: &mut LogLikTerms| {
                let (c, r) = integrate_piece(model, alpha, opts, a, b, x, mu, &mut buf);
                *running += c;
                ll.integrated_rate += r;
            };
            while t < horizon {
                let (seg_end, lam_bar) = match (bound, grids) {
                    (Some(b), _) => (horizon, b),
                    (None, Some((ga, gb))) => {
                        let e = next_node(&ga, t).min(next_node(&gb, t)).min(horizon);
                        // rates are convex in t on the interval, so the endpoints bound them
                        let a = s.fill(model, t, x, mu, alpha, beta);
                        let b = s.fill(model, e, x, mu, alpha, beta);
                        check_rates(a.max(b), t)?;
                        (e, a.max(b) * (1.0 + 1e-12))
                    }
                    (None, None) => unreachable!(),
                };
                if lam_bar <= 0.0 {
                    t = seg_end;
                    continue;
                }
                let e: f64 = rng.sample(Open01);
                let cand = t - e.ln() / lam_bar;
                if cand >= seg_end {
                    t = seg_end;
                    continue;
                }
                t = cand;
                let total = s.fill(model, t, x, mu, alpha, beta);
                check_rates(total, t)?;
                if total > lam_bar {
                    return Err(Error::Simulation(format!(
                        "rate bound {lam_bar} exceeded by {total} at t = {t}"
                    )));
                }
                let u: f64 = rng.gen::<f64>() * lam_bar;
                if u < total {
                    let (actor, k, rate) = s.pick(d, u);
                    flush(piece_start, t, x, mu, &mut running, &mut loglik);
                    piece_start = t;
                    apply(t, &mut x, &mut mu, actor, k, rate, &mut loglik);
                }
            }
            flush(piece_start, horizon, x, mu, &mut running, &mut loglik);
        }
    }

    let terminal = model.terminal_cost(table.joint(x, mu));
    let cost = running + terminal;
    if !cost.is_finite() {
        return Err(Error::Simulation(format!("non-finite trajectory cost {cost}")));
    }
    Ok(TrajectoryRecord {
        x0,
        mu0,
        events,
        running_cost: running,
        terminal_cost: terminal,
        cost,
        loglik,
        frozen: matches!(opts.mode, SimMode::Frozen),
        refresh,
        horizon,
    })
}

/// Random stream of trajectory `index` under `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Simulates `m` trajectories with independent streams; output is in index
/// order and does not depend on the thread count.
pub fn simulate_batch(
    model: &GameModel,
    alpha: &dyn FeedbackControl,
    beta: &dyn FeedbackControl,
    theta0: &InitialDistribution,
    m: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<Vec<TrajectoryRecord>> {
    theta0.validate(model)?;
    (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(seed, i as u64);
            let (x0, mu0) = theta0.sample(model, &mut rng)?;
            simulate_trajectory(model, alpha, beta, x0, mu0, opts, &mut rng)
        })
        .collect()
}

/// Pairwise (cascade) summation in index order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => xs.iter().sum(),
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartCost {
    pub x: usize,
    pub counts: Vec<u32>,
    pub trajectories: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub trajectories: usize,
    pub per_start: Vec<StartCost>,
    /// Cost of every trajectory, in index order.
    pub costs: Vec<f64>,
}

/// Values of `control` at the nodes of `grid`, as a piecewise linear field.
pub fn sample_on_grid(model: &GameModel, control: &dyn FeedbackControl, grid: TimeGrid) -> Result<ControlField> {
    let dim = model.d() - 1;
    let states = model.num_states();
    let mut data = vec![0.0; grid.num_nodes() * states * dim];
    data.par_chunks_mut(states * dim).enumerate().for_each(|(k, node)| {
        let t = grid.node(k);
        for (flat, out) in node.chunks_mut(dim).enumerate() {
            let (x, mu) = model.table().split(flat);
            control.rates(t, x, mu, model.table().counts(mu), out);
        }
    });
    ControlField::from_vec(grid, states, dim, data)
}

/// Sample mean and standard error of `costs`.
pub fn mean_stderr(costs: &[f64]) -> (f64, f64) {
    let m = costs.len() as f64;
    let shift = costs.first().copied().unwrap_or(0.0);
    let centered: Vec<f64> = costs.iter().map(|c| c - shift).collect();
    let mean = shift + pairwise_sum(&centered) / m;
    let dev: Vec<f64> = costs.iter().map(|c| (c - mean) * (c - mean)).collect();
    let var = if costs.len() > 1 { pairwise_sum(&dev) / (m - 1.0) } else { 0.0 };
    (mean, (var / m).sqrt())
}

/// Monte Carlo estimate of the tagged player's expected cost under `theta0`.
pub fn estimate_cost(
    model: &GameModel,
    alpha: &dyn FeedbackControl,
    beta: &dyn FeedbackControl,
    theta0: &InitialDistribution,
    m: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<CostEstimate> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 trajectories, got {m}")));
    }
    let records = simulate_batch(model, alpha, beta, theta0, m, seed, opts)?;
    Ok(summarize(model, &records))
}

/// Cost statistics of an already simulated batch.
pub fn summarize(model: &GameModel, records: &[TrajectoryRecord]) -> CostEstimate {
    let costs: Vec<f64> = records.iter().map(|r| r.cost).collect();
    let (mean, stderr) = mean_stderr(&costs);
    let mut by_start: std::collections::BTreeMap<(usize, usize), Vec<f64>> = Default::default();
    for r in records {
        by_start.entry((r.x0, r.mu0)).or_default().push(r.cost);
    }
    let per_start = by_start
        .into_iter()
        .map(|((x, mu), cs)| StartCost {
            x,
            counts: model.table().counts(mu).to_vec(),
            trajectories: cs.len(),
            mean: pairwise_sum(&cs) / cs.len() as f64,
        })
        .collect();
    CostEstimate {
        mean,
        stderr,
        trajectories: records.len(),
        per_start,
        costs,
    }
}

/// Fractions of all `N + 1` players in each state at each of `times`.
pub fn empirical_distribution(model: &GameModel, record: &TrajectoryRecord, times: &[f64]) -> Vec<Vec<f64>> {
    let total = (model.n() + 1) as f64;
    record
        .states_at(times)
        .into_iter()
        .map(|(x, mu)| {
            let mut f: Vec<f64> = model.table().counts(mu).iter().map(|&c| c as f64).collect();
            f[x] += 1.0;
            f.iter_mut().for_each(|v| *v /= total);
            f
        })
        .collect()
}

/// Mean and standard deviation, over repeated evaluations, of the average
/// per-state fractions of all players.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionBands {
    pub times: Vec<f64>,
    /// `mean[i][s]`: state `s` at `times[i]`.
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    pub evaluations: usize,
    pub trajectories: usize,
}

/// Runs `evaluations` independent batches of `m` trajectories (seeds
/// `seed, seed + 1, ...`) and summarizes the batch-averaged fractions.
#[allow(clippy::too_many_arguments)]
pub fn distribution_bands(
    model: &GameModel,
    alpha: &dyn FeedbackControl,
    beta: &dyn FeedbackControl,
    theta0: &InitialDistribution,
    m: usize,
    evaluations: usize,
    seed: u64,
    times: &[f64],
    opts: &SimOptions,
) -> Result<DistributionBands> {
    if m == 0 || evaluations == 0 {
        return Err(Error::InvalidArgument("need at least one trajectory and one evaluation".into()));
    }
    let d = model.d();
    let mut runs = Vec::with_capacity(evaluations);
    for e in 0..evaluations {
        let recs = simulate_batch(model, alpha, beta, theta0, m, seed.wrapping_add(e as u64), opts)?;
        let per: Vec<Vec<Vec<f64>>> = recs.iter().map(|r| empirical_distribution(model, r, times)).collect();
        let avg: Vec<Vec<f64>> = (0..times.len())
            .map(|i| {
                (0..d)
                    .map(|s| {
                        let xs: Vec<f64> = per.iter().map(|p| p[i][s]).collect();
                        pairwise_sum(&xs) / m as f64
                    })
                    .collect()
            })
            .collect();
        runs.push(avg);
    }
    let k = evaluations as f64;
    let mut mean = vec![vec![0.0; d]; times.len()];
    let mut std = vec![vec![0.0; d]; times.len()];
    for i in 0..times.len() {
        for s in 0..d {
            let xs: Vec<f64> = runs.iter().map(|r| r[i][s]).collect();
            let mu = pairwise_sum(&xs) / k;
            let var = if evaluations > 1 {
                xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (k - 1.0)
            } else {
                0.0
            };
            mean[i][s] = mu;
            std[i][s] = var.sqrt();
        }
    }
    Ok(DistributionBands {
        times: times.to_vec(),
        mean,
        std,
        evaluations,
        trajectories: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state(n: u32, lambda0: f64, horizon: f64) -> GameModel {
        GameModel::builder(2, n, horizon)
            .lambda0(move |_, _, _| lambda0)
            .lambda1(|_, _, _| 1.0)
            .build()
            .unwrap()
    }

    #[test]
    fn total_rates_by_substitution() {
        let model = two_state(2, 0.0, 1.0);
        let grid = TimeGrid::new(1.0, 1).unwrap();
        let (a, b) = (0.7, 0.3);
        let alpha = ControlField::constant(grid, model.num_states(), 1, a).unwrap();
        let beta = ControlField::constant(grid, model.num_states(), 1, b).unwrap();
        let mu = model.table().rank(&[2, 0]).unwrap();
        let (tag, un) = total_rates(&model, 0.5, 0, mu, &alpha, &beta);
        assert!((tag - a).abs() < 1e-15);
        assert!((un[0] - 2.0 * b).abs() < 1e-15);
        assert_eq!(un[1], 0.0);
        let zero = ControlField::zeros(grid, model.num_states(), 1);
        let (tag, un) = total_rates(&model, 0.5, 0, mu, &zero, &zero);
        assert_eq!(tag, 0.0);
        assert!(un.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn no_jumps_means_deterministic_cost() {
        let c0 = 0.4;
        let model = GameModel::builder(3, 4, 2.0).state_cost(move |_, _| c0).build().unwrap();
        let grid = TimeGrid::new(2.0, 10).unwrap();
        let zero = ControlField::zeros(grid, model.num_states(), 2);
        for mode in [SimMode::Frozen, SimMode::Thinning { bound: None }] {
            let opts = SimOptions { mode, ..Default::default() };
            let mut rng = trajectory_rng(1, 0);
            let r = simulate_trajectory(&model, &zero, &zero, 1, 3, &opts, &mut rng).unwrap();
            assert!(r.events.is_empty());
            assert!((r.cost - c0 * 2.0).abs() < 1e-12);
            let est = estimate_cost(&model, &zero, &zero, &InitialDistribution::uniform(3), 50, 7, &opts).unwrap();
            assert_eq!(est.stderr, 0.0);
            assert!((est.mean - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn next_node_steps_past_current_node() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        assert_eq!(next_node(&g, 0.0), g.node(1));
        assert_eq!(next_node(&g, g.node(3)), g.node(4));
        assert_eq!(next_node(&g, 0.95), 1.0);
        assert_eq!(next_node(&g, 1.0), 1.0);
    }

    #[test]
    fn exact_initial_weights_sum_to_one() {
        let model = two_state(5, 0.0, 1.0);
        let w = InitialDistribution::Iid { probs: vec![0.3, 0.7] }.weights(&model).unwrap();
        assert_eq!(w.len(), model.num_states());
        assert!((w.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-12);
        let det = InitialDistribution::Deterministic { x: 1, counts: vec![2, 3] };
        assert_eq!(det.weights(&model).unwrap().len(), 1);
        assert!(InitialDistribution::Iid { probs: vec![0.5, 0.6] }.validate(&model).is_err());
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499500.0);
    }

    #[test]
    fn segments_replay_events() {
        let model = two_state(3, 1.0, 2.0);
        let grid = TimeGrid::new(2.0, 4).unwrap();
        let c = ControlField::constant(grid, model.num_states(), 1, 0.5).unwrap();
        let mut rng = trajectory_rng(3, 1);
        let r = simulate_trajectory(&model, &c, &c, 0, 1, &SimOptions::default(), &mut rng).unwrap();
        let segs = r.segments();
        assert_eq!(segs.len(), r.events.len() + 1);
        assert_eq!(segs.last().unwrap().t1, 2.0);
        for w in segs.windows(2) {
            assert_eq!(w[0].t1, w[1].t0);
        }
    }
}

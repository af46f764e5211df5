//! Neural controls and the simulation-based (weighted) Picard iteration.
//!
//! Controls are small multilayer perceptrons with `tanh` hidden layers and a
//! softplus output. Each best response is trained by Adam on simulated
//! batches. Training paths hold the tagged rates on a fine time grid, so the
//! path likelihood is exact for piecewise constant controls. Two gradient
//! estimators are available: the likelihood-ratio estimator (pathwise running
//! cost plus cost-to-go weighted scores of the tagged jumps) and a critic
//! variant that reads jump advantages off the per-state cost-to-go table.

use std::collections::HashMap;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game_model::GameModel;
use crate::simulate::{
    simulate_batch, summarize, CostEstimate, FeedbackControl, InitialDistribution, SimMode, SimOptions,
    TrajectoryRecord,
};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Picard iterations of a neural run unless configured otherwise.
pub const DEFAULT_ITERATIONS: usize = 5;

#[inline]
fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.max(0.0) + (-z.abs()).exp().ln_1p()
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fully connected network `(t/T, onehot(x), mu) -> d - 1` positive rates.
/// Inputs are mapped affinely onto `[-1, 1]` before the first layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlNet {
    d: usize,
    horizon: f64,
    /// Layer widths including input and output.
    widths: Vec<usize>,
    params: Vec<f64>,
}

struct Cache {
    /// Input followed by every hidden activation.
    acts: Vec<Vec<f64>>,
    /// Output pre-activations.
    z_out: Vec<f64>,
}

impl ControlNet {
    /// Glorot-uniform weights and zero biases.
    pub fn new(d: usize, horizon: f64, hidden: &[usize], seed: u64) -> Result<Self> {
        if d < 2 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "network needs d >= 2 and nonempty hidden layers, got d={d}, hidden={hidden:?}"
            )));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        let mut widths = vec![2 * d + 1];
        widths.extend_from_slice(hidden);
        widths.push(d - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            params.extend((0..fan_in * fan_out).map(|_| dist.sample(&mut rng)));
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Ok(ControlNet {
            d,
            horizon,
            widths,
            params,
        })
    }

    pub fn from_parts(d: usize, horizon: f64, widths: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        let ok = widths.len() >= 2
            && widths[0] == 2 * d + 1
            && widths[widths.len() - 1] == d - 1
            && params.len() == widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>()
            && params.iter().all(|p| p.is_finite());
        if !ok {
            return Err(Error::DimensionMismatch(format!(
                "network shape {widths:?} with {} parameters does not fit d = {d}",
                params.len()
            )));
        }
        Ok(ControlNet {
            d,
            horizon,
            widths,
            params,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Zeroes the output layer so every rate equals `ln 2`.
    pub fn zero_output_layer(&mut self) {
        let l = self.widths.len() - 2;
        let start = self.layer_offset(l);
        self.params[start..].fill(0.0);
    }

    fn layer_offset(&self, l: usize) -> usize {
        self.widths[..=l]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum::<usize>()
    }

    /// Network input for `(t, x, counts)`.
    pub fn encode(&self, t: f64, x: usize, counts: &[u32], out: &mut [f64]) {
        let d = self.d;
        out[0] = 2.0 * t / self.horizon - 1.0;
        out[1..=d].fill(-1.0);
        out[1 + x] = 1.0;
        let n: u32 = counts.iter().sum();
        let inv = if n > 0 { 1.0 / n as f64 } else { 0.0 };
        for (o, &c) in out[d + 1..].iter_mut().zip(counts) {
            *o = 2.0 * c as f64 * inv - 1.0;
        }
    }

    fn forward_cache(&self, input: &[f64]) -> Cache {
        let layers = self.widths.len() - 1;
        let mut acts = Vec::with_capacity(layers);
        acts.push(input.to_vec());
        let mut off = 0;
        let mut z_out = Vec::new();
        for l in 0..layers {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let h = acts.last().expect("input pushed");
            let z: Vec<f64> = (0..n_out)
                .map(|i| b[i] + w[i * n_in..(i + 1) * n_in].iter().zip(h).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            if l + 1 < layers {
                acts.push(z.into_iter().map(f64::tanh).collect());
            } else {
                z_out = z;
            }
        }
        Cache { acts, z_out }
    }

    /// Forward pass on an encoded input.
    pub fn forward(&self, input: &[f64], out: &mut [f64]) {
        let c = self.forward_cache(input);
        for (o, &z) in out.iter_mut().zip(&c.z_out) {
            *o = softplus(z);
        }
    }

    /// Rates at `(t, x, counts)`.
    pub fn eval(&self, t: f64, x: usize, counts: &[u32], out: &mut [f64]) {
        let mut input = vec![0.0; 2 * self.d + 1];
        self.encode(t, x, counts, &mut input);
        self.forward(&input, out);
    }

    /// Adds `sum_k dout_k * d(rate_k)/d(params)` at `input` into `grad`, and
    /// returns the rates.
    pub fn backprop(&self, input: &[f64], dout: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let c = self.forward_cache(input);
        let dz = c.z_out.iter().zip(dout).map(|(&z, &g)| g * sigmoid(z)).collect();
        self.backward(c, dz, grad)
    }

    /// As [`ControlNet::backprop`], but output `k` uses a softplus slope of at
    /// least `floor[k]` where `dout[k] < 0`, so saturated rates that should
    /// grow still move. Not a true gradient.
    pub fn backprop_floored(&self, input: &[f64], dout: &[f64], floor: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let c = self.forward_cache(input);
        let dz = c
            .z_out
            .iter()
            .zip(dout)
            .zip(floor)
            .map(|((&z, &g), &f)| if g < 0.0 { g * sigmoid(z).max(f) } else { g * sigmoid(z) })
            .collect();
        self.backward(c, dz, grad)
    }

    fn backward(&self, c: Cache, mut dz: Vec<f64>, grad: &mut [f64]) -> Vec<f64> {
        let rates: Vec<f64> = c.z_out.iter().map(|&z| softplus(z)).collect();
        let layers = self.widths.len() - 1;
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let off = self.layer_offset(l);
            let h = &c.acts[l];
            for i in 0..n_out {
                if dz[i] == 0.0 {
                    continue;
                }
                let row = &mut grad[off + i * n_in..off + (i + 1) * n_in];
                for (g, &hj) in row.iter_mut().zip(h) {
                    *g += dz[i] * hj;
                }
                grad[off + n_in * n_out + i] += dz[i];
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut dh = vec![0.0; n_in];
            for i in 0..n_out {
                if dz[i] != 0.0 {
                    for (d, &wij) in dh.iter_mut().zip(&w[i * n_in..(i + 1) * n_in]) {
                        *d += dz[i] * wij;
                    }
                }
            }
            dz = dh.iter().zip(h).map(|(g, a)| g * (1.0 - a * a)).collect();
        }
        rates
    }
}

/// Evaluates `net` at `(t, x, counts)`.
pub fn net_eval(net: &ControlNet, t: f64, x: usize, counts: &[u32]) -> Vec<f64> {
    let mut out = vec![0.0; net.d - 1];
    net.eval(t, x, counts, &mut out);
    out
}

impl FeedbackControl for ControlNet {
    fn rates(&self, t: f64, x: usize, _mu: usize, counts: &[u32], out: &mut [f64]) {
        self.eval(t, x, counts, out);
    }
}

/// Convex combination of the zero control and stored nets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedControl {
    /// Weight of the initial zero control.
    pub zero_weight: f64,
    pub nets: Vec<(f64, ControlNet)>,
}

impl MixedControl {
    pub fn zero() -> Self {
        MixedControl {
            zero_weight: 1.0,
            nets: Vec::new(),
        }
    }

    /// `rho * self + (1 - rho) * net`.
    pub fn push(&mut self, net: ControlNet, rho: f64) {
        self.zero_weight *= rho;
        for (w, _) in &mut self.nets {
            *w *= rho;
        }
        self.nets.retain(|(w, _)| *w > 0.0);
        self.nets.push((1.0 - rho, net));
    }

    /// Weights, zero control first.
    pub fn weights(&self) -> Vec<f64> {
        std::iter::once(self.zero_weight).chain(self.nets.iter().map(|(w, _)| *w)).collect()
    }

    pub fn last_net(&self) -> Option<&ControlNet> {
        self.nets.last().map(|(_, n)| n)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&Checkpoint {
            version: CHECKPOINT_VERSION,
            control: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidArgument(format!("unsupported checkpoint version {}", c.version)));
        }
        for (_, net) in &c.control.nets {
            ControlNet::from_parts(net.d, net.horizon, net.widths.clone(), net.params.clone())?;
        }
        Ok(c.control)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    control: MixedControl,
}

impl FeedbackControl for MixedControl {
    fn rates(&self, t: f64, x: usize, _mu: usize, counts: &[u32], out: &mut [f64]) {
        out.fill(0.0);
        let mut tmp = vec![0.0; out.len()];
        for (w, net) in &self.nets {
            net.eval(t, x, counts, &mut tmp);
            for (o, v) in out.iter_mut().zip(&tmp) {
                *o += w * v;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    None,
    /// Moving average of the cost-to-go per time bin.
    Mean,
    /// Moving average of the cost-to-go per time bin and joint state.
    State,
}

/// How the jump part of the gradient is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Likelihood ratio of the tagged jumps, centered by the baseline.
    Score,
    /// Jump advantages read off the state baseline, `b(after) - b(before)`,
    /// weighted by the time spent at each piece. Falls back to the score
    /// term where the table has no entry.
    Critic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub estimator: Estimator,
    /// Smallest softplus slope used when a critic step asks for a larger rate.
    pub slope_floor: f64,
    pub baseline: BaselineMode,
    /// Weight of the newest batch in the baseline average.
    pub baseline_rate: f64,
    pub baseline_bins: usize,
    /// Rate refresh step of training paths; also the quadrature step of
    /// thinned paths.
    pub cost_step: f64,
    /// Start each best response from the previous one.
    pub warm_start: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![64, 64],
            epochs: 150,
            batch: 128,
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            estimator: Estimator::Critic,
            slope_floor: 0.1,
            baseline: BaselineMode::State,
            baseline_rate: 0.1,
            baseline_bins: 20,
            cost_step: 0.02,
            warm_start: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || !(self.lr > 0.0) || self.hidden.is_empty() {
            return Err(Error::InvalidArgument(
                "epochs, batch and lr must be positive and hidden layers nonempty".into(),
            ));
        }
        if self.estimator == Estimator::Critic && self.baseline != BaselineMode::State {
            return Err(Error::InvalidArgument("the critic estimator needs the state baseline".into()));
        }
        if !(0.0..=1.0).contains(&self.slope_floor) {
            return Err(Error::InvalidArgument(format!(
                "slope_floor must lie in [0, 1], got {}",
                self.slope_floor
            )));
        }
        if !(self.cost_step > 0.0) || self.baseline_bins == 0 || !(0.0..=1.0).contains(&self.baseline_rate) {
            return Err(Error::InvalidArgument("invalid cost_step or baseline settings".into()));
        }
        Ok(())
    }

    fn sim_options(&self) -> SimOptions {
        SimOptions {
            mode: SimMode::Frozen,
            cost_step: self.cost_step,
            refresh: Some(self.cost_step),
        }
    }
}

/// Moving-average cost-to-go used to center the score terms.
#[derive(Debug, Clone)]
pub struct Baseline {
    mode: BaselineMode,
    bins: usize,
    horizon: f64,
    rate: f64,
    values: HashMap<(usize, usize), f64>,
}

impl Baseline {
    pub fn new(mode: BaselineMode, bins: usize, horizon: f64, rate: f64) -> Self {
        Baseline {
            mode,
            bins: bins.max(1),
            horizon,
            rate,
            values: HashMap::new(),
        }
    }

    pub fn none() -> Self {
        Baseline::new(BaselineMode::None, 1, 1.0, 0.0)
    }

    fn key(&self, t: f64, flat: usize) -> Option<(usize, usize)> {
        let bin = ((t / self.horizon * self.bins as f64) as usize).min(self.bins - 1);
        match self.mode {
            BaselineMode::None => None,
            BaselineMode::Mean => Some((bin, 0)),
            BaselineMode::State => Some((bin, flat)),
        }
    }

    pub fn value(&self, t: f64, flat: usize) -> f64 {
        self.get(t, flat).unwrap_or(0.0)
    }

    /// Stored value, if any batch has visited the bin yet.
    pub fn get(&self, t: f64, flat: usize) -> Option<f64> {
        self.key(t, flat).and_then(|k| self.values.get(&k).copied())
    }

    fn update(&mut self, samples: &[(f64, usize, f64)]) {
        let mut acc: HashMap<(usize, usize), (f64, usize)> = HashMap::new();
        for &(t, flat, g) in samples {
            if let Some(k) = self.key(t, flat) {
                let e = acc.entry(k).or_insert((0.0, 0));
                e.0 += g;
                e.1 += 1;
            }
        }
        // sorted so the result does not depend on hash order
        let mut keys: Vec<_> = acc.into_iter().collect();
        keys.sort_by_key(|(k, _)| *k);
        for (k, (sum, n)) in keys {
            let mean = sum / n as f64;
            self.values
                .entry(k)
                .and_modify(|v| *v += self.rate * (mean - *v))
                .or_insert(mean);
        }
    }
}

/// Trapezoid nodes `(s, weight)` on `[t0, t1]` with step at most `h`.
fn quadrature(t0: f64, t1: f64, h: f64) -> Vec<(f64, f64)> {
    if t1 <= t0 {
        return Vec::new();
    }
    let pieces = ((t1 - t0) / h).ceil().max(1.0) as usize;
    let dt = (t1 - t0) / pieces as f64;
    (0..=pieces)
        .map(|i| {
            let s = if i == pieces { t1 } else { t0 + i as f64 * dt };
            let w = if i == 0 || i == pieces { 0.5 * dt } else { dt };
            (s, w)
        })
        .collect()
}

struct Sample {
    t: f64,
    flat: usize,
    g: f64,
}

/// Gradient contribution of one trajectory; also returns the baseline samples.
fn trajectory_gradient(
    model: &GameModel,
    net: &ControlNet,
    rec: &TrajectoryRecord,
    cost_step: f64,
    baseline: &Baseline,
    estimator: Estimator,
    floor: f64,
    grad: &mut [f64],
) -> Vec<Sample> {
    if rec.frozen {
        frozen_gradient(model, net, rec, baseline, estimator, floor, grad)
    } else {
        thinning_gradient(model, net, rec, cost_step, baseline, grad)
    }
}

/// Control and rates were held on each piece, so every piece contributes one
/// pathwise term and one score term at its start.
fn frozen_gradient(
    model: &GameModel,
    net: &ControlNet,
    rec: &TrajectoryRecord,
    baseline: &Baseline,
    estimator: Estimator,
    floor: f64,
    grad: &mut [f64],
) -> Vec<Sample> {
    let d = model.d();
    let table = model.table();
    let pieces = rec.pieces();
    let mut input = vec![0.0; 2 * d + 1];
    let mut a = vec![0.0; d - 1];
    let mut dl = vec![0.0; d - 1];
    let mut dout = vec![0.0; d - 1];
    let mut floors = vec![0.0; d - 1];

    let mut acts = Vec::with_capacity(pieces.len());
    let mut togo = vec![0.0; pieces.len()];
    for p in &pieces {
        let flat = table.joint(p.x, p.mu);
        net.encode(p.t0, p.x, table.counts(p.mu), &mut input);
        a_at(net, &input, &mut a);
        acts.push((input.clone(), a.clone(), model.running_cost(flat, &a) * (p.t1 - p.t0)));
    }
    let mut acc = rec.terminal_cost;
    for i in (0..pieces.len()).rev() {
        acc += acts[i].2;
        togo[i] = acc;
    }

    let mut samples = Vec::with_capacity(pieces.len());
    for (i, p) in pieces.iter().enumerate() {
        let flat = table.joint(p.x, p.mu);
        let (input, a, _) = &acts[i];
        let tau = p.t1 - p.t0;
        let adv = togo[i] - baseline.value(p.t0, flat);
        samples.push(Sample { t: p.t0, flat, g: togo[i] });
        model.running_cost_grad(flat, a, &mut dl);
        let jump = p.tagged_jump.map(|to| crate::game_model::slot(p.x, to));
        let here = match estimator {
            Estimator::Critic => baseline.get(p.t0, flat),
            Estimator::Score => None,
        };
        for k in 0..d - 1 {
            let gain = model.lambda1(flat, k);
            let there = here.and_then(|_| {
                baseline.get(p.t0, table.joint(crate::game_model::destination(p.x, k), p.mu))
            });
            dout[k] = tau * dl[k];
            floors[k] = 0.0;
            if let (Some(h), Some(th)) = (here, there) {
                dout[k] += tau * gain * (th - h);
                floors[k] = floor;
            } else {
                let mut sc = -gain * tau;
                if jump == Some(k) {
                    sc += gain / (model.lambda0(flat, k) + gain * a[k]);
                }
                dout[k] += adv * sc;
            }
        }
        net.backprop_floored(input, &dout, &floors, grad);
    }
    samples
}

fn thinning_gradient(
    model: &GameModel,
    net: &ControlNet,
    rec: &TrajectoryRecord,
    cost_step: f64,
    baseline: &Baseline,
    grad: &mut [f64],
) -> Vec<Sample> {
    let d = model.d();
    let table = model.table();
    let segs = rec.pieces();
    let mut input = vec![0.0; 2 * d + 1];
    let mut a = vec![0.0; d - 1];
    let mut dl = vec![0.0; d - 1];
    let mut dout = vec![0.0; d - 1];

    // running cost per quadrature node, in path order
    let nodes: Vec<Vec<(f64, f64)>> = segs.iter().map(|s| quadrature(s.t0, s.t1, cost_step)).collect();
    let mut node_cost: Vec<Vec<f64>> = Vec::with_capacity(segs.len());
    for (s, q) in segs.iter().zip(&nodes) {
        let flat = table.joint(s.x, s.mu);
        let counts = table.counts(s.mu);
        let mut costs = Vec::with_capacity(q.len());
        for &(t, w) in q {
            net.encode(t, s.x, counts, &mut input);
            // pathwise term of the running cost
            model.running_cost_grad(flat, a_at(net, &input, &mut a), &mut dl);
            for k in 0..d - 1 {
                dout[k] = w * dl[k];
            }
            net.backprop(&input, &dout, grad);
            costs.push(w * model.running_cost(flat, &a));
        }
        node_cost.push(costs);
    }

    // cost-to-go at the start of each segment and at every node
    let terminal = rec.terminal_cost;
    let mut togo_seg = vec![0.0; segs.len()];
    let mut togo_node: Vec<Vec<f64>> = node_cost.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut acc = terminal;
    for i in (0..segs.len()).rev() {
        // trapezoid weights split the piece between its nodes; the cost after
        // node j is everything from node j on
        for j in (0..node_cost[i].len()).rev() {
            acc += node_cost[i][j];
            togo_node[i][j] = acc;
        }
        togo_seg[i] = acc;
    }

    let mut samples = Vec::new();
    for (i, s) in segs.iter().enumerate() {
        let flat = table.joint(s.x, s.mu);
        let counts = table.counts(s.mu);
        let gains: Vec<f64> = (0..d - 1).map(|k| model.lambda1(flat, k)).collect();
        if gains.iter().all(|&g| g == 0.0) {
            continue;
        }
        for (j, &(t, w)) in nodes[i].iter().enumerate() {
            let adv = togo_node[i][j] - baseline.value(t, flat);
            net.encode(t, s.x, counts, &mut input);
            for k in 0..d - 1 {
                dout[k] = -adv * w * gains[k];
            }
            net.backprop(&input, &dout, grad);
        }
        samples.push(Sample { t: s.t0, flat, g: togo_seg[i] });
        if let Some(to) = s.tagged_jump {
            let k = crate::game_model::slot(s.x, to);
            let g_after = togo_seg.get(i + 1).copied().unwrap_or(terminal);
            let adv = g_after - baseline.value(s.t1, flat);
            net.encode(s.t1, s.x, counts, &mut input);
            a_at(net, &input, &mut a);
            let r = model.lambda0(flat, k) + gains[k] * a[k];
            dout.fill(0.0);
            dout[k] = adv * gains[k] / r;
            net.backprop(&input, &dout, grad);
        }
    }
    samples
}

fn a_at<'a>(net: &ControlNet, input: &[f64], a: &'a mut [f64]) -> &'a [f64] {
    net.forward(input, a);
    a
}

/// Likelihood-ratio estimate of the gradient of the expected cost with
/// respect to the parameters of `net`, averaged over `batch`.
pub fn policy_gradient(
    batch: &[TrajectoryRecord],
    net: &ControlNet,
    model: &GameModel,
    cost_step: f64,
    baseline: &Baseline,
) -> Result<Vec<f64>> {
    Ok(batch_gradient(batch, net, model, cost_step, baseline, Estimator::Score, 0.0)?.0)
}

fn batch_gradient(
    batch: &[TrajectoryRecord],
    net: &ControlNet,
    model: &GameModel,
    cost_step: f64,
    baseline: &Baseline,
    estimator: Estimator,
    floor: f64,
) -> Result<(Vec<f64>, Vec<(f64, usize, f64)>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let parts: Vec<(Vec<f64>, Vec<Sample>)> = batch
        .par_iter()
        .map(|rec| {
            let mut g = vec![0.0; net.num_params()];
            let s = trajectory_gradient(model, net, rec, cost_step, baseline, estimator, floor, &mut g);
            (g, s)
        })
        .collect();
    let mut grad = vec![0.0; net.num_params()];
    let mut samples = Vec::new();
    for (g, s) in parts {
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
        samples.extend(s.into_iter().map(|s| (s.t, s.flat, s.g)));
    }
    let m = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= m);
    Ok((grad, samples))
}

/// Adam optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub net: ControlNet,
    /// Mean simulated cost per epoch.
    pub losses: Vec<f64>,
    /// Cost of the final batch.
    pub final_cost: CostEstimate,
}

/// Seed of epoch `epoch` in Picard iteration `iter`.
fn epoch_seed(seed: u64, iter: usize, epoch: usize) -> u64 {
    let mut z = seed ^ ((iter as u64) << 32 | epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains a best response to `beta` starting from `init`.
pub fn train_best_response(
    model: &GameModel,
    beta: &MixedControl,
    theta0: &InitialDistribution,
    init: ControlNet,
    cfg: &TrainConfig,
    iter: usize,
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut net = init;
    let mut adam = Adam::new(net.num_params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut baseline = Baseline::new(cfg.baseline, cfg.baseline_bins, model.horizon(), cfg.baseline_rate);
    let opts = cfg.sim_options();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut above = 0usize;
    let mut last = None;
    for epoch in 0..cfg.epochs {
        let batch = simulate_batch(model, &net, beta, theta0, cfg.batch, epoch_seed(cfg.seed, iter, epoch), &opts)?;
        let est = summarize(model, &batch);
        losses.push(est.mean);
        if est.mean > 10.0 * losses[0].abs().max(1e-12) {
            above += 1;
            if above >= 50 {
                return Err(Error::Diverged { iteration: iter, epoch });
            }
        } else {
            above = 0;
        }
        let (grad, samples) = batch_gradient(&batch, &net, model, cfg.cost_step, &baseline, cfg.estimator, cfg.slope_floor)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { iteration: iter, epoch });
        }
        baseline.update(&samples);
        adam.step(net.params_mut(), &grad);
        log::debug!("iteration {iter} epoch {epoch}: loss {:.6}", est.mean);
        last = Some(est);
    }
    Ok(TrainReport {
        net,
        losses,
        final_cost: last.expect("epochs >= 1"),
    })
}

#[derive(Debug, Clone)]
pub struct NeuralPicardReport {
    pub control: MixedControl,
    /// `(iteration, epoch, loss)`.
    pub losses: Vec<(usize, usize, f64)>,
    /// Estimated cost of each best response against the previous iterate.
    pub costs: Vec<CostEstimate>,
}

/// Simulation-based (weighted) Picard iteration started from the zero control.
pub fn neural_picard_run(
    model: &GameModel,
    theta0: &InitialDistribution,
    n_iter: usize,
    rho: f64,
    cfg: &TrainConfig,
) -> Result<NeuralPicardReport> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("rho must lie in [0, 1), got {rho}")));
    }
    cfg.validate()?;
    theta0.validate(model)?;
    let mut beta = MixedControl::zero();
    let mut losses = Vec::new();
    let mut costs = Vec::new();
    let mut prev: Option<ControlNet> = None;
    for n in 1..=n_iter {
        let init = match (&prev, cfg.warm_start) {
            (Some(p), true) => p.clone(),
            _ => ControlNet::new(model.d(), model.horizon(), &cfg.hidden, epoch_seed(cfg.seed, n, usize::MAX))?,
        };
        let report = train_best_response(model, &beta, theta0, init, cfg, n)?;
        log::info!(
            "neural iteration {n}: cost {:.6} +- {:.6}",
            report.final_cost.mean,
            report.final_cost.stderr
        );
        losses.extend(report.losses.iter().enumerate().map(|(e, l)| (n, e, *l)));
        costs.push(report.final_cost);
        beta.push(report.net.clone(), rho);
        prev = Some(report.net);
    }
    Ok(NeuralPicardReport {
        control: beta,
        losses,
        costs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_output_layer_gives_ln2() {
        let mut net = ControlNet::new(3, 1.0, &[8, 8], 1).unwrap();
        net.zero_output_layer();
        let r = net_eval(&net, 0.3, 1, &[2, 1, 4]);
        for v in r {
            assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(100.0), 100.0);
        assert!(softplus(-100.0) > 0.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn mixed_weights_sum_to_one() {
        let net = ControlNet::new(2, 1.0, &[4], 0).unwrap();
        let mut m = MixedControl::zero();
        for _ in 0..30 {
            m.push(net.clone(), 0.3);
        }
        let w = m.weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!((w.last().unwrap() - 0.7).abs() < 1e-15);
        let mut plain = MixedControl::zero();
        plain.push(net.clone(), 0.0);
        assert_eq!(plain.weights(), vec![0.0, 1.0]);
        assert_eq!(plain.nets.len(), 1);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut m = MixedControl::zero();
        m.push(ControlNet::new(2, 1.0, &[4, 3], 5).unwrap(), 0.5);
        let back = MixedControl::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(MixedControl::from_json("{\"version\": 9, \"control\": {\"zero_weight\": 1.0, \"nets\": []}}").is_err());
    }

    #[test]
    fn quadrature_weights_cover_interval() {
        let q = quadrature(0.1, 0.35, 0.1);
        assert_eq!(q.len(), 4);
        assert!((q.iter().map(|p| p.1).sum::<f64>() - 0.25).abs() < 1e-15);
        assert!(quadrature(1.0, 1.0, 0.1).is_empty());
    }
}

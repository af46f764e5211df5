//! Run configuration: one JSON document, overridable from the command line.

use std::collections::BTreeMap;
use std::path::PathBuf;

use picard_mpe::{
    BaselineMode, Estimator, GameModel, InitialDistribution, OdeConfig, PicardConfig, PresetId, TimeGrid, TrainConfig,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Default time step of the control grid.
pub const DEFAULT_DT: f64 = 0.01;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub ode: OdeSection,
    pub picard: PicardSection,
    pub mc: McSection,
    pub neural: NeuralSection,
    pub noise: NoiseSection,
    /// Output directory.
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub preset: Option<PresetId>,
    /// Number of untagged players; preset default when absent.
    pub n: Option<u32>,
    /// Preset parameter overrides, e.g. `kappa`.
    pub params: BTreeMap<String, f64>,
    pub custom: Option<CustomModel>,
}

/// A model whose rates and costs are affine in the empirical distribution:
/// `rate(x -> y, mu) = base[x][y] + sum_z slope[x][y][z] mu_z`, and likewise
/// `f(x, mu)` and `g(x, mu)` with `d`-vectors and `d x d` slopes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomModel {
    pub d: usize,
    pub n: u32,
    #[serde(default)]
    pub labels: Option<Vec<String>>,
    pub lambda0: Vec<Vec<f64>>,
    #[serde(default)]
    pub lambda0_mu: Option<Vec<Vec<Vec<f64>>>>,
    pub lambda1: Vec<Vec<f64>>,
    #[serde(default)]
    pub lambda1_mu: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default)]
    pub state_cost: Option<Vec<f64>>,
    #[serde(default)]
    pub state_cost_mu: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub terminal_cost: Option<Vec<f64>>,
    #[serde(default)]
    pub terminal_cost_mu: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Horizon; preset default when absent.
    #[serde(rename = "T")]
    pub t: Option<f64>,
    /// Number of intervals; `T / 0.01` when absent.
    #[serde(rename = "M")]
    pub m: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdeSection {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for OdeSection {
    fn default() -> Self {
        let d = OdeConfig::default();
        OdeSection { rtol: d.rtol, atol: d.atol }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardSection {
    pub rho: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Record the exploitability of every iterate.
    pub certify: bool,
}

impl Default for PicardSection {
    fn default() -> Self {
        PicardSection {
            rho: 0.0,
            max_iter: 100,
            tol: 1e-8,
            certify: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    /// Trajectories per evaluation.
    #[serde(rename = "M")]
    pub m: usize,
    pub seed: u64,
    pub thinning: bool,
    /// Frozen mode only: re-evaluate rates at least this often.
    pub refresh: Option<f64>,
    /// Independent evaluations for the distribution bands; 10 for the cyber
    /// preset and 1 otherwise when absent.
    pub evaluations: Option<usize>,
    /// Number of equally spaced report times on `[0, T]`.
    pub points: usize,
    pub initial: Option<InitialDistribution>,
}

impl Default for McSection {
    fn default() -> Self {
        McSection {
            m: 1000,
            seed: 0,
            thinning: false,
            refresh: None,
            evaluations: None,
            points: 101,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuralSection {
    /// Hidden layers.
    pub layers: usize,
    pub width: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub iters: usize,
    pub rho: f64,
    pub seed: u64,
    pub estimator: Estimator,
    pub slope_floor: f64,
    pub cost_step: f64,
    /// Trajectories for the final cost estimate.
    pub eval_trajectories: usize,
}

impl Default for NeuralSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        NeuralSection {
            layers: t.hidden.len(),
            width: t.hidden[0],
            lr: t.lr,
            epochs: t.epochs,
            batch: t.batch,
            iters: picard_mpe::neural::DEFAULT_ITERATIONS,
            rho: 0.0,
            seed: t.seed,
            estimator: t.estimator,
            slope_floor: t.slope_floor,
            cost_step: t.cost_step,
            eval_trajectories: 10_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub delta: f64,
    pub seed: u64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection { delta: 0.05, seed: 0 }
    }
}

fn config_err(msg: impl Into<String>) -> picard_mpe::Error {
    picard_mpe::Error::InvalidArgument(msg.into())
}

/// Sets `path` (dotted) in a JSON document. Keys without a dot are preset
/// parameters (`kappa=3` is `model.params.kappa=3`).
pub fn apply_override(doc: &mut Value, assignment: &str) -> picard_mpe::Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("--set expects key=value, got '{assignment}'")))?;
    let key = key.trim();
    let path: Vec<&str> = if key.contains('.') {
        key.split('.').collect()
    } else {
        vec!["model", "params", key]
    };
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut node = doc;
    for (i, part) in path.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| config_err(format!("'{}' is not a section", path[..i].join("."))))?;
        if i + 1 == path.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    unreachable!("path has at least one part")
}

impl RunConfig {
    /// Parses `doc` after applying `overrides` in order.
    pub fn from_value(mut doc: Value, overrides: &[String]) -> picard_mpe::Result<Self> {
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| config_err(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> picard_mpe::Result<()> {
        if self.model.preset.is_some() == self.model.custom.is_some() {
            return Err(config_err("model needs exactly one of 'preset' and 'custom'"));
        }
        if self.model.custom.is_some() && (!self.model.params.is_empty() || self.model.n.is_some()) {
            return Err(config_err("'params' and 'n' apply to presets only"));
        }
        if !(0.0..1.0).contains(&self.picard.rho) || !(0.0..1.0).contains(&self.neural.rho) {
            return Err(config_err("rho must lie in [0, 1)"));
        }
        if !(self.picard.tol > 0.0) || self.picard.max_iter == 0 {
            return Err(config_err("picard.tol must be positive and picard.max_iter at least 1"));
        }
        if !(self.ode.rtol > 0.0 && self.ode.atol > 0.0) {
            return Err(config_err("ode tolerances must be positive"));
        }
        if self.mc.m < 2 || self.mc.points < 2 || self.mc.evaluations == Some(0) {
            return Err(config_err("mc.M and mc.points must be at least 2 and mc.evaluations positive"));
        }
        if !(self.noise.delta >= 0.0) {
            return Err(config_err("noise.delta must be nonnegative"));
        }
        if self.neural.layers == 0 || self.neural.width == 0 {
            return Err(config_err("neural.layers and neural.width must be positive"));
        }
        if let Some(t) = self.grid.t {
            if !(t.is_finite() && t > 0.0) {
                return Err(config_err("grid.T must be positive"));
            }
        }
        if self.grid.m == Some(0) {
            return Err(config_err("grid.M must be positive"));
        }
        self.train_config().validate()
    }

    pub fn horizon(&self) -> f64 {
        match (&self.grid.t, &self.model.preset) {
            (Some(t), _) => *t,
            (None, Some(p)) => p.default_horizon(),
            (None, None) => 1.0,
        }
    }

    pub fn time_grid(&self) -> picard_mpe::Result<TimeGrid> {
        let t = self.horizon();
        match self.grid.m {
            Some(m) => TimeGrid::new(t, m),
            None => TimeGrid::with_step(t, DEFAULT_DT),
        }
    }

    pub fn build_model(&self) -> picard_mpe::Result<GameModel> {
        let horizon = self.horizon();
        match (&self.model.preset, &self.model.custom) {
            (Some(p), _) => p.build(self.model.n.unwrap_or(p.default_n()), horizon, &self.model.params),
            (None, Some(c)) => c.build(horizon),
            (None, None) => Err(config_err("no model given")),
        }
    }

    pub fn ode_config(&self) -> OdeConfig {
        OdeConfig::with_tolerances(self.ode.rtol, self.ode.atol)
    }

    pub fn picard_config(&self) -> picard_mpe::Result<PicardConfig> {
        let mut cfg = PicardConfig::new(self.time_grid()?);
        cfg.rho = self.picard.rho;
        cfg.max_iter = self.picard.max_iter;
        cfg.tol = self.picard.tol;
        cfg.ode = self.ode_config();
        cfg.track_exploitability = self.picard.certify;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        let n = &self.neural;
        TrainConfig {
            hidden: vec![n.width; n.layers],
            epochs: n.epochs,
            batch: n.batch,
            lr: n.lr,
            estimator: n.estimator,
            slope_floor: n.slope_floor,
            baseline: BaselineMode::State,
            cost_step: n.cost_step,
            seed: n.seed,
            ..TrainConfig::default()
        }
    }

    pub fn initial(&self, d: usize) -> InitialDistribution {
        self.mc.initial.clone().unwrap_or_else(|| InitialDistribution::uniform(d))
    }

    pub fn evaluations(&self) -> usize {
        self.mc
            .evaluations
            .unwrap_or(if self.model.preset == Some(PresetId::Cyber) { 10 } else { 1 })
    }
}

fn affine(base: f64, slope: Option<&Vec<f64>>, counts: &[u32]) -> f64 {
    let n: u32 = counts.iter().sum();
    match slope {
        Some(s) if n > 0 => base + s.iter().zip(counts).map(|(a, &c)| a * c as f64 / n as f64).sum::<f64>(),
        _ => base,
    }
}

impl CustomModel {
    fn check(&self) -> picard_mpe::Result<()> {
        let d = self.d;
        let square = |m: &Vec<Vec<f64>>| m.len() == d && m.iter().all(|r| r.len() == d);
        let cube = |m: &Option<Vec<Vec<Vec<f64>>>>| m.as_ref().map_or(true, |m| m.len() == d && m.iter().all(square));
        let vector = |v: &Option<Vec<f64>>| v.as_ref().map_or(true, |v| v.len() == d);
        let matrix = |m: &Option<Vec<Vec<f64>>>| m.as_ref().map_or(true, square);
        let ok = d >= 2
            && square(&self.lambda0)
            && square(&self.lambda1)
            && cube(&self.lambda0_mu)
            && cube(&self.lambda1_mu)
            && vector(&self.state_cost)
            && vector(&self.terminal_cost)
            && matrix(&self.state_cost_mu)
            && matrix(&self.terminal_cost_mu)
            && self.labels.as_ref().map_or(true, |l| l.len() == d);
        if ok {
            Ok(())
        } else {
            Err(config_err(format!("custom model arrays must be sized for d = {d} (d >= 2)")))
        }
    }

    pub fn build(&self, horizon: f64) -> picard_mpe::Result<GameModel> {
        self.check()?;
        let d = self.d;
        let rate = |base: &Vec<Vec<f64>>, slope: &Option<Vec<Vec<Vec<f64>>>>| {
            let (base, slope) = (base.clone(), slope.clone());
            move |x: usize, y: usize, c: &[u32]| affine(base[x][y], slope.as_ref().map(|s| &s[x][y]), c)
        };
        let cost = |base: &Option<Vec<f64>>, slope: &Option<Vec<Vec<f64>>>| {
            let base = base.clone().unwrap_or_else(|| vec![0.0; d]);
            let slope = slope.clone();
            move |x: usize, c: &[u32]| affine(base[x], slope.as_ref().map(|s| &s[x]), c)
        };
        let mut b = GameModel::builder(d, self.n, horizon)
            .name("custom")
            .lambda0(rate(&self.lambda0, &self.lambda0_mu))
            .lambda1(rate(&self.lambda1, &self.lambda1_mu))
            .state_cost(cost(&self.state_cost, &self.state_cost_mu))
            .terminal_cost(cost(&self.terminal_cost, &self.terminal_cost_mu));
        if let Some(l) = &self.labels {
            b = b.labels(l.clone());
        }
        b.build()
    }
}

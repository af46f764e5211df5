//! Built-in example games: two Kuramoto-type synchronization games and a
//! four-state cyber-security game.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game_model::GameModel;
use crate::grid::ValueField;

/// Cyber state order used everywhere (I/O included).
pub const CYBER_STATES: [&str; 4] = ["DI", "DS", "UI", "US"];
pub const DI: usize = 0;
pub const DS: usize = 1;
pub const UI: usize = 2;
pub const US: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetId {
    Kuramoto1,
    Kuramoto2,
    Cyber,
}

impl PresetId {
    pub const ALL: [PresetId; 3] = [PresetId::Kuramoto1, PresetId::Kuramoto2, PresetId::Cyber];

    pub fn as_str(&self) -> &'static str {
        match self {
            PresetId::Kuramoto1 => "kuramoto1",
            PresetId::Kuramoto2 => "kuramoto2",
            PresetId::Cyber => "cyber",
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            PresetId::Kuramoto1 => "two states, controlled switching, terminal synchronization cost",
            PresetId::Kuramoto2 => "two states, thermal noise, running synchronization cost",
            PresetId::Cyber => "four states (DI, DS, UI, US), controlled defense switching, infection dynamics",
        }
    }

    pub fn default_n(&self) -> u32 {
        match self {
            PresetId::Kuramoto1 | PresetId::Kuramoto2 => 100,
            PresetId::Cyber => 24,
        }
    }

    pub fn default_horizon(&self) -> f64 {
        match self {
            PresetId::Kuramoto1 => 1.0,
            PresetId::Kuramoto2 | PresetId::Cyber => 10.0,
        }
    }

    /// Overridable parameters and their defaults.
    pub fn parameters(&self) -> Vec<(&'static str, f64)> {
        match self {
            PresetId::Kuramoto1 => vec![("kappa", 2.0)],
            PresetId::Kuramoto2 => vec![("kappa", 6.0), ("sigma2", 0.5)],
            PresetId::Cyber => CyberParams::default().to_pairs(),
        }
    }

    /// Builds the preset with `overrides` applied; unknown keys are rejected.
    pub fn build(&self, n: u32, horizon: f64, overrides: &BTreeMap<String, f64>) -> Result<GameModel> {
        let mut params: BTreeMap<&str, f64> = self.parameters().into_iter().collect();
        for (k, v) in overrides {
            match params.get_mut(k.as_str()) {
                Some(slot) => *slot = *v,
                None => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown parameter '{k}' for preset {} (known: {})",
                        self.as_str(),
                        params.keys().copied().collect::<Vec<_>>().join(", ")
                    )))
                }
            }
        }
        match self {
            PresetId::Kuramoto1 => make_kuramoto1(n, horizon, params["kappa"]),
            PresetId::Kuramoto2 => make_kuramoto2(n, horizon, params["kappa"], params["sigma2"]),
            PresetId::Cyber => make_cyber(n, horizon, &CyberParams::from_map(&params)),
        }
    }
}

impl fmt::Display for PresetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PresetId::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown preset '{s}'")))
    }
}

fn check_common(n: u32, horizon: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("T must be positive, got {horizon}")));
    }
    Ok(())
}

/// `kappa * (mu{1} [x = 0] + mu{0} [x = 1])` with `mu = counts / N`.
fn sync_cost(kappa: f64, x: usize, counts: &[u32]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    let other = if x == 0 { counts[1] } else { counts[0] };
    kappa * other as f64 / n
}

/// Two-state game with `lambda0 = 0`, `lambda1 = 1`, `l = a^2/2` and the
/// terminal cost `kappa (mu{1} [x=0] + mu{0} [x=1])`.
pub fn make_kuramoto1(n: u32, horizon: f64, kappa: f64) -> Result<GameModel> {
    check_common(n, horizon)?;
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::InvalidArgument(format!("kappa must be positive, got {kappa}")));
    }
    GameModel::builder(2, n, horizon)
        .name("kuramoto1")
        .labels(vec!["0".into(), "1".into()])
        .lambda1(|_, _, _| 1.0)
        .terminal_cost(move |x, c| sync_cost(kappa, x, c))
        .build()
}

/// Two-state game with thermal noise `lambda0 = sigma2`, `lambda1 = 1` and the
/// running cost `a^2/2 + kappa (mu{1} [x=0] + mu{0} [x=1])`.
pub fn make_kuramoto2(n: u32, horizon: f64, kappa: f64, sigma2: f64) -> Result<GameModel> {
    check_common(n, horizon)?;
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::InvalidArgument(format!("kappa must be positive, got {kappa}")));
    }
    if !(sigma2.is_finite() && sigma2 >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma2 must be nonnegative, got {sigma2}")));
    }
    if kuramoto2_non_unique(kappa, sigma2) {
        log::info!("kappa = {kappa} > 4 sigma2^2 = {}: the mean-field game has several equilibria", 4.0 * sigma2 * sigma2);
    }
    GameModel::builder(2, n, horizon)
        .name("kuramoto2")
        .labels(vec!["0".into(), "1".into()])
        .lambda0(move |_, _, _| sigma2)
        .lambda1(|_, _, _| 1.0)
        .state_cost(move |x, c| sync_cost(kappa, x, c))
        .build()
}

/// Regime `kappa > 4 sigma^4` in which the limiting game has multiple equilibria.
pub fn kuramoto2_non_unique(kappa: f64, sigma2: f64) -> bool {
    kappa > 4.0 * sigma2 * sigma2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct CyberParams {
    #[serde(rename = "v_H")]
    pub v_h: f64,
    #[serde(rename = "qD_inf")]
    pub qd_inf: f64,
    #[serde(rename = "qU_inf")]
    pub qu_inf: f64,
    #[serde(rename = "qD_rec")]
    pub qd_rec: f64,
    #[serde(rename = "qU_rec")]
    pub qu_rec: f64,
    pub lam_UU: f64,
    pub lam_DU: f64,
    pub lam_DD: f64,
    pub lam_UD: f64,
    pub k_D: f64,
    pub k_I: f64,
}

impl Default for CyberParams {
    fn default() -> Self {
        CyberParams {
            v_h: 0.2,
            qd_inf: 0.4,
            qu_inf: 0.3,
            qd_rec: 0.1,
            qu_rec: 0.65,
            lam_UU: 0.3,
            lam_DU: 0.3,
            lam_DD: 0.4,
            lam_UD: 0.4,
            k_D: 0.3,
            k_I: 0.5,
        }
    }
}

impl CyberParams {
    fn to_pairs(self) -> Vec<(&'static str, f64)> {
        vec![
            ("v_H", self.v_h),
            ("qD_inf", self.qd_inf),
            ("qU_inf", self.qu_inf),
            ("qD_rec", self.qd_rec),
            ("qU_rec", self.qu_rec),
            ("lam_UU", self.lam_UU),
            ("lam_DU", self.lam_DU),
            ("lam_DD", self.lam_DD),
            ("lam_UD", self.lam_UD),
            ("k_D", self.k_D),
            ("k_I", self.k_I),
        ]
    }

    fn from_map(m: &BTreeMap<&str, f64>) -> Self {
        CyberParams {
            v_h: m["v_H"],
            qd_inf: m["qD_inf"],
            qu_inf: m["qU_inf"],
            qd_rec: m["qD_rec"],
            qu_rec: m["qU_rec"],
            lam_UU: m["lam_UU"],
            lam_DU: m["lam_DU"],
            lam_DD: m["lam_DD"],
            lam_UD: m["lam_UD"],
            k_D: m["k_D"],
            k_I: m["k_I"],
        }
    }

    /// Uncontrolled rate `from -> to` at the distribution `mu` (fractions).
    pub fn base_rate(&self, from: usize, to: usize, mu: &[f64]) -> f64 {
        match (from, to) {
            (DI, DS) => self.qd_rec,
            (DS, DI) => self.v_h * self.qd_inf + self.lam_DD * mu[DI] + self.lam_UD * mu[UI],
            (UI, US) => self.qu_rec,
            (US, UI) => self.v_h * self.qu_inf + self.lam_UU * mu[UI] + self.lam_DU * mu[DI],
            _ => 0.0,
        }
    }

    /// Whether `from -> to` is a defense switch (controlled).
    pub fn is_switch(from: usize, to: usize) -> bool {
        matches!((from, to), (DI, UI) | (UI, DI) | (DS, US) | (US, DS))
    }
}

/// Four-state cyber-security game over `(DI, DS, UI, US)`.
pub fn make_cyber(n: u32, horizon: f64, params: &CyberParams) -> Result<GameModel> {
    check_common(n, horizon)?;
    for (name, v) in params.to_pairs() {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidArgument(format!("{name} must be nonnegative, got {v}")));
        }
    }
    let p = *params;
    let nf = n as f64;
    GameModel::builder(4, n, horizon)
        .name("cyber")
        .labels(CYBER_STATES.iter().map(|s| s.to_string()).collect())
        .lambda0(move |x, y, c| {
            let mu: Vec<f64> = c.iter().map(|&k| k as f64 / nf).collect();
            p.base_rate(x, y, &mu)
        })
        .lambda1(|x, y, _| if CyberParams::is_switch(x, y) { 1.0 } else { 0.0 })
        .state_cost(move |x, _| {
            let defended = if x == DI || x == DS { p.k_D } else { 0.0 };
            let infected = if x == DI || x == UI { p.k_I } else { 0.0 };
            defended + infected
        })
        .build()
}

/// `(p, z)` with `p = n / N` and `z = v(t_k, 0, (N-n, n)) - v(t_k, 1, (N-n, n))`,
/// sorted by `p`.
pub fn slice_observable(model: &GameModel, value: &ValueField, k: usize) -> Result<Vec<(f64, f64)>> {
    if model.d() != 2 {
        return Err(Error::InvalidArgument(format!("slice needs d = 2, model has d = {}", model.d())));
    }
    if value.states() != model.num_states() {
        return Err(Error::DimensionMismatch("value field does not fit the model".into()));
    }
    let table = model.table();
    let n = model.n();
    let mut out = Vec::with_capacity(n as usize + 1);
    for m in 0..=n {
        let mu = table.rank(&[n - m, m])?;
        let z = value.get(k, table.joint(0, mu)) - value.get(k, table.joint(1, mu));
        out.push((m as f64 / n.max(1) as f64, z));
    }
    Ok(out)
}

//! Markov perfect equilibria of symmetric finite-state games with `N + 1`
//! players, computed by Picard-type iterations on the tagged player's
//! dynamic programming equation.

pub mod dopri;
pub mod error;
pub mod game_model;
pub mod grid;
pub mod io;
pub mod neural;
pub mod ode;
pub mod picard;
pub mod presets;
pub mod simulate;
pub mod state_space;
pub mod verification;

pub use error::{Error, Result};
pub use game_model::{Bounds, CostModel, CustomCost, GameModel, GameModelBuilder};
pub use grid::{ControlField, TimeGrid, ValueField};
pub use neural::{
    neural_picard_run, net_eval, policy_gradient, train_best_response, BaselineMode, ControlNet, Estimator,
    MixedControl, NeuralPicardReport, TrainConfig,
};
pub use ode::{evaluate_policy, solve_hjb, solve_nll_direct, DirectSolution, OdeConfig};
pub use picard::{
    best_response, best_response_from_value, fit_rate, picard_run, picard_run_noisy, NoiseConfig, PicardConfig,
    PicardReport, RateFit,
};
pub use presets::{make_cyber, make_kuramoto1, make_kuramoto2, slice_observable, CyberParams, PresetId};
pub use simulate::{
    distribution_bands, estimate_cost, sample_on_grid, simulate_batch, simulate_trajectory, total_rates, CostEstimate, DistributionBands, FeedbackControl,
    InitialDistribution, SimMode, SimOptions, TrajectoryRecord,
};
pub use state_space::SimplexTable;
pub use verification::{compare_pipelines, exploitability, field_norm, sup_norm, EquilibriumCertificate};

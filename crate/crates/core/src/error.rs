use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("count vector {counts:?} is not on the simplex with d={d}, N={n}")]
    NotOnSimplex { counts: Vec<u32>, d: usize, n: u32 },

    #[error("index {index} out of range (size {size})")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("simplex of d={d}, N={n} is too large to enumerate")]
    TooLarge { d: usize, n: u32 },

    #[error("step size underflow at t={t} (h={h:e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("non-finite right-hand side at t={t}, state index {state}")]
    NonFinite { t: f64, state: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("simulation failed: {0}")]
    Simulation(String),

    #[error("training diverged at iteration {iteration}, epoch {epoch}")]
    Diverged { iteration: usize, epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use thiserror::Error;

/// Errors produced by the model builders, solvers and analyses.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A model, schedule or chain could not be constructed from the given inputs.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("steady-state solver did not converge within {iterations} iterations (last trace step {last_step:e})")]
    DivergedSolver { iterations: usize, last_step: f64 },

    /// An energy or attack budget outside its admissible range.
    #[error("invalid budget: {0}")]
    InvalidBudget(String),

    #[error("mu calibration infeasible for z0 = {z0}: {reason}; try z0 = {suggestion}")]
    CalibrationInfeasible { z0: u32, suggestion: u32, reason: String },

    #[error("series diverges: {0}")]
    DivergingSeries(String),

    /// Stationary analysis failed (reducible or non-convergent chain).
    #[error("chain analysis failed for {params}: {reason}")]
    Analysis { params: String, reason: String },

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

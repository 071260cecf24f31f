//! Koopman lifting, EDMD fit and lifted terminal map.

mod bank;
mod data;
mod fit;
mod model;
#[cfg(test)]
mod properties;
pub mod rng;

use thiserror::Error;

pub use bank::{Normalization, ObservableBank, CONTROL_DIM, FIXED_OBSERVABLES, STATE_DIM};
pub use data::{generate_training_data, spot_check, TrainingData, TrainingMeta, TrainingSpec, Truncation};
pub use fit::{fit, fit_with, FitDiagnostics, FitOptions};
pub use model::{KoopmanModel, KoopmanSolution, TerminalConstraint, MODEL_SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum KoopmanError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model schema error: {0}")]
    Schema(String),
    #[error("unsupported model schema version {0}")]
    UnsupportedVersion(u64),
    #[error("observable denominator vanishes at normalized state {state:?} (r_hat = {r_hat})")]
    SingularObservable { state: [f64; 6], r_hat: f64 },
    #[error("fit precondition violated: {0}")]
    Precondition(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("training data: {0}")]
    Data(String),
    #[error(transparent)]
    Dynamics(#[from] crate::dynamics::DynamicsError),
    #[error(transparent)]
    Irls(#[from] crate::sparse_solver::IrlsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

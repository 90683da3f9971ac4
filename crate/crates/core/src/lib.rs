//! Adaptive behavioral predictive control: kernel-RLS identification of an
//! LPV–ARX predictor, stacked horizon propagation and a closed-form
//! Cholesky MPC step, together with benchmark plants and an experiment
//! harness.

pub mod adaptive;
pub mod config;
pub mod controller;
pub mod diagnostics;
pub mod features;
pub mod harness;
pub mod identifier;
pub mod io;
pub mod linalg;
pub mod lpv;
pub mod plants;
pub mod predictor;

pub use adaptive::{AdaptiveController, AdaptiveSettings};
pub use config::{load_config, ExperimentConfig, Overrides};
pub use harness::{run_closed_loop, Experiment, Metrics, RunLog};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
    #[error(transparent)]
    Feature(#[from] features::FeatureError),
    #[error(transparent)]
    Rls(#[from] identifier::RlsError),
    #[error(transparent)]
    Plant(#[from] plants::PlantError),
    #[error(transparent)]
    Predictor(#[from] predictor::PredictorError),
    #[error(transparent)]
    Harness(#[from] harness::HarnessError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error arose from the numerics rather than configuration
    /// or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Linalg(_) | Error::Rls(_) | Error::Predictor(_) | Error::Feature(_) | Error::Plant(_))
    }
}

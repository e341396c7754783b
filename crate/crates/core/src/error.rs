use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("speed {speed} exceeds the velocity bound {limit}")]
    VelocityBound { speed: f64, limit: f64 },

    #[error("coincident contingency positions at prediction step {step}")]
    DegenerateGeometry { step: usize },

    #[error("position {position:?} lies outside every inset workspace cell")]
    OutOfWorkspace { position: Vec<f64> },

    #[error("agent {agent} has no feasible branch and no stored contingency (initial infeasibility)")]
    InitialInfeasible { agent: usize },

    #[error("unknown agent id {0}")]
    UnknownAgent(usize),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("scenario pre-check failed: {0}")]
    Precheck(String),

    #[error("scenario generation failed: {0}")]
    Generator(String),

    #[error("malformed artifact {path}: {reason}")]
    Artifact { path: PathBuf, reason: String },

    #[error("failed to parse scenario: {0}")]
    ScenarioParse(#[from] toml::de::Error),

    #[error("failed to serialize scenario: {0}")]
    ScenarioWrite(#[from] toml::ser::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config io error: {0}")]
    Io(String),
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

impl ConfigError {
    pub(crate) fn from_list(errs: Vec<String>) -> Result<(), ConfigError> {
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("non-finite state: {quantity} at t={time:.3}s")]
    NonFiniteState { quantity: String, time: f64 },
    #[error("recovery reset requested but the fall bank is empty")]
    EmptyFallBank,
    #[error("snapshot decode error: {0}")]
    Snapshot(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VisionError {
    #[error("point outside the field of view (theta={theta:.4} rad)")]
    OutOfView { theta: f64 },
    #[error("degenerate detection box (radius {radius_px:.3} px)")]
    DegenerateBox { radius_px: f64 },
    #[error("point at camera origin")]
    AtOrigin,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("no policy loaded for mode {0}")]
    MissingPolicy(&'static str),
    #[error("observation width {got} does not match {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("environment {env} step {step}: {source}")]
    Env { env: usize, step: usize, source: SimError },
    #[error("non-finite loss in epoch {epoch} minibatch {minibatch}: {detail}")]
    NonFiniteLoss { epoch: usize, minibatch: usize, detail: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("state decode error: {0}")]
    Decode(String),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation settings: {0}")]
    Invalid(String),
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum TeleopError {
    #[error("could not bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

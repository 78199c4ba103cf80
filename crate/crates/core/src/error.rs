use thiserror::Error;

#[derive(Error, Debug)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFiniteValue { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("tensor is not attached to this tape")]
    DetachedTensor,
}

#[derive(Error, Debug)]
pub enum SdeError {
    #[error("time {t} outside [0, {t_max}]")]
    TimeOutOfRange { t: f64, t_max: f64 },
    #[error("transition requires t_next < t, got t={t}, t_next={t_next}")]
    TimeOrderViolation { t: f64, t_next: f64 },
    #[error("invalid SDE spec: {0}")]
    InvalidSpec(String),
}

#[derive(Error, Debug)]
pub enum GraphError {
    #[error("degree {degree} does not fit one-hot width {f_max}")]
    DegreeOverflow { degree: usize, f_max: usize },
    #[error("parse error at line {line}: {detail}")]
    ParseError { line: usize, detail: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
}

#[derive(Error, Debug)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Sde(#[from] SdeError),
}

#[derive(Error, Debug)]
pub enum TrainError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("loss diverged (non-finite) at epoch {epoch}; last good checkpoint kept")]
    DivergenceDetected { epoch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Error, Debug)]
pub enum SolverError {
    #[error("time step below lower cutoff: t={t}, delta={dt}, t_eps={t_eps}")]
    TimeUnderflow { t: f64, dt: f64, t_eps: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Error, Debug)]
pub enum EvalError {
    #[error("graph has no active nodes")]
    EmptyGraph,
    #[error("empty statistic set")]
    EmptySet,
}

#[derive(Error, Debug)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint/config mismatch: {0}")]
    CheckpointMismatch(String),
}

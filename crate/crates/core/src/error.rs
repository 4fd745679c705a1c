use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("kernel {0} has no finite L1 norm")]
    NoL1Norm(&'static str),

    #[error("configuration of {size} points exceeds the enumeration cap {cap}")]
    Size { size: usize, cap: usize },

    #[error("quadrature needs {evaluations} evaluations, above the limit {limit}")]
    Resource { evaluations: u128, limit: u128 },

    #[error("replicate {replicate}: event cap {cap} exceeded at t = {time}")]
    ExplosionSuspected { replicate: u64, cap: u64, time: f64 },

    #[error("replicate {replicate}: death-rate cache drifted (point {point}: cached {cached}, fresh {fresh})")]
    RateDrift {
        replicate: u64,
        point: u64,
        cached: f64,
        fresh: f64,
    },

    #[error("statistics: {0}")]
    Statistics(String),

    #[error("kinetic step size underflow at t = {time} (dt = {dt:e})")]
    Stiffness { time: f64, dt: f64 },

    #[error("kinetic run clipped {clipped} node values over {node_steps} node-steps")]
    PersistentClipping { clipped: u64, node_steps: u64 },

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}

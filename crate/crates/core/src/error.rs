use std::path::PathBuf;

use thiserror::Error;

use crate::mpc::FallbackDiagnostics;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("timescale must be positive, got {0}")]
    InvalidTimescale(f64),

    #[error("contraction rate must lie in (0, 1], got {0}")]
    InvalidRate(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value entering the dynamics: {0}")]
    NanGuard(String),

    #[error("jacobian is singular at {state:?}: level {level} is not above {eps:e}")]
    Singular { state: Vec<f64>, level: f64, eps: f64 },

    #[error("target {x_star:?} is not an equilibrium of the model (fixed-point residual {residual:e})")]
    NonEquilibrium { x_star: Vec<f64>, residual: f64 },

    #[error("target {x_star:?} needs input {input:?}, outside the input box")]
    InfeasibleReference { x_star: Vec<f64>, input: Vec<f64> },

    #[error("time {time} is outside the reference window [{start}, {end}]")]
    OutOfWindow { time: f64, start: f64, end: f64 },

    #[error("invalid reference plan: {0}")]
    Plan(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("synthesis failed: worst margin {margin:e} at state {state:?}, input {input:?}")]
    SynthesisFailed { margin: f64, state: Vec<f64>, input: Vec<f64> },

    #[error("invalid synthesis problem: {0}")]
    Synthesis(String),

    #[error("geodesic solver did not converge in {iterations} iterations (gradient norm {gradient_norm:e})")]
    GeodesicNonConvergence { iterations: usize, gradient_norm: f64 },

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("invalid MPC problem: {0}")]
    Problem(String),

    #[error("no feasible input sequence and the fallback controller violates the constraints: {0}")]
    FallbackInfeasible(Box<FallbackDiagnostics>),

    #[error("certificate file: {0}")]
    CertificateFormat(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

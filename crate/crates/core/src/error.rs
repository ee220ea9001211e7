use thiserror::Error;

use crate::solver::CpgSolution;

/// Errors raised by the time discretization and its supporting algebra.
#[derive(Debug, Error)]
pub enum CpgError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("time {t} lies outside [{a}, {b}]")]
    OutOfRange { t: f64, a: f64, b: f64 },

    /// The Hamiltonian or one of the structure maps is undefined at a state.
    #[error("domain error: {0}")]
    Domain(String),

    /// A domain error raised while sampling at a quadrature node.
    #[error("domain error at quadrature node t = {t}: {message}")]
    DomainAtNode { t: f64, message: String },

    #[error("Newton iteration did not converge after {iters} iterations (residual {residual:.3e})")]
    NonConvergence {
        iters: usize,
        residual: f64,
        /// Best iterate found, flattened column-major (component fastest).
        best: Vec<f64>,
    },

    #[error("singular Jacobian in Newton iteration {iter}")]
    SingularJacobian { iter: usize },

    #[error("jacobian mode requires derivatives the system does not provide: {0}")]
    MissingJacobian(String),

    /// Time stepping stopped early. The partial trajectory covers the
    /// steps before `step`.
    #[error("step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<CpgError>,
        partial: Box<CpgSolution>,
    },

    #[error("solution was computed with k={sol_k}, s_q={sol_sq}, s_pi={sol_spi} but config has k={k}, s_q={sq}, s_pi={spi}")]
    ConfigMismatch {
        sol_k: usize,
        sol_sq: usize,
        sol_spi: usize,
        k: usize,
        sq: usize,
        spi: usize,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, CpgError>;

use thiserror::Error;

/// Errors raised by model construction, tuning and the solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GneError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid market instance: {0}")]
    InvalidInstance(String),

    #[error("invalid communication graph: {0}")]
    InvalidGraph(String),

    #[error("communication graph is disconnected (algebraic connectivity {0:.3e})")]
    DisconnectedGraph(f64),

    #[error("empty feasible set: {0}")]
    EmptyFeasibleSet(String),

    #[error("projection did not converge after {iterations} cycles (violation {violation:.3e})")]
    ProjectionNotConverged { iterations: usize, violation: f64 },

    #[error("uniformity condition violated: sqrt(max mu) - sqrt(min mu) = {spread:.6} > 2 gamma = {bound:.6}")]
    UniformityViolated { spread: f64, bound: f64 },

    #[error("empty kappa interval ({lo:.6}, {hi:.6})")]
    EmptyKappaInterval { lo: f64, hi: f64 },

    #[error("cocoercivity not guaranteed: {0}")]
    CocoercivityNotGuaranteed(String),

    #[error("invalid gains: {0}")]
    InvalidGains(String),

    #[error("preconditioner is not positive definite (lambda_min = {0:.3e})")]
    SingularPreconditioner(f64),

    #[error("invalid initial state: {0}")]
    InvalidInitialState(String),

    #[error("oracle did not converge after {iterations} iterations (natural residual {residual:.3e})")]
    OracleNotConverged { iterations: usize, residual: f64 },

    #[error("empty best-response interval for agent {agent}: [{lo}, {hi}]")]
    EmptyBestResponse { agent: usize, lo: f64, hi: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for GneError {
    fn from(e: std::io::Error) -> Self {
        GneError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, GneError>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(GneError::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

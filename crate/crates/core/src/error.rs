use alloc::string::String;

/// Errors raised by the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("normalization failed: column `{column}` is constant")]
    ConstantColumn { column: String },

    #[error("oracle singularity: |w3'x| = {denominator:e} is below the guard {guard}")]
    OracleSingularity { denominator: f64, guard: f64 },

    #[error("weight generation failed after {attempts} resamples; best min denominator {min_denominator:e} < guard {guard}")]
    Generation {
        attempts: usize,
        min_denominator: f64,
        guard: f64,
    },

    #[error("sinkhorn scaling produced non-finite potentials (epsilon = {epsilon}); try a larger epsilon")]
    SinkhornDiverged { epsilon: f64 },

    #[error("normal equations are singular (rank deficient design); enable a ridge penalty")]
    Singular,

    #[error("grid search failed: every grid point diverged ({0})")]
    AllDiverged(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

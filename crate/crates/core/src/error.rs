use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid Gaussian field: {0}")]
    InvalidField(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("projection: {0}")]
    Projection(String),

    #[error("singular stiffness matrix: {null_space} unconstrained mode(s) ({detail})")]
    Singular { null_space: usize, detail: String },

    #[error("linear solver did not converge: {0}")]
    NoConvergence(String),

    #[error("problem definition: {0}")]
    Definition(String),

    #[error("unknown {kind} '{name}'; valid names: {valid}")]
    UnknownName {
        kind: &'static str,
        name: String,
        valid: String,
    },

    #[error("invalid state: {0}")]
    State(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("contour has {0} points; at least 8 are needed for curvature")]
    TooCoarse(usize),

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps an error with the optimization iteration at which it happened.
    pub fn at_iteration(self, iteration: usize) -> Self {
        match self {
            e @ Error::Iteration { .. } => e,
            other => Error::Iteration {
                iteration,
                source: Box::new(other),
            },
        }
    }
}

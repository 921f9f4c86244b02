use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid probability space: {0}")]
    InvalidSpace(String),

    #[error("invalid level {level}: {reason}")]
    InvalidLevel { level: usize, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("random variable is not measurable at level {level} (atom {atom})")]
    NotMeasurable { level: usize, atom: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("random variable outside the operator domain (residual {residual:.3e})")]
    OutsideDomain { residual: f64 },

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("invalid bounds: {0}")]
    InvalidBounds(String),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("density polytope is empty on block {block} (atoms {atoms:?})")]
    InfeasiblePolytope { block: usize, atoms: Vec<usize> },

    #[error("sandwich condition violated on block {block} by piece {piece}")]
    SandwichViolated { block: usize, piece: usize },

    #[error("linear program: {0}")]
    Lp(String),

    #[error("simplex iteration cap of {0} reached")]
    IterationLimit(usize),

    #[error("pair ({s}, {t}): {source}")]
    AtPair { s: usize, t: usize, source: Box<Error> },

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("scenario error at {path}: {message}")]
    Scenario { path: String, message: String },
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("size guard: {cells} cells exceed the limit of {limit}")]
    SizeGuard { cells: u128, limit: usize },

    #[error("bad coordinates: {0}")]
    BadCoords(String),

    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),

    #[error("not a probability measure (total mass {mass})")]
    NotProbability { mass: f64 },

    #[error("not absolutely continuous: cell {cell:?} is charged but the reference vanishes there")]
    NotAbsolutelyContinuous { cell: Vec<usize> },

    #[error("reference fails conditional independence (residual {residual:e})")]
    NotConditionallyIndependent { residual: f64 },

    #[error("{which} is not Markov (residual {residual:e})")]
    NotMarkov { which: String, residual: f64 },

    #[error("reference is not irreducible: {0}")]
    NotIrreducible(String),

    #[error("precondition failed: {0}")]
    PreconditionFailed(String),

    #[error("bad fold grid: {0}")]
    BadFoldGrid(String),

    #[error("measure charges a path outside the fold image (folded cell {cell:?})")]
    InconsistentSupport { cell: Vec<usize> },

    #[error("closed-interval values are not a content: quadruple {quadruple:?} gives {lhs} vs {rhs}")]
    IncompatibleValues {
        quadruple: [usize; 4],
        lhs: f64,
        rhs: f64,
    },

    #[error("premise f(X_s, X_t) = a + b fails on path {path:?}: {lhs} vs {rhs}")]
    PremiseViolated { path: Vec<usize>, lhs: f64, rhs: f64 },

    #[error("potentials do not reconstruct the density: worst cell {cell:?}, relative error {error:e}")]
    ReconstructionFailed { cell: Vec<usize>, error: f64 },

    #[error("infeasible problem: {0}")]
    InfeasibleProblem(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

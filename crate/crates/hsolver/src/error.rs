//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot_index} is {pivot})")]
    NotPositiveDefinite { pivot_index: usize, pivot: f64 },

    #[error("triangular matrix is singular at diagonal index {index}")]
    SingularTriangular { index: usize },

    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("matrix is not symmetric: A[{row},{col}] = {value} but A[{col},{row}] = {transposed}")]
    NotSymmetric {
        row: usize,
        col: usize,
        value: f64,
        transposed: f64,
    },

    #[error("diagonal entry {index} is {value}; SPD matrices need a strictly positive diagonal")]
    NonPositiveDiagonal { index: usize, value: f64 },

    #[error("partition does not match matrix: {context}")]
    PartitionMismatch { context: String },

    #[error("column {column} has {size} indices, exceeding the target cluster size {target}")]
    ColumnSplitRequired {
        column: usize,
        size: usize,
        target: usize,
    },

    #[error(
        "diagonal block of cluster {cluster} at level {level} is not SPD \
         (pivot {pivot_index} = {pivot}, eps = {eps}); \
         try a smaller eps, deferred compression, or a jitter shift"
    )]
    DiagonalNotSpd {
        level: usize,
        cluster: usize,
        pivot_index: usize,
        pivot: f64,
        eps: f64,
    },

    #[error("preconditioner is not positive: <z, r> = {inner} < 0")]
    PreconditionerNotPositive { inner: f64 },

    #[error("operator is not positive definite: <p, Ap> = {inner} <= 0 at iteration {iteration}")]
    IndefiniteOperator { inner: f64, iteration: usize },

    #[error("incomplete Cholesky breakdown: pivot at row {row} is {pivot}")]
    BreakdownNonpositivePivot { row: usize, pivot: f64 },

    #[error("level cap of {cap} exceeded; coarsening is not shrinking the system")]
    LevelCapExceeded { cap: usize },

    #[error("column map required for the extruded partitioner")]
    ColumnMapRequired,

    #[error("coordinates required: {context}")]
    CoordinatesRequired { context: String },

    #[error("invalid argument: {context}")]
    InvalidArgument { context: String },

    #[error("singular configuration: {context}")]
    SingularSystem { context: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(context: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
        }
    }

    pub fn invalid(context: impl Into<String>) -> Self {
        Error::InvalidArgument {
            context: context.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

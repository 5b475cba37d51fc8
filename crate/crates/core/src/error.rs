use thiserror::Error;

/// Errors raised by the estimation, bias and simulation layers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum IvError {
    #[error("dimension mismatch in {block}: expected {expected}, found {found}")]
    Dimension {
        block: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("non-finite value in {block} at row {row}, column {col}")]
    NonFinite {
        block: &'static str,
        row: usize,
        col: usize,
    },

    #[error("rank deficiency in {block}: numerical rank {rank} < {cols} columns")]
    RankDeficient {
        block: &'static str,
        rank: usize,
        cols: usize,
    },

    #[error("singular row weight at row {row}: denominator {denominator:e}")]
    SingularWeight { row: usize, denominator: f64 },

    #[error("near-singular system: condition estimate {cond:e}")]
    NearSingular { cond: f64 },

    #[error("leave-one-out oracle infeasible: first stage loses rank without row {row}")]
    OracleInfeasible { row: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("state error: {0}")]
    State(String),
}

pub type Result<T> = std::result::Result<T, IvError>;

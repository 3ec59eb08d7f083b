use thiserror::Error;

use crate::game::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid game: {0}")]
    InvalidGame(ValidationReport),

    #[error("{what} index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular linear system while solving {0}")]
    SingularSystem(&'static str),

    #[error("enumeration budget exceeded: {required} prefixes > {budget}")]
    BudgetExceeded { required: u128, budget: u128 },

    #[error("rewards are not identical across agents (agent {agent}, state {state}, joint action {joint})")]
    NotCooperative {
        agent: usize,
        state: usize,
        joint: usize,
    },

    #[error("game is not two-player zero-sum: {0}")]
    NotZeroSum(String),

    #[error("matrix game solver hit {iterations} iterations with exploitability {exploitability:.3e} > {tolerance:.3e}")]
    NotConverged {
        iterations: usize,
        exploitability: f64,
        tolerance: f64,
        best: Box<crate::equilibria::MatrixSolution>,
    },

    #[error("line {line}: {message}")]
    Decode { line: usize, message: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("environment exceeds the state budget: {states} > {budget}")]
    StateBudget { states: usize, budget: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_index(what: &'static str, index: usize, limit: usize) -> Result<()> {
    if index < limit {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange { what, index, limit })
    }
}

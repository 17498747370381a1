use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("generator images do not invert each other on the word {0}")]
    NotAutomorphism(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("weight has q = {q}, which does not divide n = {n}")]
    NotDivisible { q: String, n: usize },

    #[error("exact rational masses required: {0}")]
    Inexact(String),

    #[error("markov weight has zero mass on symbol {0}")]
    ZeroVertexMass(usize),

    #[error("{what} needs {needed} steps, over the budget of {budget}")]
    Budget { what: &'static str, needed: String, budget: u64 },

    #[error("internal consistency check failed: {0}")]
    Inconsistent(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn is_budget(&self) -> bool {
        matches!(self, Error::Budget { .. })
    }
}

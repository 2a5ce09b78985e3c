use crate::space::SpaceSpec;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: space has {expected} coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("space mismatch: {0} vs {1}")]
    SpaceMismatch(SpaceSpec, SpaceSpec),
    #[error("invalid space: {0}")]
    InvalidSpace(String),
    #[error("block index {k} out of range (m = {m})")]
    BlockOutOfRange { k: usize, m: usize },
    #[error("norming functional undefined at zero vector")]
    ZeroVector,
    #[error("degenerate point: {0}")]
    DegeneratePoint(String),
    #[error("invalid pair: {0}")]
    InvalidPair(String),
    #[error("not a projection: {0}")]
    NotAProjection(String),
    #[error("invalid basis: {0}")]
    InvalidBasis(String),
    #[error("projection synthesis failed: {0}")]
    SynthesisFailure(String),
    #[error("unsupported for this space: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

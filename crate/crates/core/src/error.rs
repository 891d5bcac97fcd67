use thiserror::Error;

use crate::lattice::Point;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported lattice dimension {0}")]
    InvalidDimension(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("domain has no sites")]
    EmptyDomain,
    #[error("point {0:?} is outside the domain")]
    OutsideDomain(Point),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("configuration is not recurrent")]
    NotRecurrent,
    #[error("configuration is not stable")]
    Unstable,
    #[error("site set is not connected in the forest")]
    NotConnected,
    #[error("invalid forest: {0}")]
    InvalidForest(String),
    #[error("instance too large: {0}")]
    InstanceTooLarge(String),
    #[error("did not converge: {0}")]
    NonConvergence(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate support: {0}")]
    DegenerateSupport(String),
    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

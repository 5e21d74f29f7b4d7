use thiserror::Error;

/// Every failure mode surfaced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("singular configuration: {0}")]
    Singular(String),
    #[error("region outside grid: {0}")]
    RegionOutsideGrid(String),
    #[error("fiber escapes grid: {0}")]
    FiberEscape(String),
    #[error("fiber tangency: {0}")]
    FiberTangency(String),
    #[error("unmatched fiber: {0}")]
    UnmatchedFiber(String),
    #[error("empty support: {0}")]
    EmptySupport(String),
    #[error("descent diverged: {0}")]
    Divergence(String),
    #[error("sheet selection required: {0}")]
    SelectionRequired(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("decomposition invariant violated: {0}")]
    Decomposition(String),
    #[error("tilt too large: {0}")]
    TiltTooLarge(String),
    #[error("outside tubular neighbourhood: {0}")]
    OutsideTube(String),
    #[error("height-bound hypothesis failed: {0}")]
    HeightBound(String),
    #[error("scenario: {0}")]
    Scenario(String),
}

pub type Result<T> = std::result::Result<T, Error>;

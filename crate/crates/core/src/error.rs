use thiserror::Error;

use crate::metric::TrialId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("trials {0} and {1} are distinct but at distance 0")]
    ZeroDistancePair(TrialId, TrialId),
    #[error("trial {0} is already a member of the index")]
    DuplicateMember(TrialId),
    #[error("query on an empty index")]
    EmptyIndex,
    #[error("trial {missing} must be processed before trial {trial}")]
    UnroutedPredecessor { trial: TrialId, missing: TrialId },
    #[error("trial {trial} is at distance {dist} > 1 from the root")]
    DiameterViolation { trial: TrialId, dist: f64 },
    #[error("trial {0} needs a parent node")]
    MissingParent(TrialId),
    #[error("trial {0} has no bandit node")]
    UnknownNode(TrialId),
    #[error("played probability {0} must be positive")]
    ProbabilityMismatch(f64),
    #[error("loss {0} is outside [0, 1]")]
    InvalidLoss(f64),
    #[error("the two balls overlap")]
    OverlappingBalls,
    #[error("boundary crossing of trial {trial} is not covered by any ball")]
    CoverViolation { trial: TrialId },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("loss means are not available")]
    MissingMeans,
    #[error("policy is constant outside the margin")]
    DegeneratePolicy,
    #[error("exact packing number limited to {limit} trials, got {trials}")]
    TooLargeForExact { trials: usize, limit: usize },
    #[error("no construction case applies at trial {0}")]
    ConstructionGap(TrialId),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("session does not meet the keystroke data requirement")]
    InsufficientKeystrokeData,
    #[error("session does not meet the mouse data requirement")]
    InsufficientMouseData,
    #[error("corpus contains no usable keystroke session")]
    EmptyCorpus,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("only {shared} shared digraphs, need {needed}")]
    InsufficientOverlap { shared: usize, needed: usize },
    #[error("input contains a non-finite value")]
    NonFiniteInput,
    #[error("batch of {0} is too small, need at least 2")]
    BatchTooSmall(usize),
    #[error("need {needed} users with two usable sessions, found {found}")]
    InsufficientUsers { needed: usize, found: usize },
    #[error("loss diverged at epoch {epoch}, step {step}")]
    DivergedLoss { epoch: usize, step: usize },
    #[error("need at least {needed} users, got {got}")]
    TooFewUsers { needed: usize, got: usize },
    #[error("no user has two usable sessions")]
    NoEligibleUsers,
    #[error("no cross-user session pair satisfies the device/region constraint")]
    NoEligiblePairs,
    #[error("score list for the {0} side is empty")]
    EmptySide(&'static str),
    #[error("no negative scores to calibrate on")]
    EmptyNegatives,
    #[error("no negative pairs to audit")]
    NoNegativePairs,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("infeasible generator config: {0}")]
    ConfigInfeasible(String),
    #[error("session {0} is already enrolled")]
    DuplicateSessionId(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("no flag for session {0}")]
    UnknownFlag(String),
    #[error("flag for session {0} was already reviewed")]
    AlreadyReviewed(String),
}

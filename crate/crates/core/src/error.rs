use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("scenario needs at least 2 populations, got {0}")]
    TooFewPopulations(usize),
    #[error("scenario needs at least 2 actions, got {0}")]
    TooFewActions(usize),
    #[error("populations[{population}].payoff: {detail}")]
    DimensionMismatch { population: usize, detail: String },
    #[error("populations[{population}].payoff[{row}][{col}] is not finite")]
    NonFinitePayoff {
        population: usize,
        row: usize,
        col: usize,
    },
    #[error("populations[{population}].share = {share} is outside (0, 1)")]
    ShareOutOfRange { population: usize, share: f64 },
    #[error("population shares sum to {0}, expected 1")]
    SharesDoNotSumToOne(f64),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid target output: {0}")]
    InvalidTarget(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("left the controlled domain: y_{action} = {value:e} while y*_{action} > 0")]
    DomainViolation { action: usize, value: f64 },

    #[error("invalid integration config: {0}")]
    InvalidConfig(String),
    #[error("initial state is not interior: x[{population}][{action}] = {value:e} below floor {floor:e}")]
    NotInterior {
        population: usize,
        action: usize,
        value: f64,
        floor: f64,
    },
    #[error("step at t = {time} failed after {halvings} halvings: {cause}")]
    StepFailure {
        time: f64,
        halvings: u32,
        cause: String,
    },

    #[error("F2 = {0:e}: the state is effectively on the target-output set")]
    OnTargetOutputSet(f64),
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("agent count {0} is too small (need at least 100)")]
    TooFewAgents(usize),
    #[error("population {population} with {size} agents cannot represent action {action} of the initial state")]
    CannotRepresent {
        population: usize,
        action: usize,
        size: usize,
    },
    #[error("no agent plays action {action} although y*_{action} > 0")]
    EmptyCarriedAction { action: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

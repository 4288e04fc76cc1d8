use thiserror::Error;

use crate::game_core::{Move, RejectReason};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("unsupported torus dimension {0}")]
    UnsupportedDimension(usize),
    #[error("radius {0} outside (0, 1/4]")]
    RadiusOutOfRange(f64),
    #[error("ratio {0} outside (0, 1)")]
    BadRatio(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("ball radius {radius} too large to separate inverse branches (limit {limit})")]
    RadiusTooLarge { radius: f64, limit: f64 },
    #[error("depth {depth} exceeds configured depth cap {cap}")]
    DepthCapExceeded { depth: usize, cap: usize },
    #[error("invalid system: {0}")]
    InvalidSystem(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstantsError {
    #[error("alpha {alpha} is not below the winning bound {bound} (0 < alpha < {bound})")]
    AlphaAboveBound { alpha: f64, bound: f64 },
    #[error("beta {0} outside (0, 1)")]
    BadBeta(f64),
    #[error("alpha {0} outside (0, 1)")]
    BadAlpha(f64),
    #[error("no admissible block length r up to {cap} (epsilon = {epsilon}); alpha is too close to the bound")]
    NoAdmissibleR { epsilon: f64, cap: usize },
    #[error("inner rectangle width underflows double precision (log10 c = {log10_c:.1})")]
    Underflow { log10_c: f64 },
    #[error("no outer width c' on the grid meets the distortion target")]
    NoOuterWidth,
    #[error("invalid first radius {0}")]
    BadRadius(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrategyError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Constants(#[from] ConstantsError),
    #[error("danger count {count} exceeds bound N = {bound} in block {block}")]
    DangerCountExceeded {
        count: usize,
        bound: usize,
        block: usize,
    },
    #[error("avoidance infeasible at grid resolution: avoided {avoided} of {total}, needed {needed}")]
    AvoidanceInfeasible {
        avoided: usize,
        needed: usize,
        total: usize,
    },
    #[error("block {block} closed with {left} dangers still intersecting Alice's ball")]
    BlockNotCleared { block: usize, left: usize },
    #[error("remote player timed out after {0:?}")]
    RemoteTimeout(std::time::Duration),
    #[error("remote player disconnected")]
    RemoteDisconnected,
    #[error("scripted strategy exhausted after {0} moves")]
    ScriptExhausted(usize),
    #[error("strategy invoked out of turn")]
    OutOfTurn,
}

#[derive(Debug, Error, Clone)]
pub enum GameError {
    #[error("illegal move {offending:?}: {reason}")]
    IllegalMove {
        offending: Move,
        reason: RejectReason,
        moves: Vec<Move>,
    },
    #[error("{player} strategy failed: {source}")]
    Strategy {
        player: &'static str,
        #[source]
        source: StrategyError,
        moves: Vec<Move>,
    },
    #[error("invalid game configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("tree violates the positive-density condition at level {0} (zero covered fraction)")]
    Degenerate(usize),
    #[error("zero-volume node at level {0}")]
    ZeroVolume(usize),
    #[error("tree too shallow: depth {have}, need {need}")]
    TooShallow { have: usize, need: usize },
    #[error("too few fibers: {0} (need at least 8)")]
    TooFewFibers(usize),
    #[error("system is not a skew product")]
    NotSkewProduct,
    #[error("tree condition violated: {0}")]
    Malformed(String),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("insufficient scales: {0}")]
    InsufficientScales(String),
    #[error("too few points: {0} (need at least 100)")]
    TooFewPoints(usize),
    #[error("winning-point verification failed for game {index}: {detail}")]
    VerificationFailed { index: usize, detail: String },
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

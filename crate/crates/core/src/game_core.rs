//! The (α, β) Schmidt game referee.
//!
//! Bob opens with a free ball, then the players alternate: Alice shrinks by
//! α, Bob by β, each new ball nested in the last. The game is cut off once
//! a ball of radius at most `stop_radius` has been played; the center of that
//! ball stands in for the limit point, with error `final_radius`.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::alice_strategy::{activation_index, enumerate_dangers, StrategyConstants};
use crate::dynamics::{PreimageComponent, Rectangle, SystemSpec};
use crate::error::{GameError, StrategyError};
use crate::metric_space::{balls_disjoint, contains_ball, distance_unchecked, Ball, Point};

/// Smallest stop radius the referee accepts.
pub const MIN_STOP_RADIUS: f64 = 1e-12;

/// Relative tolerance on the radius law.
pub const RATIO_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Player {
    Bob,
    Alice,
}

impl Player {
    pub fn other(self) -> Self {
        match self {
            Player::Bob => Player::Alice,
            Player::Alice => Player::Bob,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Player::Bob => "bob",
            Player::Alice => "alice",
        }
    }
}

/// What Alice does before her strategy's constants apply.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FirstMovePolicy {
    /// Reply with the concentric ball until Bob's radius drops to ρ.
    #[default]
    Concentric,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub alpha: f64,
    pub beta: f64,
    pub stop_radius: f64,
    /// Radius of Bob's opening ball for the built-in Bobs.
    pub start_radius: f64,
    #[serde(default)]
    pub first_move_policy: FirstMovePolicy,
}

impl GameConfig {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self {
            alpha,
            beta,
            stop_radius: 1e-9,
            start_radius: 0.1,
            first_move_policy: FirstMovePolicy::Concentric,
        }
    }

    pub fn with_stop_radius(mut self, stop: f64) -> Self {
        self.stop_radius = stop;
        self
    }

    pub fn with_start_radius(mut self, start: f64) -> Self {
        self.start_radius = start;
        self
    }

    pub fn validate(&self) -> Result<(), GameError> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.alpha) || !unit(self.beta) {
            return Err(GameError::Config(format!(
                "alpha and beta must lie in (0, 1), got {} and {}",
                self.alpha, self.beta
            )));
        }
        if !(self.stop_radius >= MIN_STOP_RADIUS) {
            return Err(GameError::Config(format!(
                "stop_radius {} below {MIN_STOP_RADIUS}",
                self.stop_radius
            )));
        }
        if !(self.start_radius > 0.0 && self.start_radius <= crate::metric_space::MAX_RADIUS) {
            return Err(GameError::Config(format!(
                "start_radius {} outside (0, 1/4]",
                self.start_radius
            )));
        }
        Ok(())
    }

    pub fn ratio_for(&self, player: Player) -> f64 {
        match player {
            Player::Alice => self.alpha,
            Player::Bob => self.beta,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Move {
    pub player: Player,
    pub ball: Ball,
    /// 1-based position in the game.
    pub turn: usize,
}

#[derive(Serialize, Deserialize)]
struct MoveWire {
    p: Player,
    c: Point,
    r: f64,
    t: usize,
}

impl Serialize for Move {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        MoveWire {
            p: self.player,
            c: self.ball.center,
            r: self.ball.radius,
            t: self.turn,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Move {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = MoveWire::deserialize(d)?;
        let ball = Ball::new(w.c, w.r).map_err(serde::de::Error::custom)?;
        Ok(Move {
            player: w.p,
            ball,
            turn: w.t,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum RejectReason {
    WrongPlayer { expected: Player },
    RadiusRatio { expected: f64, got: f64 },
    NotContained { distance: f64, allowed: f64 },
    DimensionMismatch { expected: usize, got: usize },
}

impl RejectReason {
    /// Short machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::WrongPlayer { .. } => "wrong-player",
            RejectReason::RadiusRatio { .. } => "radius-ratio",
            RejectReason::NotContained { .. } => "not-contained",
            RejectReason::DimensionMismatch { .. } => "dimension-mismatch",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::WrongPlayer { expected } => {
                write!(f, "wrong-player (expected {})", expected.name())
            }
            RejectReason::RadiusRatio { expected, got } => {
                write!(f, "radius-ratio (expected {expected:e}, got {got:e})")
            }
            RejectReason::NotContained { distance, allowed } => write!(
                f,
                "not-contained (center offset {distance:e} exceeds {allowed:e})"
            ),
            RejectReason::DimensionMismatch { expected, got } => {
                write!(f, "dimension-mismatch (expected {expected}, got {got})")
            }
        }
    }
}

/// Check `next` against the last accepted move (`None` for the opening move).
pub fn validate_move(
    prev: Option<&Move>,
    next: &Move,
    config: &GameConfig,
) -> Result<(), RejectReason> {
    let expected_player = prev.map_or(Player::Bob, |m| m.player.other());
    if next.player != expected_player {
        return Err(RejectReason::WrongPlayer {
            expected: expected_player,
        });
    }
    let Some(prev) = prev else {
        return Ok(());
    };
    if prev.ball.dim() != next.ball.dim() {
        return Err(RejectReason::DimensionMismatch {
            expected: prev.ball.dim(),
            got: next.ball.dim(),
        });
    }
    let expected = prev.ball.radius * config.ratio_for(next.player);
    if (next.ball.radius - expected).abs() > RATIO_TOLERANCE * expected {
        return Err(RejectReason::RadiusRatio {
            expected,
            got: next.ball.radius,
        });
    }
    if !contains_ball(&prev.ball, &next.ball) {
        return Err(RejectReason::NotContained {
            distance: distance_unchecked(&prev.ball.center, &next.ball.center),
            allowed: prev.ball.radius - next.ball.radius,
        });
    }
    Ok(())
}

/// Read-only game state handed to strategies.
#[derive(Clone, Copy, Debug)]
pub struct GameView<'a> {
    pub config: &'a GameConfig,
    pub system: &'a SystemSpec,
    pub rectangle: &'a Rectangle,
    pub moves: &'a [Move],
}

impl GameView<'_> {
    pub fn to_move(&self) -> Player {
        self.moves.last().map_or(Player::Bob, |m| m.player.other())
    }

    pub fn last_ball(&self) -> Option<&Ball> {
        self.moves.last().map(|m| &m.ball)
    }

    /// Radius the next move must have, if determined.
    pub fn required_radius(&self) -> Option<f64> {
        self.moves
            .last()
            .map(|m| m.ball.radius * self.config.ratio_for(m.player.other()))
    }

    /// Number of moves the current player has already made.
    pub fn own_move_count(&self) -> usize {
        let me = self.to_move();
        self.moves.iter().filter(|m| m.player == me).count()
    }
}

/// A player. Instances are bound to a single game.
pub trait Strategy: Send {
    fn choose(&mut self, view: &GameView<'_>) -> Result<Ball, StrategyError>;

    fn name(&self) -> String;
}

impl<S: Strategy + ?Sized> Strategy for Box<S> {
    fn choose(&mut self, view: &GameView<'_>) -> Result<Ball, StrategyError> {
        (**self).choose(view)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub config: GameConfig,
    pub system: SystemSpec,
    pub rectangle: Rectangle,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_rectangles: Vec<Rectangle>,
    pub moves: Vec<Move>,
    pub outcome: Point,
    pub final_radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationReport>,
}

impl Transcript {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("transcript serializes")
    }

    pub fn alice_moves(&self) -> impl Iterator<Item = &Move> {
        self.moves.iter().filter(|m| m.player == Player::Alice)
    }
}

/// Play one game to the stop radius.
pub fn run_game(
    config: &GameConfig,
    system: &SystemSpec,
    rectangle: &Rectangle,
    alice: &mut dyn Strategy,
    bob: &mut dyn Strategy,
) -> Result<Transcript, GameError> {
    run_game_observed(config, system, rectangle, alice, bob, &mut |_| {})
}

/// As [`run_game`], calling `observer` after every accepted move.
pub fn run_game_observed(
    config: &GameConfig,
    system: &SystemSpec,
    rectangle: &Rectangle,
    alice: &mut dyn Strategy,
    bob: &mut dyn Strategy,
    observer: &mut dyn FnMut(&Move),
) -> Result<Transcript, GameError> {
    config.validate()?;
    let mut moves: Vec<Move> = Vec::new();
    loop {
        let view = GameView {
            config,
            system,
            rectangle,
            moves: &moves,
        };
        let player = view.to_move();
        let strategy: &mut dyn Strategy = match player {
            Player::Alice => &mut *alice,
            Player::Bob => &mut *bob,
        };
        let ball = strategy.choose(&view).map_err(|source| GameError::Strategy {
            player: player.name(),
            source,
            moves: moves.clone(),
        })?;
        let mv = Move {
            player,
            ball,
            turn: moves.len() + 1,
        };
        if let Err(reason) = validate_move(moves.last(), &mv, config) {
            return Err(GameError::IllegalMove {
                offending: mv,
                reason,
                moves,
            });
        }
        moves.push(mv);
        observer(&mv);
        if ball.radius <= config.stop_radius {
            break;
        }
    }
    let last = moves.last().expect("at least one move").ball;
    Ok(Transcript {
        config: *config,
        system: system.clone(),
        rectangle: *rectangle,
        extra_rectangles: Vec::new(),
        moves,
        outcome: last.center,
        final_radius: last.radius,
        verification: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub block: usize,
    /// Index into `moves` of Bob's ball opening the block.
    pub opening_move: usize,
    /// Index of Alice's closing ball, if the game got that far.
    pub closing_move: Option<usize>,
    pub dangers: Vec<PreimageComponent>,
    /// Dangers intersecting Alice's closing ball.
    pub violated: Vec<PreimageComponent>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitCheck {
    pub horizon: usize,
    pub min_distance: f64,
    /// `c/2 − final_radius`; a negative value makes the check vacuous.
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub legal: bool,
    pub illegal: Vec<String>,
    /// Move index at which Alice's constants became active.
    pub activation: Option<usize>,
    pub blocks: Vec<BlockReport>,
    pub max_danger_count: usize,
    pub danger_bound: usize,
    pub errors: Vec<String>,
    pub orbit: OrbitCheck,
    pub passed: bool,
}

impl VerificationReport {
    pub fn violated_blocks(&self) -> usize {
        self.blocks.iter().filter(|b| !b.violated.is_empty()).count()
    }
}

/// Horizon at which an outcome known to within `final_radius` can still be
/// certified against a rectangle of width `c`.
pub fn verification_horizon(system: &SystemSpec, c: f64, final_radius: f64) -> usize {
    // the small offset keeps exact powers of σ1 from rounding up a step
    let h = ((c / (2.0 * final_radius)).ln() / system.sigma1.ln() - 1e-9).ceil();
    if h.is_finite() && h > 0.0 {
        h as usize
    } else {
        0
    }
}

/// Orbit check of an outcome against one rectangle.
pub fn check_orbit(
    system: &SystemSpec,
    rectangle: &Rectangle,
    outcome: &Point,
    final_radius: f64,
) -> OrbitCheck {
    let c = rectangle.width;
    let horizon = verification_horizon(system, c, final_radius);
    let threshold = c / 2.0 - final_radius;
    let min_distance = system
        .orbit_min_distance(&system.lift(outcome), &rectangle.target, horizon)
        .unwrap_or(f64::NAN);
    OrbitCheck {
        horizon,
        min_distance,
        threshold,
        passed: min_distance >= threshold,
    }
}

/// Re-check a finished game independently of the strategy that played it.
pub fn verify_transcript(
    t: &Transcript,
    constants: &StrategyConstants,
    system: &SystemSpec,
    rectangle: &Rectangle,
) -> VerificationReport {
    let mut illegal = Vec::new();
    let mut prev: Option<&Move> = None;
    for mv in &t.moves {
        if let Err(reason) = validate_move(prev, mv, &t.config) {
            illegal.push(format!("move {}: {}", mv.turn, reason));
        }
        prev = Some(mv);
    }

    let mut blocks = Vec::new();
    let mut errors = Vec::new();
    let mut max_count = 0;
    let activation = activation_index(&t.moves, constants);
    if let Some(a) = activation {
        let r = constants.r;
        let mut j = 0;
        loop {
            let opening = a + 2 * j * r;
            if opening >= t.moves.len() {
                break;
            }
            let bob_ball = t.moves[opening].ball;
            let closing = opening + 2 * r - 1;
            let closing_move = (closing < t.moves.len()).then_some(closing);
            match enumerate_dangers(system, rectangle, constants, j, &bob_ball) {
                Ok(dangers) => {
                    max_count = max_count.max(dangers.len());
                    if dangers.len() > constants.n_bound {
                        errors.push(format!(
                            "block {j}: {} dangers exceed N = {}",
                            dangers.len(),
                            constants.n_bound
                        ));
                    }
                    let violated = match closing_move {
                        Some(ci) => dangers
                            .iter()
                            .filter(|d| !balls_disjoint(&d.hull, &t.moves[ci].ball))
                            .copied()
                            .collect(),
                        None => Vec::new(),
                    };
                    blocks.push(BlockReport {
                        block: j,
                        opening_move: opening,
                        closing_move,
                        dangers,
                        violated,
                    });
                }
                Err(e) => errors.push(format!("block {j}: {e}")),
            }
            j += 1;
        }
    }

    let mut orbit = check_orbit(system, rectangle, &t.outcome, t.final_radius);
    for extra in &t.extra_rectangles {
        let o = check_orbit(system, extra, &t.outcome, t.final_radius);
        if !o.passed || o.min_distance - o.threshold < orbit.min_distance - orbit.threshold {
            orbit = o;
        }
    }
    let legal = illegal.is_empty();
    let passed = legal
        && errors.is_empty()
        && blocks.iter().all(|b| b.violated.is_empty())
        && orbit.passed;
    VerificationReport {
        legal,
        illegal,
        activation,
        blocks,
        max_danger_count: max_count,
        danger_bound: constants.n_bound,
        errors,
        orbit,
        passed,
    }
}

/// Legality and orbit checks for a game against several rectangles, where
/// block bookkeeping belongs to the individual sub-strategies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiTargetReport {
    pub legal: bool,
    pub illegal: Vec<String>,
    pub orbits: Vec<OrbitCheck>,
    pub passed: bool,
}

pub fn verify_targets(t: &Transcript) -> MultiTargetReport {
    let mut illegal = Vec::new();
    let mut prev: Option<&Move> = None;
    for mv in &t.moves {
        if let Err(reason) = validate_move(prev, mv, &t.config) {
            illegal.push(format!("move {}: {}", mv.turn, reason));
        }
        prev = Some(mv);
    }
    let orbits: Vec<OrbitCheck> = std::iter::once(&t.rectangle)
        .chain(&t.extra_rectangles)
        .map(|r| check_orbit(&t.system, r, &t.outcome, t.final_radius))
        .collect();
    let passed = illegal.is_empty() && orbits.iter().all(|o| o.passed);
    MultiTargetReport {
        legal: illegal.is_empty(),
        illegal,
        orbits,
        passed,
    }
}

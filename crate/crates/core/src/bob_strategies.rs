//! Bob players: uniform random, a danger chaser, scripted replay, and a
//! remote player driven through message channels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::mpsc::{Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use crate::dynamics::PreimageComponent;
use crate::error::StrategyError;
use crate::game_core::{validate_move, GameView, Move, Player, Strategy, Transcript, VerificationReport};
use crate::metric_space::{contains_ball, distance_unchecked, Ball, Point};

/// Fraction of the legal reach Bob actually uses, so rounding in the wrap
/// never pushes a proposal across the containment boundary.
const REACH_SHRINK: f64 = 1.0 - 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BobSpec {
    Random { seed: u64 },
    Chaser { depth_bias: usize },
    Scripted { transcript: String },
    Remote { session: String },
}

/// The ball Bob must answer into and the radius he must use.
fn legal_region(view: &GameView<'_>) -> Option<(Ball, f64)> {
    let last = view.last_ball()?;
    Some((*last, last.radius * view.config.beta))
}

fn random_point(rng: &mut ChaCha8Rng, u: usize) -> Point {
    if u == 1 {
        Point::on_circle(rng.gen())
    } else {
        Point::on_torus(rng.gen(), rng.gen())
    }
}

/// Move `from` toward `to` by at most `reach`.
fn step_toward(from: &Point, to: &Point, reach: f64) -> Point {
    let d = from.displacement_to(to);
    let len = distance_unchecked(from, to);
    if len <= reach {
        *to
    } else {
        let s = reach / len;
        from.shifted(&[d[0] * s, d[1] * s])
    }
}

/// Nudge a candidate back inside `container` if rounding pushed it out.
fn settle(container: &Ball, mut center: Point, radius: f64) -> Result<Ball, StrategyError> {
    for _ in 0..60 {
        let b = Ball::new(center, radius)?;
        if contains_ball(container, &b) {
            return Ok(b);
        }
        center = step_toward(&container.center, &center, 0.5 * distance_unchecked(&container.center, &center));
    }
    Ok(Ball::new(container.center, radius)?)
}

/// Uniformly random legal centers.
#[derive(Clone, Debug)]
pub struct RandomBob {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomBob {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl Strategy for RandomBob {
    fn choose(&mut self, view: &GameView<'_>) -> Result<Ball, StrategyError> {
        let u = view.system.u;
        let Some((alice, radius)) = legal_region(view) else {
            return Ok(Ball::new(random_point(&mut self.rng, u), view.config.start_radius)?);
        };
        let reach = (alice.radius - radius) * REACH_SHRINK;
        let offset = if u == 1 {
            [self.rng.gen_range(-reach..=reach), 0.0]
        } else {
            loop {
                let v = [self.rng.gen_range(-reach..=reach), self.rng.gen_range(-reach..=reach)];
                if v[0].hypot(v[1]) <= reach {
                    break v;
                }
            }
        };
        settle(&alice, alice.center.shifted(&offset), radius)
    }

    fn name(&self) -> String {
        format!("bob-random({})", self.seed)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChaserStats {
    pub moves: usize,
    /// Moves that failed to get strictly closer to a target not yet reached.
    pub non_decreasing: usize,
    pub deepest: usize,
}

/// Bob steering into the nearest preimage component of the target rectangle.
#[derive(Clone, Debug)]
pub struct ChaserBob {
    depth_bias: usize,
    tracked: Option<PreimageComponent>,
    stats: ChaserStats,
    /// Shifts the opening ball by up to half its radius.
    jitter: Option<ChaCha8Rng>,
}

impl ChaserBob {
    pub fn new(depth_bias: usize) -> Self {
        Self {
            depth_bias,
            tracked: None,
            stats: ChaserStats::default(),
            jitter: None,
        }
    }

    /// Chaser whose opening ball is shifted by a seeded offset, so that
    /// batches of games differ.
    pub fn seeded(depth_bias: usize, seed: u64) -> Self {
        Self {
            jitter: Some(ChaCha8Rng::seed_from_u64(seed)),
            ..Self::new(depth_bias)
        }
    }

    pub fn stats(&self) -> &ChaserStats {
        &self.stats
    }

    pub fn tracked(&self) -> Option<&PreimageComponent> {
        self.tracked.as_ref()
    }

    /// Components near Alice's ball at the depth where their spacing drops
    /// below the ball's diameter, plus `depth_bias` levels.
    fn candidates(&self, view: &GameView<'_>, alice: &Ball) -> Vec<PreimageComponent> {
        let sys = view.system;
        let base = ((1.0 / (2.0 * alice.radius)).ln() / sys.sigma1.ln()).ceil().max(0.0) as usize;
        let first = (base + self.depth_bias).min(sys.depth_cap);
        let mut found = Vec::new();
        for k in first..=(first + 8).min(sys.depth_cap) {
            if let Ok(mut comps) = sys.preimage_components(view.rectangle, k, alice) {
                found.append(&mut comps);
            }
            if found.len() >= 2 || (k >= first + 2 && !found.is_empty()) {
                break;
            }
        }
        found
    }
}

impl Strategy for ChaserBob {
    fn choose(&mut self, view: &GameView<'_>) -> Result<Ball, StrategyError> {
        let Some((alice, radius)) = legal_region(view) else {
            // open on top of the avoided point
            let mut center = view.system.unstable_part(&view.rectangle.target);
            if let Some(rng) = self.jitter.as_mut() {
                let h = 0.5 * view.config.start_radius;
                let shift = [rng.gen_range(-h..=h), rng.gen_range(-h..=h)];
                center = center.shifted(&shift);
            }
            return Ok(Ball::new(center, view.config.start_radius)?);
        };
        let comps = self.candidates(view, &alice);
        let nearest = comps.into_iter().min_by(|a, b| {
            let da = distance_unchecked(&a.hull.center, &alice.center);
            let db = distance_unchecked(&b.hull.center, &alice.center);
            da.total_cmp(&db).then(b.depth.cmp(&a.depth))
        });
        self.stats.moves += 1;
        let Some(target) = nearest else {
            self.tracked = None;
            return Ok(Ball::new(alice.center, radius)?);
        };
        self.stats.deepest = self.stats.deepest.max(target.depth);
        let reach = (alice.radius - radius) * REACH_SHRINK;
        let goal = target.hull.center;
        let before = distance_unchecked(&alice.center, &goal);
        let ball = settle(&alice, step_toward(&alice.center, &goal, reach), radius)?;
        let after = distance_unchecked(&ball.center, &goal);
        if before > 0.0 && after >= before {
            self.stats.non_decreasing += 1;
        }
        self.tracked = Some(target);
        Ok(ball)
    }

    fn name(&self) -> String {
        format!("bob-chaser({})", self.depth_bias)
    }
}

/// Replays a fixed list of balls for one player.
#[derive(Clone, Debug)]
pub struct ScriptedPlayer {
    balls: Vec<Ball>,
    next: usize,
}

impl ScriptedPlayer {
    pub fn new(balls: Vec<Ball>) -> Self {
        Self { balls, next: 0 }
    }

    pub fn from_transcript(t: &Transcript, player: Player) -> Self {
        Self::new(
            t.moves
                .iter()
                .filter(|m| m.player == player)
                .map(|m| m.ball)
                .collect(),
        )
    }
}

impl Strategy for ScriptedPlayer {
    fn choose(&mut self, _view: &GameView<'_>) -> Result<Ball, StrategyError> {
        let b = self
            .balls
            .get(self.next)
            .copied()
            .ok_or(StrategyError::ScriptExhausted(self.next))?;
        self.next += 1;
        Ok(b)
    }

    fn name(&self) -> String {
        "scripted".into()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallConstraints {
    /// Ball the proposal must lie in; absent for the opening move.
    pub container: Option<Ball>,
    /// Required radius; absent when free.
    pub radius: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictResult {
    Accept,
    Reject,
}

/// Messages from the referee to a remote Bob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Session {
        id: String,
    },
    YourTurn {
        ball_constraints: BallConstraints,
    },
    Verdict {
        result: VerdictResult,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
    AliceMoved {
        ball: Ball,
    },
    GameOver {
        outcome: Option<Point>,
        final_radius: Option<f64>,
        report: Option<VerificationReport>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
}

/// Messages from a remote Bob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Propose { c: Vec<f64>, r: f64 },
}

/// Bob played by whoever holds the other end of two channels.
///
/// Proposals are checked with the referee's own rules; rejected ones are
/// answered with a verdict and Bob is asked again, so the game never sees
/// an illegal move from this player.
pub struct RemoteBob {
    outbox: Sender<ServerMessage>,
    inbox: Receiver<ClientMessage>,
    timeout: Duration,
    announced: usize,
}

impl RemoteBob {
    pub fn new(outbox: Sender<ServerMessage>, inbox: Receiver<ClientMessage>, timeout: Duration) -> Self {
        Self {
            outbox,
            inbox,
            timeout,
            announced: 0,
        }
    }

    fn send(&self, m: ServerMessage) -> Result<(), StrategyError> {
        self.outbox.send(m).map_err(|_| StrategyError::RemoteDisconnected)
    }

    fn reject(&self, reason: String) -> Result<(), StrategyError> {
        self.send(ServerMessage::Verdict {
            result: VerdictResult::Reject,
            reason: Some(reason),
        })
    }
}

impl Strategy for RemoteBob {
    fn choose(&mut self, view: &GameView<'_>) -> Result<Ball, StrategyError> {
        for m in &view.moves[self.announced.min(view.moves.len())..] {
            if m.player == Player::Alice {
                self.send(ServerMessage::AliceMoved { ball: m.ball })?;
            }
        }
        self.announced = view.moves.len();
        self.send(ServerMessage::YourTurn {
            ball_constraints: BallConstraints {
                container: view.last_ball().copied(),
                radius: view.required_radius(),
            },
        })?;
        loop {
            let msg = match self.inbox.recv_timeout(self.timeout) {
                Ok(m) => m,
                Err(RecvTimeoutError::Timeout) => return Err(StrategyError::RemoteTimeout(self.timeout)),
                Err(RecvTimeoutError::Disconnected) => return Err(StrategyError::RemoteDisconnected),
            };
            let ClientMessage::Propose { c, r } = msg;
            if c.len() != view.system.u {
                self.reject(format!(
                    "dimension-mismatch (expected {} coordinates, got {})",
                    view.system.u,
                    c.len()
                ))?;
                continue;
            }
            let ball = match Point::new(&c).and_then(|p| Ball::new(p, r)) {
                Ok(b) if c.iter().all(|v| v.is_finite()) => b,
                Ok(_) => {
                    self.reject("malformed (non-finite coordinate)".into())?;
                    continue;
                }
                Err(e) => {
                    self.reject(format!("malformed ({e})"))?;
                    continue;
                }
            };
            let mv = Move {
                player: Player::Bob,
                ball,
                turn: view.moves.len() + 1,
            };
            if let Err(reason) = validate_move(view.moves.last(), &mv, view.config) {
                self.reject(reason.to_string())?;
                continue;
            }
            self.send(ServerMessage::Verdict {
                result: VerdictResult::Accept,
                reason: None,
            })?;
            self.announced = view.moves.len() + 1;
            return Ok(ball);
        }
    }

    fn name(&self) -> String {
        "bob-remote".into()
    }
}

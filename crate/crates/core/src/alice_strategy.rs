//! Alice's constructive winning strategy against `E_x(f, y)`.
//!
//! After a waiting phase the game is cut into blocks of `r` Alice turns. At
//! the start of block `j` Alice lists the preimage components whose size lies
//! in the block window and which meet Bob's opening ball; each turn she picks
//! the grid ball that clears the most of them. Since `(1 − ε)^r·N < 1`, none
//! survive the block.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::dynamics::{PreimageComponent, Rectangle, SystemSpec};
use crate::error::{ConstantsError, DynamicsError, StrategyError};
use crate::game_core::{GameView, Move, Player, Strategy};
use crate::metric_space::{balls_disjoint, contains_ball, Ball, Point, MAX_RADIUS};

/// Cap on the block-length search.
pub const MAX_BLOCK_LENGTH: usize = 10_000;

/// Radius tolerance for recognizing the activation radius.
const ACTIVATION_SLACK: f64 = 1e-12;

/// Power-law and Federer constants `(C, D)` of the flat-torus playground.
pub fn playground_constants(u: usize) -> (f64, f64) {
    if u == 1 {
        (1.0, 2.0)
    } else {
        (1.0, 4.0)
    }
}

/// Open upper bound `½·(1/(C·D))^{1/u}` on winning α.
pub fn winning_alpha_bound(big_c: f64, big_d: f64, u: usize) -> f64 {
    0.5 * (1.0 / (big_c * big_d)).powf(1.0 / u as f64)
}

/// Avoidance fraction `1/D − C·(2α)^u`.
pub fn avoidance_fraction(big_c: f64, big_d: f64, u: usize, alpha: f64) -> f64 {
    1.0 / big_d - big_c * (2.0 * alpha).powi(u as i32)
}

/// `N(r) = ⌊(ln K + r·ln(1/(αβ)))/ln σ1⌋ + 3`.
pub fn danger_bound(k: f64, r: usize, alpha: f64, beta: f64, sigma1: f64) -> usize {
    ((k.ln() + r as f64 * (1.0 / (alpha * beta)).ln()) / sigma1.ln()).floor() as usize + 3
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeriveOptions {
    /// Distortion slack: `K(c′) ≤ 1 + η`.
    pub eta: f64,
    /// Local-manifold scale `L`; the activation cap is `min(ρ0, L/100)`.
    pub l_scale: f64,
    /// Factor applied under the two upper bounds on `c`.
    pub safety: f64,
}

impl Default for DeriveOptions {
    fn default() -> Self {
        Self {
            eta: 0.01,
            l_scale: 1.0,
            safety: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyConstants {
    pub alpha: f64,
    pub beta: f64,
    pub u: usize,
    #[serde(rename = "C")]
    pub big_c: f64,
    #[serde(rename = "D")]
    pub big_d: f64,
    pub epsilon: f64,
    pub r: usize,
    #[serde(rename = "N")]
    pub n_bound: usize,
    pub rho0: f64,
    pub rho: f64,
    #[serde(rename = "L")]
    pub l_scale: f64,
    pub c_prime: f64,
    pub c: f64,
    pub log10_c: f64,
    #[serde(rename = "K")]
    pub k_distortion: f64,
    pub eta: f64,
    pub sigma1: f64,
    pub first_radius: f64,
    /// False when `c` or `r` were set by hand rather than derived.
    pub derived: bool,
}

fn check_unit(alpha: f64, beta: f64) -> Result<(), ConstantsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ConstantsError::BadAlpha(alpha));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(ConstantsError::BadBeta(beta));
    }
    Ok(())
}

/// First radius `≤ cap` in the Bob sequence `first·(αβ)^m`, built by the
/// same multiplications the referee sees.
fn activation_radius(first: f64, alpha: f64, beta: f64, cap: f64) -> f64 {
    let mut r = first;
    while r > cap * (1.0 + ACTIVATION_SLACK) {
        r = r * alpha * beta;
    }
    r
}

/// Largest `c′ = 2^{-i}/(4·degree)` with `K(c′) ≤ 1 + η`.
fn outer_width(system: &SystemSpec, eta: f64) -> Result<f64, ConstantsError> {
    let mut c = 1.0 / (4.0 * system.degree() as f64);
    for _ in 0..200 {
        if system.distortion_constant(c) <= 1.0 + eta {
            return Ok(c);
        }
        c /= 2.0;
    }
    Err(ConstantsError::NoOuterWidth)
}

pub fn derive_constants(
    system: &SystemSpec,
    alpha: f64,
    beta: f64,
    first_radius: f64,
) -> Result<StrategyConstants, ConstantsError> {
    derive_constants_with(system, alpha, beta, first_radius, &DeriveOptions::default())
}

pub fn derive_constants_with(
    system: &SystemSpec,
    alpha: f64,
    beta: f64,
    first_radius: f64,
    opts: &DeriveOptions,
) -> Result<StrategyConstants, ConstantsError> {
    check_unit(alpha, beta)?;
    let u = system.u;
    let (big_c, big_d) = playground_constants(u);
    let bound = winning_alpha_bound(big_c, big_d, u);
    if alpha >= bound {
        return Err(ConstantsError::AlphaAboveBound { alpha, bound });
    }
    if !(first_radius > 0.0 && first_radius <= MAX_RADIUS) {
        return Err(ConstantsError::BadRadius(first_radius));
    }
    let epsilon = avoidance_fraction(big_c, big_d, u, alpha);
    if epsilon <= 0.0 {
        return Err(ConstantsError::NoAdmissibleR {
            epsilon,
            cap: MAX_BLOCK_LENGTH,
        });
    }
    let c_prime = outer_width(system, opts.eta)?;
    let k = system.distortion_constant(c_prime);

    let r = (1..=MAX_BLOCK_LENGTH)
        .find(|&r| {
            let n = danger_bound(k, r, alpha, beta, system.sigma1);
            r as f64 * (1.0 - epsilon).ln() + (n as f64).ln() < 0.0
        })
        .ok_or(ConstantsError::NoAdmissibleR {
            epsilon,
            cap: MAX_BLOCK_LENGTH,
        })?;
    let n_bound = danger_bound(k, r, alpha, beta, system.sigma1);

    let rho0 = MAX_RADIUS;
    let rho = activation_radius(first_radius, alpha, beta, rho0.min(opts.l_scale / 100.0));

    let span = (2 * r - 1) as f64 * (alpha * beta).ln();
    let from_outer = alpha.ln() + c_prime.ln() + span - 100f64.ln() - k.ln();
    let from_rho = alpha.ln() + rho.ln() + span;
    let ln_c = opts.safety.ln() + from_outer.min(from_rho);
    let log10_c = ln_c / std::f64::consts::LN_10;
    let c = ln_c.exp();
    if !(c >= f64::MIN_POSITIVE) {
        return Err(ConstantsError::Underflow { log10_c });
    }
    Ok(StrategyConstants {
        alpha,
        beta,
        u,
        big_c,
        big_d,
        epsilon,
        r,
        n_bound,
        rho0,
        rho,
        l_scale: opts.l_scale,
        c_prime,
        c,
        log10_c,
        k_distortion: k,
        eta: opts.eta,
        sigma1: system.sigma1,
        first_radius,
        derived: true,
    })
}

impl StrategyConstants {
    /// Derived constants with `c` and `r` overridden, `N` recomputed from `r`.
    ///
    /// Hand-set constants need not satisfy the proof's inequalities; they let
    /// tests drive the danger machinery at scales visible in double precision.
    pub fn custom(
        system: &SystemSpec,
        alpha: f64,
        beta: f64,
        first_radius: f64,
        c: f64,
        r: usize,
    ) -> Result<Self, ConstantsError> {
        let opts = DeriveOptions::default();
        check_unit(alpha, beta)?;
        let (big_c, big_d) = playground_constants(system.u);
        let bound = winning_alpha_bound(big_c, big_d, system.u);
        if alpha >= bound {
            return Err(ConstantsError::AlphaAboveBound { alpha, bound });
        }
        if !(first_radius > 0.0 && first_radius <= MAX_RADIUS) {
            return Err(ConstantsError::BadRadius(first_radius));
        }
        if !(c > 0.0 && c <= 0.5) || r == 0 {
            return Err(ConstantsError::BadRadius(c));
        }
        let c_prime = outer_width(system, opts.eta)?;
        let k = system.distortion_constant(c_prime);
        Ok(Self {
            alpha,
            beta,
            u: system.u,
            big_c,
            big_d,
            epsilon: avoidance_fraction(big_c, big_d, system.u, alpha),
            r,
            n_bound: danger_bound(k, r, alpha, beta, system.sigma1),
            rho0: MAX_RADIUS,
            rho: activation_radius(first_radius, alpha, beta, MAX_RADIUS.min(opts.l_scale / 100.0)),
            l_scale: opts.l_scale,
            c_prime,
            c,
            log10_c: c.log10(),
            k_distortion: k,
            eta: opts.eta,
            sigma1: system.sigma1,
            first_radius,
            derived: false,
        })
    }

    /// Half-open window `[lo, hi)` of danger sizes handled in block `j`.
    pub fn block_window(&self, j: usize) -> (f64, f64) {
        let ab = (self.alpha * self.beta).ln();
        let base = self.alpha.ln() + self.rho.ln();
        let r = self.r as f64;
        let lo = base + ((j as f64 + 2.0) * r - 1.0) * ab;
        let hi = base + ((j as f64 + 1.0) * r - 1.0) * ab;
        (lo.exp(), hi.exp())
    }

    /// Deepest preimage level that can still reach the block-`j` window.
    pub fn depth_limit(&self, j: usize) -> Option<usize> {
        let ratio = self.log10_c * std::f64::consts::LN_10 - self.block_window_log(j);
        if ratio < 0.0 {
            None
        } else {
            Some((ratio / self.sigma1.ln()).ceil() as usize)
        }
    }

    /// `ln` of the lower window edge, finite even where the edge underflows.
    fn block_window_log(&self, j: usize) -> f64 {
        self.alpha.ln()
            + self.rho.ln()
            + ((j as f64 + 2.0) * self.r as f64 - 1.0) * (self.alpha * self.beta).ln()
    }

    pub fn report(&self) -> ConstantsReport {
        ConstantsReport::new(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub constants: StrategyConstants,
    pub alpha_bound: f64,
    pub block_product: f64,
    pub inequalities: Vec<Inequality>,
}

impl ConstantsReport {
    fn new(k: &StrategyConstants) -> Self {
        let alpha_bound = winning_alpha_bound(k.big_c, k.big_d, k.u);
        let block_product = (1.0 - k.epsilon).powi(k.r as i32) * k.n_bound as f64;
        let ab = (k.alpha * k.beta).ln();
        let span = (2 * k.r - 1) as f64 * ab;
        let ln10 = std::f64::consts::LN_10;
        let outer = (k.alpha.ln() + k.c_prime.ln() + span - 100f64.ln() - k.k_distortion.ln()) / ln10;
        let inner = (k.alpha.ln() + k.rho.ln() + span) / ln10;
        let mut ineq = vec![
            Inequality {
                name: "alpha < alpha_bound".into(),
                lhs: k.alpha,
                rhs: alpha_bound,
                holds: k.alpha < alpha_bound,
            },
            Inequality {
                name: "epsilon > 0".into(),
                lhs: k.epsilon,
                rhs: 0.0,
                holds: k.epsilon > 0.0,
            },
            Inequality {
                name: "(1-epsilon)^r * N < 1".into(),
                lhs: block_product,
                rhs: 1.0,
                holds: block_product < 1.0,
            },
        ];
        if k.r > 1 {
            let prev_n = danger_bound(k.k_distortion, k.r - 1, k.alpha, k.beta, k.sigma1);
            let prev = (1.0 - k.epsilon).powi(k.r as i32 - 1) * prev_n as f64;
            ineq.push(Inequality {
                name: "(1-epsilon)^(r-1) * N(r-1) >= 1".into(),
                lhs: prev,
                rhs: 1.0,
                holds: prev >= 1.0,
            });
        }
        ineq.push(Inequality {
            name: "K(c') <= 1 + eta".into(),
            lhs: k.k_distortion,
            rhs: 1.0 + k.eta,
            holds: k.k_distortion <= 1.0 + k.eta,
        });
        ineq.push(Inequality {
            name: "log10 c <= log10(alpha c' (ab)^(2r-1) / (100 K))".into(),
            lhs: k.log10_c,
            rhs: outer,
            holds: k.log10_c <= outer,
        });
        ineq.push(Inequality {
            name: "log10 c < log10(alpha rho (ab)^(2r-1))".into(),
            lhs: k.log10_c,
            rhs: inner,
            holds: k.log10_c < inner,
        });
        Self {
            constants: k.clone(),
            alpha_bound,
            block_product,
            inequalities: ineq,
        }
    }

    pub fn all_hold(&self) -> bool {
        self.inequalities.iter().all(|i| i.holds)
    }

    pub fn to_text(&self) -> String {
        let k = &self.constants;
        let mut s = String::new();
        let _ = writeln!(s, "alpha        = {}", k.alpha);
        let _ = writeln!(s, "beta         = {}", k.beta);
        let _ = writeln!(s, "u            = {}", k.u);
        let _ = writeln!(s, "C, D         = {}, {}", k.big_c, k.big_d);
        let _ = writeln!(s, "alpha bound  = {}", self.alpha_bound);
        let _ = writeln!(s, "epsilon      = {}", k.epsilon);
        let _ = writeln!(s, "r            = {}", k.r);
        let _ = writeln!(s, "N            = {}", k.n_bound);
        let _ = writeln!(s, "(1-eps)^r N  = {:.6}", self.block_product);
        let _ = writeln!(s, "rho0         = {}", k.rho0);
        let _ = writeln!(s, "L            = {}", k.l_scale);
        let _ = writeln!(s, "rho          = {:e}", k.rho);
        let _ = writeln!(s, "c'           = {}", k.c_prime);
        let _ = writeln!(s, "K = K(c')    = {}", k.k_distortion);
        let _ = writeln!(s, "eta          = {}", k.eta);
        let _ = writeln!(s, "c            = {:e} (log10 {:.3})", k.c, k.log10_c);
        let _ = writeln!(s, "derived      = {}", k.derived);
        for i in &self.inequalities {
            let _ = writeln!(
                s,
                "[{}] {}: {} vs {}",
                if i.holds { "ok" } else { "FAIL" },
                i.name,
                i.lhs,
                i.rhs
            );
        }
        s
    }
}

/// Index of the first Bob move at or below the activation radius.
pub fn activation_index(moves: &[Move], constants: &StrategyConstants) -> Option<usize> {
    moves.iter().position(|m| {
        m.player == Player::Bob && m.ball.radius <= constants.rho * (1.0 + ACTIVATION_SLACK)
    })
}

/// Size used for the block windows: diameter bound on a circle, `R` for `u = 2`.
fn danger_size(c: &PreimageComponent) -> f64 {
    c.size()
}

/// All block-`j` dangers meeting `bob_ball`, without the count assertion.
pub fn enumerate_dangers(
    system: &SystemSpec,
    rect: &Rectangle,
    constants: &StrategyConstants,
    j: usize,
    bob_ball: &Ball,
) -> Result<Vec<PreimageComponent>, StrategyError> {
    let Some(kmax) = constants.depth_limit(j) else {
        return Ok(Vec::new());
    };
    if kmax > system.depth_cap {
        return Err(DynamicsError::DepthCapExceeded {
            depth: kmax,
            cap: system.depth_cap,
        }
        .into());
    }
    let (lo, hi) = constants.block_window(j);
    let mut out = Vec::new();
    for k in 0..=kmax {
        for comp in system.preimage_components(rect, k, bob_ball)? {
            let s = danger_size(&comp);
            if s >= lo && s < hi && !balls_disjoint(&comp.hull, bob_ball) {
                out.push(comp);
            }
        }
    }
    Ok(out)
}

/// Block-`j` dangers; more than `N` of them is a refutation of the counting
/// lemmas and is reported as an error.
pub fn danger_list(
    system: &SystemSpec,
    rect: &Rectangle,
    constants: &StrategyConstants,
    j: usize,
    bob_ball: &Ball,
) -> Result<Vec<PreimageComponent>, StrategyError> {
    let dangers = enumerate_dangers(system, rect, constants, j, bob_ball)?;
    if dangers.len() > constants.n_bound {
        log::error!(
            "danger count {} exceeds N = {} in block {j}, bob ball {:?}",
            dangers.len(),
            constants.n_bound,
            bob_ball
        );
        return Err(StrategyError::DangerCountExceeded {
            count: dangers.len(),
            bound: constants.n_bound,
            block: j,
        });
    }
    Ok(dangers)
}

/// `⌈ε·n⌉`, forgiving rounding just above an integer.
pub fn required_avoidance(epsilon: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    ((epsilon * n as f64) - 1e-9).ceil().max(1.0) as usize
}

/// Maximum number of grid refinements before avoidance is declared infeasible.
const MAX_REFINEMENTS: u32 = 4;

/// Alice's reply inside `current` clearing as many dangers as the grid allows.
///
/// Each danger center `y_i` is enlarged to `B(y_i, αρ)`; a candidate counts a
/// danger as avoided when it is disjoint from the enlarged ball. Candidates
/// lie on a grid of spacing `αρ/8` around the current center and are scanned
/// left to right (lexicographically for `u = 2`), so the first maximizer wins.
pub fn avoid_move(
    current: &Ball,
    dangers: &[Ball],
    alpha: f64,
    epsilon: f64,
) -> Result<Ball, StrategyError> {
    let a = alpha * current.radius;
    let concentric = Ball::new(current.center, a)?;
    if dangers.is_empty() {
        return Ok(concentric);
    }
    let n = dangers.len();
    let needed = required_avoidance(epsilon, n);
    let enlarged: Vec<Ball> = dangers
        .iter()
        .map(|d| Ball::new(d.center, a))
        .collect::<Result<_, _>>()?;
    let reach = current.radius - a;
    let u = current.dim();
    let mut best_seen = 0;
    for refine in 0..=MAX_REFINEMENTS {
        let h = a / 8.0 / f64::from(1u32 << refine);
        let m = (reach / h).floor() as i64;
        if let Some((count, ball)) = grid_search(current, &enlarged, a, h, m, u) {
            if count >= needed {
                return Ok(ball);
            }
            best_seen = best_seen.max(count);
        }
    }
    Err(StrategyError::AvoidanceInfeasible {
        avoided: best_seen,
        needed,
        total: n,
    })
}

/// Best grid candidate; blocked candidates per row come from interval
/// arithmetic, with the exact predicate deciding the boundary cells.
fn grid_search(
    current: &Ball,
    enlarged: &[Ball],
    a: f64,
    h: f64,
    m: i64,
    u: usize,
) -> Option<(usize, Ball)> {
    let width = (2 * m + 1) as usize;
    let rows: Vec<i64> = if u == 1 { vec![0] } else { (-m..=m).collect() };
    let reach = current.radius - a;
    let disp: Vec<[f64; 2]> = enlarged
        .iter()
        .map(|e| current.center.displacement_to(&e.center))
        .collect();
    let candidate = |i: i64, j: i64| -> Ball {
        // u = 1 uses the row-free coordinate `j` along x
        let off = if u == 1 {
            [j as f64 * h, 0.0]
        } else {
            [i as f64 * h, j as f64 * h]
        };
        Ball {
            center: current.center.shifted(&off),
            radius: a,
        }
    };
    let mut best: Option<(usize, Ball)> = None;
    let mut diff = vec![0i64; width + 1];
    for &i in &rows {
        diff.iter_mut().for_each(|v| *v = 0);
        for (e, v) in enlarged.iter().zip(&disp) {
            let (along, across) = if u == 1 { (v[0], 0.0) } else { (v[1], i as f64 * h - v[0]) };
            let span2 = (2.0 * a) * (2.0 * a) - across * across;
            // allow for rounding: the exact predicate settles the edges
            if span2 < -(4.0 * a * a) * 1e-9 {
                continue;
            }
            let half = span2.max(0.0).sqrt();
            let mut lo = ((along - half) / h).ceil() as i64;
            let mut hi = ((along + half) / h).floor() as i64;
            let blocked = |j: i64| !balls_disjoint(&candidate(i, j), e);
            while lo - 1 >= -m && blocked(lo - 1) {
                lo -= 1;
            }
            while lo <= hi && !blocked(lo) {
                lo += 1;
            }
            while hi + 1 <= m && blocked(hi + 1) {
                hi += 1;
            }
            while hi >= lo && !blocked(hi) {
                hi -= 1;
            }
            let lo = lo.max(-m);
            let hi = hi.min(m);
            if lo > hi {
                continue;
            }
            diff[(lo + m) as usize] += 1;
            diff[(hi + m + 1) as usize] -= 1;
        }
        let mut blocked_count = 0i64;
        for j in -m..=m {
            blocked_count += diff[(j + m) as usize];
            let (x, y) = if u == 1 {
                (j as f64 * h, 0.0)
            } else {
                (i as f64 * h, j as f64 * h)
            };
            if x.hypot(y) > reach * (1.0 + 1e-12) {
                continue;
            }
            let cand = candidate(i, j);
            if !contains_ball(current, &cand) {
                continue;
            }
            let count = enlarged.len() - blocked_count as usize;
            if best.as_ref().map_or(true, |(b, _)| count > *b) {
                best = Some((count, cand));
                if count == enlarged.len() {
                    return best;
                }
            }
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockState {
    pub j: usize,
    pub dangers: Vec<PreimageComponent>,
    pub turns_left_in_block: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AliceStats {
    pub max_danger_count: usize,
    pub blocks_opened: usize,
    /// Turns on which Alice moved off-center.
    pub dodges: usize,
}

/// The block strategy for one target rectangle.
#[derive(Clone, Debug)]
pub struct AliceStrategy {
    constants: StrategyConstants,
    system: SystemSpec,
    rectangle: Rectangle,
    active_turns: Option<usize>,
    block: Option<BlockState>,
    stats: AliceStats,
}

impl AliceStrategy {
    pub fn new(system: SystemSpec, rectangle: Rectangle, constants: StrategyConstants) -> Self {
        Self {
            constants,
            system,
            rectangle,
            active_turns: None,
            block: None,
            stats: AliceStats::default(),
        }
    }

    pub fn constants(&self) -> &StrategyConstants {
        &self.constants
    }

    pub fn rectangle(&self) -> &Rectangle {
        &self.rectangle
    }

    pub fn block_state(&self) -> Option<&BlockState> {
        self.block.as_ref()
    }

    pub fn stats(&self) -> &AliceStats {
        &self.stats
    }

    pub fn is_active(&self) -> bool {
        self.active_turns.is_some()
    }

    /// Reply to Bob's ball `bob`.
    pub fn respond(&mut self, bob: &Ball) -> Result<Ball, StrategyError> {
        let k = &self.constants;
        if self.active_turns.is_none() {
            if bob.radius > k.rho * (1.0 + ACTIVATION_SLACK) {
                return Ok(Ball::new(bob.center, k.alpha * bob.radius)?);
            }
            self.active_turns = Some(0);
        }
        let i = self.active_turns.expect("active");
        let (j, pos) = (i / k.r, i % k.r);
        if pos == 0 {
            let dangers = danger_list(&self.system, &self.rectangle, k, j, bob)?;
            self.stats.max_danger_count = self.stats.max_danger_count.max(dangers.len());
            self.stats.blocks_opened += 1;
            self.block = Some(BlockState {
                j,
                dangers,
                turns_left_in_block: k.r,
            });
        }
        let block = self.block.as_mut().expect("block opened");
        block.dangers.retain(|d| !balls_disjoint(&d.hull, bob));
        let hulls: Vec<Ball> = block.dangers.iter().map(|d| d.hull).collect();
        let ball = avoid_move(bob, &hulls, k.alpha, k.epsilon)?;
        if ball.center != bob.center {
            self.stats.dodges += 1;
        }
        block.dangers.retain(|d| !balls_disjoint(&d.hull, &ball));
        block.turns_left_in_block -= 1;
        if block.turns_left_in_block == 0 && !block.dangers.is_empty() {
            return Err(StrategyError::BlockNotCleared {
                block: block.j,
                left: block.dangers.len(),
            });
        }
        self.active_turns = Some(i + 1);
        Ok(ball)
    }
}

impl Strategy for AliceStrategy {
    fn choose(&mut self, view: &GameView<'_>) -> Result<Ball, StrategyError> {
        if view.to_move() != Player::Alice {
            return Err(StrategyError::OutOfTurn);
        }
        let bob = *view.last_ball().ok_or(StrategyError::OutOfTurn)?;
        self.respond(&bob)
    }

    fn name(&self) -> String {
        "alice-block".into()
    }
}

/// Alice replying concentrically forever; the naive baseline.
#[derive(Clone, Debug)]
pub struct ConcentricAlice;

impl Strategy for ConcentricAlice {
    fn choose(&mut self, view: &GameView<'_>) -> Result<Ball, StrategyError> {
        let bob = view.last_ball().ok_or(StrategyError::OutOfTurn)?;
        Ok(Ball::new(bob.center, bob.radius * view.config.alpha)?)
    }

    fn name(&self) -> String {
        "alice-concentric".into()
    }
}

/// Target index (1-based) served on Alice's `k`-th turn: `k ≡ 2^{t−1} (mod 2^t)`.
pub fn interleave_target(k: usize) -> usize {
    assert!(k >= 1, "Alice turns are 1-based");
    1 + k.trailing_zeros() as usize
}

/// Ratio of Bob's effective move as seen by the sub-strategy for target `t`.
pub fn effective_beta(alpha: f64, beta: f64, t: usize) -> f64 {
    beta * (alpha * beta).powi((1i32 << t) - 1)
}

/// Alice against finitely many targets at once, each on its own turn lattice.
#[derive(Clone, Debug)]
pub struct InterleavedStrategy {
    alpha: f64,
    subs: Vec<AliceStrategy>,
    turns: usize,
    schedule: Vec<usize>,
}

impl InterleavedStrategy {
    /// Build sub-strategies for `targets`; returns them with their rectangles
    /// (width `c_t` of each target's derived constants).
    pub fn new(
        system: &SystemSpec,
        targets: &[Point],
        alpha: f64,
        beta: f64,
        start_radius: f64,
    ) -> Result<(Self, Vec<Rectangle>), StrategyError> {
        let mut subs = Vec::new();
        let mut rects = Vec::new();
        for (idx, target) in targets.iter().enumerate() {
            let t = idx + 1;
            let beta_t = effective_beta(alpha, beta, t);
            // Bob's ball preceding Alice turn 2^{t-1}
            let mut first = start_radius;
            for _ in 1..(1usize << (t - 1)) {
                first = first * alpha * beta;
            }
            let constants = derive_constants(system, alpha, beta_t, first)?;
            let rect = Rectangle::new(*target, constants.c)?;
            rects.push(rect);
            subs.push(AliceStrategy::new(system.clone(), rect, constants));
        }
        Ok((
            Self {
                alpha,
                subs,
                turns: 0,
                schedule: Vec::new(),
            },
            rects,
        ))
    }

    pub fn subs(&self) -> &[AliceStrategy] {
        &self.subs
    }

    /// Target served on each Alice turn so far (0 for concentric filler).
    pub fn schedule(&self) -> &[usize] {
        &self.schedule
    }

    pub fn respond(&mut self, bob: &Ball) -> Result<Ball, StrategyError> {
        self.turns += 1;
        let t = interleave_target(self.turns);
        if t <= self.subs.len() {
            self.schedule.push(t);
            self.subs[t - 1].respond(bob)
        } else {
            self.schedule.push(0);
            Ok(Ball::new(bob.center, self.alpha * bob.radius)?)
        }
    }
}

impl Strategy for InterleavedStrategy {
    fn choose(&mut self, view: &GameView<'_>) -> Result<Ball, StrategyError> {
        let bob = *view.last_ball().ok_or(StrategyError::OutOfTurn)?;
        self.respond(&bob)
    }

    fn name(&self) -> String {
        format!("alice-interleaved({})", self.subs.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric_space::distance;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: iterate r upward with N(r) = ⌊r·ln100/ln2⌋ + 3.
    fn linear2_oracle() -> (usize, usize) {
        let mut r = 1;
        loop {
            let n = (r as f64 * 100f64.ln() / 2f64.ln()).floor() as usize + 3;
            if 0.7f64.powi(r as i32) * (n as f64) < 1.0 {
                return (r, n);
            }
            r += 1;
        }
    }

    #[test]
    fn alpha_bound_examples() {
        assert_eq!(winning_alpha_bound(1.0, 2.0, 1), 0.25);
        assert!((winning_alpha_bound(1.0, 2.0, 2) - 0.5 / 2f64.sqrt()).abs() < 1e-15);
        assert!((winning_alpha_bound(1.0, 2.0, 2) - 0.35355).abs() < 1e-5);
        assert_eq!(winning_alpha_bound(1.0, 1.0, 1), 0.5);
    }

    #[test]
    fn linear2_constants_match_oracle() {
        let sys = SystemSpec::linear_circle(2);
        let k = derive_constants(&sys, 0.1, 0.1, 0.1).unwrap();
        assert!((k.epsilon - 0.3).abs() < 1e-15);
        assert_eq!((k.r, k.n_bound), linear2_oracle());
        assert_eq!((k.r, k.n_bound), (13, 89));
        let prod = 0.7f64.powi(13) * 89.0;
        assert!((prod - 0.862).abs() < 1e-3);
        let prev = 0.7f64.powi(12) * 82.0;
        assert!((prev - 1.135).abs() < 1e-3 && prev >= 1.0);
        assert_eq!(danger_bound(1.0, 12, 0.1, 0.1, 2.0), 82);
        assert!(k.report().all_hold(), "{}", k.report().to_text());
        assert_eq!(k.c_prime, 0.125);
        assert_eq!(k.k_distortion, 1.0);
        // c sits 0.9 under the smaller of its two bounds
        let inner = (0.1f64.ln() + k.rho.ln() + 25.0 * 0.01f64.ln()) / std::f64::consts::LN_10;
        assert!((k.log10_c - (inner + 0.9f64.log10())).abs() < 1e-9);
    }

    #[test]
    fn alpha_at_bound_is_rejected() {
        let sys = SystemSpec::linear_circle(2);
        assert!(matches!(
            derive_constants(&sys, 0.25, 0.1, 0.1),
            Err(ConstantsError::AlphaAboveBound { .. })
        ));
        assert!(matches!(
            derive_constants(&sys, 0.3, 0.1, 0.1),
            Err(ConstantsError::AlphaAboveBound { .. })
        ));
        // ε vanishes exactly at the bound
        assert_eq!(avoidance_fraction(1.0, 2.0, 1, 0.25), 0.0);
    }

    #[test]
    fn nonlinear_outer_width() {
        let sys = SystemSpec::nonlinear_circle(crate::dynamics::default_nonlinear_a()).unwrap();
        let k = derive_constants(&sys, 0.1, 0.1, 0.1).unwrap();
        // K(1/32) = exp(0.3307/32/0.9) ≈ 1.0115 > 1.01; K(1/64) ≈ 1.0058
        assert_eq!(k.c_prime, 1.0 / 64.0);
        assert!(k.k_distortion <= 1.01);
        assert!(sys.distortion_constant(1.0 / 32.0) > 1.01);
        assert!(k.report().all_hold());
    }

    #[test]
    fn block_zero_has_no_dangers() {
        for sys in [
            SystemSpec::linear_circle(2),
            SystemSpec::conformal_torus(2),
            SystemSpec::skew_product(2, 0.37),
        ] {
            let k = derive_constants(&sys, 0.1, 0.1, 0.1).unwrap();
            let target = sys.lift(&if sys.u == 1 {
                Point::on_circle(0.0)
            } else {
                Point::on_torus(0.0, 0.0)
            });
            let rect = Rectangle::new(target, k.c).unwrap();
            let bob = Ball::new(sys.unstable_part(&target), k.rho).unwrap();
            assert!(k.depth_limit(0).is_none());
            assert!(danger_list(&sys, &rect, &k, 0, &bob).unwrap().is_empty());
        }
    }

    #[test]
    fn window_ordering() {
        let sys = SystemSpec::linear_circle(2);
        let k = derive_constants(&sys, 0.1, 0.1, 0.1).unwrap();
        let (lo0, hi0) = k.block_window(0);
        let (lo1, hi1) = k.block_window(1);
        assert!(lo0 < hi0 && lo1 < hi1);
        assert!((hi1 / lo0 - 1.0).abs() < 1e-9);
        assert!(k.c < lo0);
    }

    /// Direct formula for the doubling map: depth-k preimages of 0 are m/2^k.
    fn brute_dangers(k: &StrategyConstants, c: f64, j: usize, bob: &Ball) -> Vec<(usize, f64)> {
        let (lo, hi) = k.block_window(j);
        let mut out = Vec::new();
        for depth in 0..=40usize {
            let n = (1u64 << depth) as f64;
            let half = c / 2.0 / n;
            if !(2.0 * half >= lo && 2.0 * half < hi) {
                continue;
            }
            let reach = bob.radius + half;
            let first = ((bob.center.x() - reach) * n).floor() as i64 - 1;
            let last = ((bob.center.x() + reach) * n).ceil() as i64 + 1;
            let mut seen = Vec::new();
            for m in first..=last {
                let q = Point::on_circle(m as f64 / n);
                if distance(&q, &bob.center).unwrap() <= reach && !seen.contains(&q.x()) {
                    seen.push(q.x());
                    out.push((depth, q.x()));
                }
            }
        }
        out
    }

    #[test]
    fn dangers_match_brute_force() {
        let sys = SystemSpec::linear_circle(2);
        let k = StrategyConstants::custom(&sys, 0.2, 0.8, 0.05, 0.02, 3).unwrap();
        let rect = Rectangle::new(Point::on_circle(0.0), k.c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let j = rng.gen_range(1..3);
            let radius = k.rho * (k.alpha * k.beta).powi((j * k.r) as i32);
            let bob = Ball::new(Point::on_circle(rng.gen()), radius).unwrap();
            let got = enumerate_dangers(&sys, &rect, &k, j, &bob).unwrap();
            let mut got_keys: Vec<(usize, f64)> =
                got.iter().map(|c| (c.depth, c.hull.center.x())).collect();
            let mut want = brute_dangers(&k, k.c, j, &bob);
            got_keys.sort_by(|a, b| a.partial_cmp(b).unwrap());
            want.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(got_keys.len(), want.len());
            for (g, w) in got_keys.iter().zip(&want) {
                assert_eq!(g.0, w.0);
                assert!((g.1 - w.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn avoid_move_examples() {
        let cur = Ball::new(Point::on_circle(0.5), 0.1).unwrap();
        assert_eq!(avoid_move(&cur, &[], 0.1, 0.3).unwrap().center, cur.center);

        let danger = Ball::new(Point::on_circle(0.5), 0.01).unwrap();
        let got = avoid_move(&cur, &[danger], 0.1, 0.3).unwrap();
        let off = (got.center.x() - 0.5).abs();
        assert!(off > 0.02 && off <= 0.09 + 1e-12, "offset {off}");
        assert!(contains_ball(&cur, &got));
        assert!(got.center.x() < 0.5, "leftmost maximizer");
        // the leftmost feasible grid point is the left end of the interval
        assert!((got.center.x() - 0.41).abs() < 0.1 / 8.0 / 10.0 + 1e-12);
    }

    #[test]
    fn avoid_move_eighty_nine_dangers() {
        let cur = Ball::new(Point::on_circle(0.5), 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(89);
        let dangers: Vec<Ball> = (0..89)
            .map(|_| Ball::new(Point::on_circle(0.5 + rng.gen_range(-0.11..0.11)), 0.005).unwrap())
            .collect();
        let got = avoid_move(&cur, &dangers, 0.1, 0.3).unwrap();
        let enlarged_avoided = dangers
            .iter()
            .filter(|d| balls_disjoint(&got, &Ball::new(d.center, 0.01).unwrap()))
            .count();
        assert_eq!(required_avoidance(0.3, 89), 27);
        assert!(enlarged_avoided >= 27);
    }

    /// Brute-force maximum over the same grid, without the row sweep.
    fn brute_grid_best(cur: &Ball, dangers: &[Ball], alpha: f64) -> usize {
        let a = alpha * cur.radius;
        let h = a / 8.0;
        let m = ((cur.radius - a) / h).floor() as i64;
        let mut best = 0;
        let rows: Vec<i64> = if cur.dim() == 1 { vec![0] } else { (-m..=m).collect() };
        for &i in &rows {
            for j in -m..=m {
                let off = if cur.dim() == 1 {
                    [j as f64 * h, 0.0]
                } else {
                    [i as f64 * h, j as f64 * h]
                };
                let cand = Ball::new(cur.center.shifted(&off), a).unwrap();
                if !contains_ball(cur, &cand) {
                    continue;
                }
                let n = dangers
                    .iter()
                    .filter(|d| balls_disjoint(&cand, &Ball::new(d.center, a).unwrap()))
                    .count();
                best = best.max(n);
            }
        }
        best
    }

    #[test]
    fn sweep_agrees_with_brute_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..60 {
            let u = if trial % 2 == 0 { 1 } else { 2 };
            let alpha = if u == 1 { 0.1 } else { 0.15 };
            let cur = if u == 1 {
                Ball::new(Point::on_circle(rng.gen()), rng.gen_range(0.01..0.25)).unwrap()
            } else {
                Ball::new(Point::on_torus(rng.gen(), rng.gen()), rng.gen_range(0.01..0.25)).unwrap()
            };
            let n = rng.gen_range(1..30);
            let dangers: Vec<Ball> = (0..n)
                .map(|_| {
                    let off = [
                        rng.gen_range(-1.2..1.2) * cur.radius,
                        rng.gen_range(-1.2..1.2) * cur.radius,
                    ];
                    Ball::new(cur.center.shifted(&off), alpha * cur.radius).unwrap()
                })
                .collect();
            let a = alpha * cur.radius;
            let h = a / 8.0;
            let m = ((cur.radius - a) / h).floor() as i64;
            let enlarged: Vec<Ball> = dangers.iter().map(|d| Ball::new(d.center, a).unwrap()).collect();
            let (count, _) = grid_search(&cur, &enlarged, a, h, m, u).unwrap();
            assert_eq!(count, brute_grid_best(&cur, &dangers, alpha), "trial {trial}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn avoidance_meets_fraction(
            x in 0.0f64..1.0,
            rho in 1e-6f64..0.25,
            alpha in 0.01f64..0.2,
            pts in proptest::collection::vec(-1.5f64..1.5, 1..100),
        ) {
            let cur = Ball::new(Point::on_circle(x), rho).unwrap();
            let eps = avoidance_fraction(1.0, 2.0, 1, alpha);
            let dangers: Vec<Ball> = pts
                .iter()
                .map(|p| Ball::new(cur.center.shifted(&[p * rho]), alpha * rho).unwrap())
                .collect();
            let got = avoid_move(&cur, &dangers, alpha, eps).unwrap();
            prop_assert!(contains_ball(&cur, &got));
            let avoided = dangers.iter().filter(|d| balls_disjoint(&got, d)).count();
            prop_assert!(avoided >= required_avoidance(eps, dangers.len()));
        }
    }

    #[test]
    fn interleave_schedule() {
        let t1: Vec<usize> = (1..=12).filter(|&k| interleave_target(k) == 1).collect();
        assert_eq!(t1, vec![1, 3, 5, 7, 9, 11]);
        let t2: Vec<usize> = (1..=12).filter(|&k| interleave_target(k) == 2).collect();
        assert_eq!(t2, vec![2, 6, 10]);
        let t3: Vec<usize> = (1..=24).filter(|&k| interleave_target(k) == 3).collect();
        assert_eq!(t3, vec![4, 12, 20]);
        for k in 1..200usize {
            let t = interleave_target(k);
            assert_eq!(k % (1 << t), 1 << (t - 1));
        }
        assert!((effective_beta(0.1, 0.1, 1) - 0.1 * 0.01).abs() < 1e-18);
    }

    #[test]
    fn waiting_phase_is_concentric() {
        let sys = SystemSpec::linear_circle(2);
        let k = derive_constants(&sys, 0.1, 0.1, 0.1).unwrap();
        let rect = Rectangle::new(Point::on_circle(0.0), k.c).unwrap();
        let mut alice = AliceStrategy::new(sys, rect, k);
        let bob = Ball::new(Point::on_circle(0.3), 0.1).unwrap();
        let reply = alice.respond(&bob).unwrap();
        assert_eq!(reply.center, bob.center);
        assert!((reply.radius - 0.01).abs() < 1e-15);
        assert!(!alice.is_active());
    }
}

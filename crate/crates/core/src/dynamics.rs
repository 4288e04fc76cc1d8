//! Model dynamical systems: expanding circle maps, the conformal torus
//! endomorphism, and an expanding map crossed with a rotation.
//!
//! Games are played on one unstable leaf. For the circle and torus maps the
//! leaf is the whole space; for the skew product it is the horizontal
//! circle at the fiber height `fiber`, and the rotation only enters through
//! the center-direction test on the target rectangle.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::DynamicsError;
use crate::metric_space::{distance_unchecked, wrap, wrap_signed, Ball, Point};

/// Default number of backward iterates the enumerators will go.
pub const DEFAULT_DEPTH_CAP: usize = 40;

/// Rotation number used for the skew product unless overridden.
pub const DEFAULT_OMEGA: f64 = 0.37;

/// Canonical nonlinear perturbation `a = 0.1 / (2π)`.
pub fn default_nonlinear_a() -> f64 {
    0.1 / (2.0 * PI)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SystemKind {
    /// `x ↦ d·x mod 1`
    LinearCircle { d: u32 },
    /// `x ↦ 2x + a·sin(2πx) mod 1`, requires `2πa < 1`
    NonlinearCircle { a: f64 },
    /// `(x, y) ↦ (d·x, d·y) mod 1`
    ConformalTorus { d: u32 },
    /// `(x, θ) ↦ (d·x, θ + ω) mod 1`, game played on the leaf `θ = fiber`
    SkewProduct {
        d: u32,
        omega_rot: f64,
        #[serde(default)]
        fiber: f64,
    },
}

/// A model system with its derivative and Hölder data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SystemKind", into = "SystemKind")]
pub struct SystemSpec {
    kind: SystemKind,
    pub u: usize,
    pub sigma1: f64,
    pub sigma2: f64,
    pub holder_l: f64,
    pub holder_theta: f64,
    pub depth_cap: usize,
}

impl From<SystemSpec> for SystemKind {
    fn from(s: SystemSpec) -> Self {
        s.kind
    }
}

impl TryFrom<SystemKind> for SystemSpec {
    type Error = DynamicsError;

    fn try_from(kind: SystemKind) -> Result<Self, Self::Error> {
        SystemSpec::new(kind)
    }
}

/// Target rectangle `Π(c)` around the avoided point.
///
/// `target` lives in the ambient space (2-dimensional for the skew product,
/// whose rectangle also has a center-direction slice of width `c`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub target: Point,
    pub width: f64,
}

impl Rectangle {
    pub fn new(target: Point, width: f64) -> Result<Self, DynamicsError> {
        if !(width > 0.0 && width <= 0.5) {
            return Err(DynamicsError::InvalidSystem(format!(
                "rectangle width {width} outside (0, 1/2]"
            )));
        }
        Ok(Self { target, width })
    }

    pub fn half_width(&self) -> f64 {
        self.width / 2.0
    }
}

/// A connected component of `f^{-k}(Π(c))` on the playing leaf.
///
/// The hull is centered at the depth-`k` preimage of the rectangle center;
/// `inner_radius ≤ |component boundary − center| ≤ outer_radius`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreimageComponent {
    pub hull: Ball,
    pub depth: usize,
    #[serde(rename = "R")]
    pub outer_radius: f64,
    #[serde(rename = "r_inner")]
    pub inner_radius: f64,
}

impl PreimageComponent {
    /// Size used for block windows: hull diameter on a circle, outer radius
    /// in the conformal case.
    pub fn size(&self) -> f64 {
        if self.hull.dim() == 1 {
            2.0 * self.outer_radius
        } else {
            self.outer_radius
        }
    }
}

impl SystemSpec {
    pub fn new(kind: SystemKind) -> Result<Self, DynamicsError> {
        let bad = |m: String| Err(DynamicsError::InvalidSystem(m));
        let spec = match kind {
            SystemKind::LinearCircle { d } | SystemKind::ConformalTorus { d } => {
                if d < 2 {
                    return bad(format!("degree {d} must be at least 2"));
                }
                let u = if matches!(kind, SystemKind::LinearCircle { .. }) { 1 } else { 2 };
                Self::assemble(kind, u, d as f64, d as f64, 0.0)
            }
            SystemKind::NonlinearCircle { a } => {
                let amp = 2.0 * PI * a;
                if !(a >= 0.0 && amp < 1.0) {
                    return bad(format!("nonlinear amplitude a = {a} needs 0 <= 2πa < 1"));
                }
                let sigma1 = 2.0 - amp;
                // sup |f''| / inf f' bounds the Lipschitz constant of log f'
                let l = amp * 2.0 * PI / sigma1;
                Self::assemble(kind, 1, sigma1, 2.0 + amp, l)
            }
            SystemKind::SkewProduct { d, omega_rot, fiber } => {
                if d < 2 {
                    return bad(format!("degree {d} must be at least 2"));
                }
                if !omega_rot.is_finite() || !fiber.is_finite() {
                    return bad("non-finite rotation data".into());
                }
                let kind = SystemKind::SkewProduct {
                    d,
                    omega_rot: wrap(omega_rot),
                    fiber: wrap(fiber),
                };
                Self::assemble(kind, 1, d as f64, d as f64, 0.0)
            }
        };
        Ok(spec)
    }

    fn assemble(kind: SystemKind, u: usize, sigma1: f64, sigma2: f64, l: f64) -> Self {
        Self {
            kind,
            u,
            sigma1,
            sigma2,
            holder_l: l,
            holder_theta: 1.0,
            depth_cap: DEFAULT_DEPTH_CAP,
        }
    }

    pub fn linear_circle(d: u32) -> Self {
        Self::new(SystemKind::LinearCircle { d }).expect("valid degree")
    }

    pub fn nonlinear_circle(a: f64) -> Result<Self, DynamicsError> {
        Self::new(SystemKind::NonlinearCircle { a })
    }

    pub fn conformal_torus(d: u32) -> Self {
        Self::new(SystemKind::ConformalTorus { d }).expect("valid degree")
    }

    pub fn skew_product(d: u32, omega_rot: f64) -> Self {
        Self::new(SystemKind::SkewProduct {
            d,
            omega_rot,
            fiber: 0.0,
        })
        .expect("valid skew product")
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    /// Same system played on a different center-direction leaf.
    pub fn with_fiber(&self, fiber: f64) -> Self {
        let mut s = self.clone();
        if let SystemKind::SkewProduct { d, omega_rot, .. } = s.kind {
            s.kind = SystemKind::SkewProduct {
                d,
                omega_rot,
                fiber: wrap(fiber),
            };
        }
        s
    }

    pub fn with_depth_cap(mut self, cap: usize) -> Self {
        self.depth_cap = cap;
        self
    }

    pub fn id(&self) -> String {
        match self.kind {
            SystemKind::LinearCircle { d } => format!("linear-circle({d})"),
            SystemKind::NonlinearCircle { a } => format!("nonlinear-circle({a})"),
            SystemKind::ConformalTorus { d } => format!("conformal-torus({d})"),
            SystemKind::SkewProduct {
                d,
                omega_rot,
                fiber,
            } => format!("skew-product({d},{omega_rot},fiber={fiber})"),
        }
    }

    /// Dimension of the space the map acts on.
    pub fn ambient_dim(&self) -> usize {
        match self.kind {
            SystemKind::SkewProduct { .. } | SystemKind::ConformalTorus { .. } => 2,
            _ => 1,
        }
    }

    /// Number of inverse branches per unstable axis.
    pub fn degree(&self) -> u32 {
        match self.kind {
            SystemKind::LinearCircle { d }
            | SystemKind::ConformalTorus { d }
            | SystemKind::SkewProduct { d, .. } => d,
            SystemKind::NonlinearCircle { .. } => 2,
        }
    }

    pub fn fiber(&self) -> Option<f64> {
        match self.kind {
            SystemKind::SkewProduct { fiber, .. } => Some(fiber),
            _ => None,
        }
    }

    fn check_ambient(&self, x: &Point) -> Result<(), DynamicsError> {
        if x.dim() != self.ambient_dim() {
            return Err(crate::error::GeometryError::DimensionMismatch(x.dim(), self.ambient_dim()).into());
        }
        Ok(())
    }

    /// One application of the map on the ambient space.
    pub fn apply(&self, x: &Point) -> Result<Point, DynamicsError> {
        self.check_ambient(x)?;
        Ok(self.apply_unchecked(x))
    }

    fn apply_unchecked(&self, x: &Point) -> Point {
        match self.kind {
            SystemKind::LinearCircle { d } => Point::on_circle(d as f64 * x.x()),
            SystemKind::NonlinearCircle { a } => Point::on_circle(nonlinear_lift(a, x.x())),
            SystemKind::ConformalTorus { d } => {
                Point::on_torus(d as f64 * x.x(), d as f64 * x.y())
            }
            SystemKind::SkewProduct { d, omega_rot, .. } => {
                Point::on_torus(d as f64 * x.x(), x.y() + omega_rot)
            }
        }
    }

    /// The map restricted to the playing leaf (unstable coordinates only).
    pub fn apply_leaf(&self, x: &Point) -> Point {
        match self.kind {
            SystemKind::SkewProduct { d, .. } => Point::on_circle(d as f64 * x.x()),
            _ => self.apply_unchecked(x),
        }
    }

    /// Embed a leaf point into the ambient space.
    pub fn lift(&self, leaf: &Point) -> Point {
        match self.kind {
            SystemKind::SkewProduct { fiber, .. } => Point::on_torus(leaf.x(), fiber),
            _ => *leaf,
        }
    }

    /// Unstable-coordinate part of an ambient point.
    pub fn unstable_part(&self, x: &Point) -> Point {
        match self.kind {
            SystemKind::SkewProduct { .. } => Point::on_circle(x.x()),
            _ => *x,
        }
    }

    /// Expansion factor along the unstable direction at `x` (leaf or ambient point).
    pub fn unstable_derivative(&self, x: &Point) -> f64 {
        match self.kind {
            SystemKind::NonlinearCircle { a } => 2.0 + 2.0 * PI * a * (2.0 * PI * x.x()).cos(),
            _ => self.degree() as f64,
        }
    }

    /// `(f^k)'(z)` along the unstable direction, by the chain rule.
    pub fn orbit_derivative(&self, z: &Point, k: usize) -> f64 {
        let mut p = *z;
        let mut acc = 1.0;
        for _ in 0..k {
            acc *= self.unstable_derivative(&p);
            p = self.apply_leaf(&p);
        }
        acc
    }

    /// Certified bounds of the unstable derivative over `B(center, half)` on the leaf.
    fn derivative_range(&self, center: f64, half: f64) -> (f64, f64) {
        match self.kind {
            SystemKind::NonlinearCircle { a } => {
                if half >= 0.5 {
                    return (self.sigma1, self.sigma2);
                }
                let amp = 2.0 * PI * a;
                let (lo, hi) = (center - half, center + half);
                let (c1, c2) = ((2.0 * PI * lo).cos(), (2.0 * PI * hi).cos());
                let mut cmin = c1.min(c2);
                let mut cmax = c1.max(c2);
                if (lo.floor() - hi.floor()).abs() > 0.0 {
                    cmax = 1.0;
                }
                if ((lo - 0.5).floor() - (hi - 0.5).floor()).abs() > 0.0 {
                    cmin = -1.0;
                }
                ((2.0 + amp * cmin).max(self.sigma1), (2.0 + amp * cmax).min(self.sigma2))
            }
            _ => (self.sigma1, self.sigma2),
        }
    }

    /// All leaf preimages of a leaf point under one application of the map.
    pub fn preimage_points(&self, p: &Point) -> Vec<Point> {
        match self.kind {
            SystemKind::LinearCircle { d } | SystemKind::SkewProduct { d, .. } => (0..d)
                .map(|m| Point::on_circle((p.x() + m as f64) / d as f64))
                .collect(),
            SystemKind::NonlinearCircle { a } => (0..2)
                .map(|m| Point::on_circle(nonlinear_inverse(a, p.x() + m as f64)))
                .collect(),
            SystemKind::ConformalTorus { d } => {
                let df = d as f64;
                let mut out = Vec::with_capacity((d * d) as usize);
                for i in 0..d {
                    for j in 0..d {
                        out.push(Point::on_torus(
                            (p.x() + i as f64) / df,
                            (p.y() + j as f64) / df,
                        ));
                    }
                }
                out
            }
        }
    }

    fn branch_separation_limit(&self) -> f64 {
        1.0 / (2.0 * self.degree() as f64)
    }

    /// One enclosing ball per connected component of `f^{-1}(b)` on the leaf.
    pub fn inverse_branches(&self, b: &Ball) -> Result<Vec<Ball>, DynamicsError> {
        if b.dim() != self.u {
            return Err(crate::error::GeometryError::DimensionMismatch(b.dim(), self.u).into());
        }
        let limit = self.branch_separation_limit();
        if b.radius >= limit {
            return Err(DynamicsError::RadiusTooLarge {
                radius: b.radius,
                limit,
            });
        }
        let pulled = self.pull_back(&Piece {
            center: b.center,
            outer: b.radius,
            inner: b.radius,
        });
        pulled
            .into_iter()
            .map(|p| Ok(Ball::new(p.center, p.outer)?))
            .collect()
    }

    fn pull_back(&self, piece: &Piece) -> Vec<Piece> {
        self.preimage_points(&piece.center)
            .into_iter()
            .map(|q| {
                // the preimage component lies within outer/σ1 of q
                let reach = piece.outer / self.sigma1;
                let (dmin, dmax) = self.derivative_range(q.x(), reach);
                Piece {
                    center: q,
                    outer: piece.outer / dmin,
                    inner: piece.inner / dmax,
                }
            })
            .collect()
    }

    /// Whether `f^k` of the leaf lands in the rectangle's center slice.
    pub fn center_slice_hit(&self, rect: &Rectangle, k: usize) -> bool {
        match self.kind {
            SystemKind::SkewProduct {
                omega_rot, fiber, ..
            } => {
                let theta = wrap(fiber + (k as f64 * omega_rot).fract());
                wrap_signed(theta - rect.target.y()).abs() <= rect.half_width()
            }
            _ => true,
        }
    }

    /// Depth-`k` components of `f^{-k}(Π(c))` whose hull meets `window`.
    ///
    /// Enumerates backward from the rectangle, pruning any intermediate
    /// component that cannot reach the window: the depth-`k` descendant of a
    /// depth-`s` component lies in the window only if the component meets
    /// `f^{k-s}(window)`, which sits inside a ball of radius `σ2^{k-s}·R_window`.
    pub fn preimage_components(
        &self,
        rect: &Rectangle,
        k: usize,
        window: &Ball,
    ) -> Result<Vec<PreimageComponent>, DynamicsError> {
        if k > self.depth_cap {
            return Err(DynamicsError::DepthCapExceeded {
                depth: k,
                cap: self.depth_cap,
            });
        }
        if window.dim() != self.u {
            return Err(crate::error::GeometryError::DimensionMismatch(window.dim(), self.u).into());
        }
        if !self.center_slice_hit(rect, k) {
            return Ok(Vec::new());
        }
        let half = rect.half_width();
        if half >= self.branch_separation_limit() {
            return Err(DynamicsError::RadiusTooLarge {
                radius: half,
                limit: self.branch_separation_limit(),
            });
        }

        // forward envelopes of the window
        let mut envelopes = Vec::with_capacity(k + 1);
        let mut c = window.center;
        let mut r = window.radius;
        for j in 0..=k {
            let slack = 1e-15 * self.sigma2.powi(j as i32);
            envelopes.push((c, r * (1.0 + 1e-9) + slack));
            c = self.apply_leaf(&c);
            r *= self.sigma2;
        }
        let covers_all = |r: f64| r >= if self.u == 1 { 0.5 } else { std::f64::consts::FRAC_1_SQRT_2 };

        let mut frontier = vec![Piece {
            center: self.unstable_part(&rect.target),
            outer: half,
            inner: half,
        }];
        for s in 0..k {
            let mut next = Vec::new();
            for piece in &frontier {
                for child in self.pull_back(piece) {
                    let (ec, er) = envelopes[k - (s + 1)];
                    if covers_all(er) || distance_unchecked(&ec, &child.center) <= er + child.outer {
                        next.push(child);
                    }
                }
            }
            frontier = next;
        }
        let mut out = Vec::new();
        for p in frontier {
            if distance_unchecked(&window.center, &p.center) <= window.radius + p.outer {
                out.push(PreimageComponent {
                    hull: Ball::new(p.center, p.outer)?,
                    depth: k,
                    outer_radius: p.outer,
                    inner_radius: p.inner,
                });
            }
        }
        Ok(out)
    }

    /// Distortion bound `exp(l·c^θ / (σ1^θ − 1))`.
    pub fn distortion_constant(&self, c: f64) -> f64 {
        if self.holder_l == 0.0 {
            return 1.0;
        }
        (self.holder_l * c.powf(self.holder_theta) / (self.sigma1.powf(self.holder_theta) - 1.0)).exp()
    }

    /// `min_{0 ≤ k ≤ horizon} d(f^k(x), target)` in the ambient metric.
    pub fn orbit_min_distance(
        &self,
        x: &Point,
        target: &Point,
        horizon: usize,
    ) -> Result<f64, DynamicsError> {
        self.check_ambient(x)?;
        self.check_ambient(target)?;
        let mut p = *x;
        let mut best = distance_unchecked(&p, target);
        for _ in 0..horizon {
            p = self.apply_unchecked(&p);
            best = best.min(distance_unchecked(&p, target));
        }
        Ok(best)
    }
}

impl fmt::Display for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for SystemSpec {
    type Err = DynamicsError;

    /// Short names: `linear2`, `nonlinear[:a]`, `torus2`, `skew2[:omega]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, param) = match s.split_once(':') {
            Some((h, p)) => (h, Some(p)),
            None => (s, None),
        };
        let bad = || DynamicsError::InvalidSystem(format!("unknown system '{s}'"));
        let num = |p: Option<&str>, default: f64| -> Result<f64, DynamicsError> {
            p.map_or(Ok(default), |v| v.parse::<f64>().map_err(|_| bad()))
        };
        let degree = |prefix: &str| -> Result<u32, DynamicsError> {
            let rest = &head[prefix.len()..];
            if rest.is_empty() {
                Ok(2)
            } else {
                rest.parse().map_err(|_| bad())
            }
        };
        if head.starts_with("nonlinear") {
            SystemSpec::nonlinear_circle(num(param, default_nonlinear_a())?)
        } else if head.starts_with("linear") {
            SystemSpec::new(SystemKind::LinearCircle { d: degree("linear")? })
        } else if head.starts_with("torus") {
            SystemSpec::new(SystemKind::ConformalTorus { d: degree("torus")? })
        } else if head.starts_with("skew") {
            SystemSpec::new(SystemKind::SkewProduct {
                d: degree("skew")?,
                omega_rot: num(param, DEFAULT_OMEGA)?,
                fiber: 0.0,
            })
        } else {
            Err(bad())
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Piece {
    center: Point,
    outer: f64,
    inner: f64,
}

fn nonlinear_lift(a: f64, x: f64) -> f64 {
    2.0 * x + a * (2.0 * PI * x).sin()
}

/// Solve `2x + a·sin(2πx) = v` for `x ∈ [0, 1]`, `v ∈ [0, 2)`.
///
/// The lift is strictly increasing from 0 to 2 on `[0, 1]`, so bisection
/// brackets the root; two Newton steps then polish it.
fn nonlinear_inverse(a: f64, v: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let g = nonlinear_lift(a, mid) - v;
        if g.abs() <= 1e-14 || mid <= lo || mid >= hi {
            lo = mid;
            hi = mid;
            break;
        }
        if g < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..2 {
        let g = nonlinear_lift(a, x) - v;
        let dg = 2.0 + 2.0 * PI * a * (2.0 * PI * x).cos();
        x -= g / dg;
    }
    x
}

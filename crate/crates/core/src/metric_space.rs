//! Flat-torus geometry on `R^u / Z^u` for `u` in `{1, 2}`.
//!
//! Balls are capped at radius 1/4, below the injectivity radius of the
//! unit torus, so every ball here is an honest metric ball and the volume
//! power law holds with equal constants (`2ρ` on the circle, `πρ²` on the
//! 2-torus).

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::f64::consts::PI;
use std::fmt;

use crate::error::GeometryError;

/// Largest admissible ball radius.
pub const MAX_RADIUS: f64 = 0.25;

/// Reduce a coordinate into `[0, 1)`.
#[inline]
pub fn wrap(x: f64) -> f64 {
    let y = x - x.floor();
    // x.floor() can round y up to exactly 1.0 for tiny negative x
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

/// Signed representative of `x` in `[-1/2, 1/2)`.
#[inline]
pub fn wrap_signed(x: f64) -> f64 {
    let y = wrap(x + 0.5) - 0.5;
    if y < -0.5 {
        y + 1.0
    } else {
        y
    }
}

/// A point on the flat torus of dimension 1 or 2.
#[derive(Clone, Copy, PartialEq)]
pub struct Point {
    coords: [f64; 2],
    dim: u8,
}

impl Point {
    pub fn new(coords: &[f64]) -> Result<Self, GeometryError> {
        match coords.len() {
            1 => Ok(Self::on_circle(coords[0])),
            2 => Ok(Self::on_torus(coords[0], coords[1])),
            n => Err(GeometryError::UnsupportedDimension(n)),
        }
    }

    pub fn on_circle(x: f64) -> Self {
        Self {
            coords: [wrap(x), 0.0],
            dim: 1,
        }
    }

    pub fn on_torus(x: f64, y: f64) -> Self {
        Self {
            coords: [wrap(x), wrap(y)],
            dim: 2,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim()]
    }

    pub fn x(&self) -> f64 {
        self.coords[0]
    }

    pub fn y(&self) -> f64 {
        self.coords[1]
    }

    /// Translate by a displacement vector (only the first `dim` entries are used).
    pub fn shifted(&self, delta: &[f64]) -> Self {
        let mut c = self.coords;
        for (i, d) in delta.iter().take(self.dim()).enumerate() {
            c[i] = wrap(c[i] + d);
        }
        Self {
            coords: c,
            dim: self.dim,
        }
    }

    /// Shortest displacement `other - self` on the torus, componentwise in `[-1/2, 1/2)`.
    pub fn displacement_to(&self, other: &Point) -> [f64; 2] {
        let mut d = [0.0; 2];
        for (i, slot) in d.iter_mut().enumerate().take(self.dim()) {
            *slot = wrap_signed(other.coords[i] - self.coords[i]);
        }
        d
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.coords())
    }
}

impl Serialize for Point {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.coords().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        Point::new(&v).map_err(D::Error::custom)
    }
}

/// Wrap-around Euclidean distance.
pub fn distance(a: &Point, b: &Point) -> Result<f64, GeometryError> {
    if a.dim != b.dim {
        return Err(GeometryError::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(distance_unchecked(a, b))
}

#[inline]
pub(crate) fn distance_unchecked(a: &Point, b: &Point) -> f64 {
    let d = a.displacement_to(b);
    if a.dim == 1 {
        d[0].abs()
    } else {
        d[0].hypot(d[1])
    }
}

/// A closed metric ball on the torus.
#[derive(Clone, Copy, PartialEq)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Point, radius: f64) -> Result<Self, GeometryError> {
        if !(radius > 0.0 && radius <= MAX_RADIUS) {
            return Err(GeometryError::RadiusOutOfRange(radius));
        }
        Ok(Self { center, radius })
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    /// Same center, new radius.
    pub fn with_radius(&self, radius: f64) -> Result<Self, GeometryError> {
        Ball::new(self.center, radius)
    }

    pub fn volume(&self) -> f64 {
        ball_volume(self.dim(), self.radius)
    }

    pub fn contains_point(&self, p: &Point) -> bool {
        distance_unchecked(&self.center, p) <= self.radius
    }
}

impl fmt::Debug for Ball {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "B({:?}, {:e})", self.center, self.radius)
    }
}

#[derive(Serialize, Deserialize)]
struct BallWire {
    c: Point,
    r: f64,
}

impl Serialize for Ball {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        BallWire {
            c: self.center,
            r: self.radius,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Ball {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = BallWire::deserialize(d)?;
        Ball::new(w.c, w.r).map_err(D::Error::custom)
    }
}

/// Volume of a ball of radius `r` in dimension `u`: `2r` or `πr²`.
pub fn ball_volume(u: usize, r: f64) -> f64 {
    match u {
        1 => 2.0 * r,
        _ => PI * r * r,
    }
}

/// Volume of the intersection of two balls with centers `d` apart.
pub fn intersection_volume(u: usize, d: f64, r1: f64, r2: f64) -> f64 {
    if d >= r1 + r2 {
        return 0.0;
    }
    let (small, large) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
    if d + small <= large {
        return ball_volume(u, small);
    }
    match u {
        1 => r1 + r2 - d,
        _ => {
            // lens area
            let a1 = ((d * d + r1 * r1 - r2 * r2) / (2.0 * d * r1)).clamp(-1.0, 1.0).acos();
            let a2 = ((d * d + r2 * r2 - r1 * r1) / (2.0 * d * r2)).clamp(-1.0, 1.0).acos();
            let k = (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2);
            r1 * r1 * a1 + r2 * r2 * a2 - 0.5 * k.max(0.0).sqrt()
        }
    }
}

/// `inner ⊂ outer`, decided by `d(centers) <= R - r`.
pub fn contains_ball(outer: &Ball, inner: &Ball) -> bool {
    outer.dim() == inner.dim()
        && distance_unchecked(&outer.center, &inner.center) <= outer.radius - inner.radius
}

/// Closed-ball disjointness: touching balls share a point and are not disjoint.
pub fn balls_disjoint(a: &Ball, b: &Ball) -> bool {
    distance_unchecked(&a.center, &b.center) > a.radius + b.radius
}

/// Relative spacing slack used by the packing lattice.
const PACKING_SLACK: f64 = 1e-6;

/// Offsets, in units of the parent radius, of a square-lattice packing of
/// balls of radius `ratio` inside the unit ball.
///
/// Lattice spacing is `2·ratio·(1 + 1e-6)`, so the packed balls are pairwise
/// disjoint as closed balls, and every lattice point within `1 - ratio` of the
/// origin is kept. The count is at least `⌊1/(2·ratio)⌋^u`.
pub fn packing_offsets(u: usize, ratio: f64) -> Vec<[f64; 2]> {
    let spacing = 2.0 * ratio * (1.0 + PACKING_SLACK);
    let reach = 1.0 - ratio;
    let kmax = (reach / spacing).floor() as i64;
    let mut out = Vec::new();
    if u == 1 {
        for k in -kmax..=kmax {
            out.push([k as f64 * spacing, 0.0]);
        }
    } else {
        for i in -kmax..=kmax {
            for j in -kmax..=kmax {
                let (x, y) = (i as f64 * spacing, j as f64 * spacing);
                if x.hypot(y) <= reach {
                    out.push([x, y]);
                }
            }
        }
    }
    out
}

/// Pairwise-disjoint balls of radius `ratio·b.radius` contained in `b`.
pub fn pack_disjoint_subballs(b: &Ball, ratio: f64) -> Result<Vec<Ball>, GeometryError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(GeometryError::BadRatio(ratio));
    }
    let r = ratio * b.radius;
    let mut out = Vec::new();
    for off in packing_offsets(b.dim(), ratio) {
        let delta = [off[0] * b.radius, off[1] * b.radius];
        let candidate = Ball::new(b.center.shifted(&delta), r)?;
        // rounding in the wrap can push a boundary lattice point just outside
        if contains_ball(b, &candidate) {
            out.push(candidate);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn b1(c: f64, r: f64) -> Ball {
        Ball::new(Point::on_circle(c), r).unwrap()
    }

    #[test]
    fn distance_examples() {
        let d = distance(&Point::on_circle(0.1), &Point::on_circle(0.9)).unwrap();
        assert_abs_diff_eq!(d, 0.2, epsilon = 1e-15);
        let x = Point::on_torus(0.3, 0.7);
        assert_eq!(distance(&x, &x).unwrap(), 0.0);
        let d = distance(&Point::on_torus(0.0, 0.0), &Point::on_torus(0.5, 0.5)).unwrap();
        assert_abs_diff_eq!(d, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn distance_rejects_mixed_dimensions() {
        let e = distance(&Point::on_circle(0.1), &Point::on_torus(0.1, 0.1));
        assert!(matches!(e, Err(GeometryError::DimensionMismatch(1, 2))));
    }

    #[test]
    fn containment_examples() {
        assert!(contains_ball(&b1(0.5, 0.1), &b1(0.5, 0.01)));
        // boundary case: 0.09 <= 0.09
        assert!(contains_ball(&b1(0.5, 0.1), &b1(0.59, 0.01)));
        assert!(!contains_ball(&b1(0.5, 0.1), &b1(0.62, 0.01)));
    }

    #[test]
    fn disjointness_examples() {
        assert!(balls_disjoint(&b1(0.1, 0.05), &b1(0.3, 0.05)));
        assert!(!balls_disjoint(&b1(0.1, 0.05), &b1(0.15, 0.05)));
        let a = b1(0.7, 0.05);
        assert!(!balls_disjoint(&a, &a));
        // touching closed balls are not disjoint
        assert!(!balls_disjoint(&b1(0.25, 0.125), &b1(0.5, 0.125)));
    }

    #[test]
    fn radius_cap_enforced() {
        assert!(Ball::new(Point::on_circle(0.0), 0.26).is_err());
        assert!(Ball::new(Point::on_circle(0.0), 0.0).is_err());
        assert!(Ball::new(Point::on_circle(0.0), 0.25).is_ok());
    }

    #[test]
    fn packing_counts() {
        let b = b1(0.5, 0.1);
        let p = pack_disjoint_subballs(&b, 0.1).unwrap();
        assert!(p.len() >= 5);
        assert_eq!(p.len(), 9);
        assert!(p.iter().all(|s| (s.radius - 0.01).abs() < 1e-15));
        assert!(!pack_disjoint_subballs(&b, 0.5).unwrap().is_empty());
        let b2 = Ball::new(Point::on_torus(0.3, 0.3), 0.1).unwrap();
        assert!(pack_disjoint_subballs(&b2, 0.1).unwrap().len() >= 25);
    }

    #[test]
    fn packing_is_disjoint_and_contained_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for i in 0..1000 {
            let u = 1 + i % 2;
            let c = if u == 1 {
                Point::on_circle(rng.gen())
            } else {
                Point::on_torus(rng.gen(), rng.gen())
            };
            let b = Ball::new(c, rng.gen_range(1e-6..0.25)).unwrap();
            let ratio = rng.gen_range(0.05..0.9);
            let subs = pack_disjoint_subballs(&b, ratio).unwrap();
            let floor = (1.0 / (2.0 * ratio)).floor() as usize;
            assert!(subs.len() >= floor.pow(u as u32), "u={u} ratio={ratio}");
            for (k, s) in subs.iter().enumerate() {
                assert!(contains_ball(&b, s));
                for t in &subs[k + 1..] {
                    assert!(balls_disjoint(s, t));
                }
            }
        }
    }

    #[test]
    fn power_law_constants_are_exact() {
        for rho in [1e-6, 1e-3, 0.1, 0.2499] {
            assert_abs_diff_eq!(ball_volume(1, rho) / rho, 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(ball_volume(2, rho) / (rho * rho), PI, epsilon = 1e-12);
            // Federer doubling constant 2^u
            assert_abs_diff_eq!(ball_volume(1, 2.0 * rho) / ball_volume(1, rho), 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(ball_volume(2, 2.0 * rho) / ball_volume(2, rho), 4.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn lens_area_limits() {
        assert_abs_diff_eq!(intersection_volume(2, 0.0, 1.0, 1.0), PI, epsilon = 1e-12);
        assert_eq!(intersection_volume(2, 2.0, 1.0, 1.0), 0.0);
        // two unit disks at distance 1: 2π/3 - √3/2
        let expect = 2.0 * PI / 3.0 - 3f64.sqrt() / 2.0;
        assert_abs_diff_eq!(intersection_volume(2, 1.0, 1.0, 1.0), expect, epsilon = 1e-12);
        assert_abs_diff_eq!(intersection_volume(1, 0.5, 1.0, 1.0), 1.5, epsilon = 1e-15);
    }

    #[test]
    fn json_shape() {
        let b = Ball::new(Point::on_torus(0.25, 0.5), 0.125).unwrap();
        let s = serde_json::to_string(&b).unwrap();
        assert_eq!(s, r#"{"c":[0.25,0.5],"r":0.125}"#);
        let back: Ball = serde_json::from_str(&s).unwrap();
        assert_eq!(back, b);
        assert!(serde_json::from_str::<Ball>(r#"{"c":[0.1],"r":0.3}"#).is_err());
    }

    proptest::proptest! {
        #[test]
        fn contains_and_disjoint_are_exclusive(
            x in 0.0..1.0f64, y in 0.0..1.0f64, ra in 1e-9..0.25f64, rb in 1e-9..0.25f64
        ) {
            let a = b1(x, ra);
            let b = b1(y, rb);
            proptest::prop_assert!(!(contains_ball(&a, &b) && balls_disjoint(&a, &b)));
        }

        #[test]
        fn triangle_inequality(a in 0.0..1.0f64, b in 0.0..1.0f64, c in 0.0..1.0f64,
                               d in 0.0..1.0f64, e in 0.0..1.0f64, f in 0.0..1.0f64) {
            let (p, q, r) = (Point::on_torus(a, b), Point::on_torus(c, d), Point::on_torus(e, f));
            let pq = distance(&p, &q).unwrap();
            proptest::prop_assert!((pq - distance(&q, &p).unwrap()).abs() < 1e-15);
            proptest::prop_assert!(distance(&p, &r).unwrap() <= pq + distance(&q, &r).unwrap() + 1e-12);
        }
    }
}

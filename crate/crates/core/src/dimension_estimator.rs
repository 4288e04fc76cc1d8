//! Box-counting dimension of sampled winning points.

use std::collections::HashSet;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alice_strategy::{AliceStrategy, StrategyConstants};
use crate::bob_strategies::RandomBob;
use crate::dynamics::{Rectangle, SystemSpec};
use crate::error::EstimatorError;
use crate::game_core::{check_orbit, run_game, GameConfig};
use crate::measure_lab::fit_line;
use crate::metric_space::Point;

/// Points closer than this are merged.
pub const DEDUP_RESOLUTION: f64 = 1e-12;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub system: String,
    pub alpha: f64,
    pub beta: f64,
    pub games: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSample {
    pub points: Vec<Point>,
    /// Number of points before deduplication.
    pub raw_count: usize,
    pub provenance: Provenance,
}

impl PointSample {
    /// Sort and deduplicate at [`DEDUP_RESOLUTION`].
    pub fn new(points: Vec<Point>, provenance: Provenance) -> Result<Self, EstimatorError> {
        if let Some(first) = points.first() {
            let u = first.dim();
            if let Some(bad) = points.iter().find(|p| p.dim() != u) {
                return Err(EstimatorError::Geometry(
                    crate::error::GeometryError::DimensionMismatch(u, bad.dim()),
                ));
            }
        }
        let raw_count = points.len();
        let key = |p: &Point| -> [i64; 2] {
            let c = p.coords();
            let q = |x: f64| (x / DEDUP_RESOLUTION).round() as i64;
            [q(c[0]), c.get(1).map_or(0, |&y| q(y))]
        };
        let mut keyed: Vec<([i64; 2], Point)> = points.into_iter().map(|p| (key(&p), p)).collect();
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        keyed.dedup_by(|a, b| a.0 == b.0);
        Ok(Self {
            points: keyed.into_iter().map(|(_, p)| p).collect(),
            raw_count,
            provenance,
        })
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(1, |p| p.dim())
    }

    /// Number of occupied grid boxes of side `delta`.
    pub fn occupied_boxes(&self, delta: f64) -> usize {
        let cells: HashSet<[i64; 2]> = self
            .points
            .iter()
            .map(|p| {
                let c = p.coords();
                let q = |x: f64| (x / delta).floor() as i64;
                [q(c[0]), c.get(1).map_or(0, |&y| q(y))]
            })
            .collect();
        cells.len()
    }

    /// Median nearest-neighbour distance (0 with fewer than two points).
    /// Quadratic in two dimensions.
    pub fn median_spacing(&self) -> f64 {
        let n = self.points.len();
        if n < 2 {
            return 0.0;
        }
        let mut nn: Vec<f64> = if self.dim() == 1 {
            // points are sorted by coordinate
            let xs: Vec<f64> = self.points.iter().map(|p| p.x()).collect();
            (0..n)
                .map(|i| {
                    let next = if i + 1 < n { xs[i + 1] - xs[i] } else { xs[0] + 1.0 - xs[i] };
                    let prev = if i > 0 { xs[i] - xs[i - 1] } else { xs[0] + 1.0 - xs[n - 1] };
                    next.min(prev)
                })
                .collect()
        } else {
            (0..n)
                .map(|i| {
                    (0..n)
                        .filter(|&j| j != i)
                        .map(|j| {
                            let d = self.points[i].displacement_to(&self.points[j]);
                            d[0].hypot(d[1])
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .collect()
        };
        nn.sort_by(f64::total_cmp);
        nn[n / 2]
    }

    /// Diameter estimate from the circular span of each coordinate.
    pub fn diameter(&self) -> f64 {
        let span = |axis: usize| -> f64 {
            let mut xs: Vec<f64> = self.points.iter().map(|p| p.coords()[axis]).collect();
            if xs.len() < 2 {
                return 0.0;
            }
            xs.sort_by(f64::total_cmp);
            let mut gap = xs[0] + 1.0 - xs[xs.len() - 1];
            for w in xs.windows(2) {
                gap = gap.max(w[1] - w[0]);
            }
            (1.0 - gap).min(0.5)
        };
        (0..self.dim()).map(span).map(|s| s * s).sum::<f64>().sqrt()
    }
}

/// Play `count` games against independently seeded random Bobs and collect the
/// outcomes, checking each against the rectangle.
pub fn sample_winning_points(
    system: &SystemSpec,
    rect: &Rectangle,
    config: &GameConfig,
    constants: &StrategyConstants,
    count: usize,
    seed: u64,
) -> Result<PointSample, EstimatorError> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(count);
    for index in 0..count {
        let mut alice = AliceStrategy::new(system.clone(), *rect, constants.clone());
        let mut bob = RandomBob::new(master.next_u64());
        let t = run_game(config, system, rect, &mut alice, &mut bob)?;
        let check = check_orbit(system, rect, &t.outcome, t.final_radius);
        if !check.passed {
            return Err(EstimatorError::VerificationFailed {
                index,
                detail: format!(
                    "orbit came within {} of the target (threshold {})",
                    check.min_distance, check.threshold
                ),
            });
        }
        points.push(t.outcome);
    }
    PointSample::new(
        points,
        Provenance {
            seed,
            system: system.id(),
            alpha: config.alpha,
            beta: config.beta,
            games: count,
        },
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxRow {
    pub delta: f64,
    pub count: usize,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxCountReport {
    pub slope: f64,
    pub intercept: f64,
    pub rows: Vec<BoxRow>,
    /// Scales below this are saturated and left out.
    pub saturation_scale: f64,
    pub excluded: Vec<f64>,
    pub diameter: f64,
}

/// Geometric scales in `[10·spacing, diameter/10]`, `per_decade` per decade.
pub fn auto_scales(s: &PointSample, per_decade: usize) -> Result<Vec<f64>, EstimatorError> {
    let lo = 10.0 * s.median_spacing();
    let hi = s.diameter() / 10.0;
    if !(lo > 0.0) || hi / lo < 100.0 {
        return Err(EstimatorError::InsufficientScales(format!(
            "automatic window [{lo:.3e}, {hi:.3e}] spans under two decades"
        )));
    }
    let steps = ((hi / lo).log10() * per_decade as f64).floor() as usize;
    Ok((0..=steps)
        .map(|i| hi * 10f64.powf(-(i as f64) / per_decade as f64))
        .collect())
}

/// Least-squares slope of `log N(δ)` against `log(1/δ)`.
pub fn box_counting_dimension(
    s: &PointSample,
    scales: &[f64],
) -> Result<BoxCountReport, EstimatorError> {
    if s.raw_count < 100 {
        return Err(EstimatorError::TooFewPoints(s.raw_count));
    }
    let spacing = s.median_spacing();
    let (kept, excluded): (Vec<f64>, Vec<f64>) =
        scales.iter().copied().filter(|d| *d > 0.0).partition(|&d| d >= spacing * (1.0 - 1e-9));
    let lo = kept.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = kept.iter().copied().fold(0.0, f64::max);
    if kept.len() < 3 || hi / lo < 100.0 {
        return Err(EstimatorError::InsufficientScales(format!(
            "{} usable scales spanning a factor {:.1}; need at least 3 over two decades",
            kept.len(),
            if kept.is_empty() { 0.0 } else { hi / lo }
        )));
    }
    let counts: Vec<usize> = kept.iter().map(|&d| s.occupied_boxes(d)).collect();
    let x: Vec<f64> = kept.iter().map(|d| (1.0 / d).ln()).collect();
    let y: Vec<f64> = counts.iter().map(|&n| (n as f64).ln()).collect();
    let (slope, intercept) = fit_line(&x, &y);
    let rows = kept
        .iter()
        .zip(&counts)
        .zip(x.iter().zip(&y))
        .map(|((&delta, &count), (&lx, &ly))| BoxRow {
            delta,
            count,
            residual: ly - (slope * lx + intercept),
        })
        .collect();
    Ok(BoxCountReport {
        slope,
        intercept,
        rows,
        saturation_scale: spacing,
        excluded,
        diameter: s.diameter(),
    })
}

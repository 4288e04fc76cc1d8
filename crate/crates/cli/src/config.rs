//! Run settings: built-in defaults, then a TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use schmidt_core::alice_strategy::{derive_constants, winning_alpha_bound, StrategyConstants};
use schmidt_core::{ConstantsError, GameConfig, Point, Rectangle, SystemSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Name of the generator every run draws from.
pub const RNG_NAME: &str = "chacha8-v1";

/// Every key may appear in the config file or as a flag; flags win.
#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Settings {
    /// linear2, nonlinear[:a], torus2 or skew2[:omega]
    #[arg(long)]
    pub system: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Radius of Bob's opening ball
    #[arg(long)]
    pub start_radius: Option<f64>,
    #[arg(long)]
    pub stop_radius: Option<f64>,
    /// Avoided point, e.g. "0" or "0,0.5"
    #[arg(long)]
    pub target: Option<String>,
    /// Rectangle width; with `block-length`, replaces the derived constants
    #[arg(long)]
    pub width: Option<f64>,
    #[arg(long)]
    pub block_length: Option<usize>,
    /// random, chaser or both
    #[arg(long)]
    pub bob: Option<String>,
    #[arg(long)]
    pub depth_bias: Option<usize>,
    /// Number of games or sample points
    #[arg(long)]
    pub count: Option<usize>,
    /// JSON file with a list of target coordinates for interleaved play
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Game-tree depth
    #[arg(long)]
    pub depth: Option<usize>,
    /// Expanded children per node in sampled trees
    #[arg(long)]
    pub per_node: Option<usize>,
    /// Expand every node of the game tree
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub full: Option<bool>,
    /// Fibers for the product-measure check (skew product only)
    #[arg(long)]
    pub fibers: Option<usize>,
    /// Leaf samples for the Frostman check
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub per_decade: Option<usize>,
    /// Output file (play) or directory (other commands)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Address to serve on
    #[arg(long)]
    pub addr: Option<String>,
    /// Expose danger hulls on the state endpoint
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub reveal: Option<bool>,
    /// Seconds a session may sit idle
    #[arg(long)]
    pub idle_secs: Option<u64>,
}

macro_rules! overlay {
    ($top:expr, $base:expr, $($f:ident),*) => {
        Settings { $($f: $top.$f.or($base.$f)),* }
    };
}

impl Settings {
    /// Fill unset keys of `self` from `base`.
    pub fn over(self, base: Settings) -> Settings {
        overlay!(
            self, base, system, alpha, beta, seed, start_radius, stop_radius, target, width,
            block_length, bob, depth_bias, count, targets, depth, per_node, full, fibers,
            samples, per_decade, out, addr, reveal, idle_secs
        )
    }

    pub fn from_file(path: &Path) -> Result<Settings, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BobKind {
    Random,
    Chaser,
    Both,
}

/// Settings after defaults are applied and preconditions checked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub system: SystemSpec,
    pub system_name: String,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub start_radius: f64,
    pub stop_radius: f64,
    pub target: Point,
    pub width: Option<f64>,
    pub block_length: Option<usize>,
    pub bob: BobKind,
    pub depth_bias: usize,
    pub count: usize,
    pub targets: Option<PathBuf>,
    pub depth: usize,
    pub per_node: usize,
    pub full: bool,
    pub fibers: Option<usize>,
    pub samples: usize,
    pub per_decade: usize,
    /// Left out of artifacts so they do not depend on where they were written.
    #[serde(skip)]
    pub out: Option<PathBuf>,
    pub addr: String,
    pub reveal: bool,
    pub idle_secs: u64,
}

fn parse_point(s: &str) -> Result<Point, CliError> {
    let coords: Result<Vec<f64>, _> = s.split(',').map(|v| v.trim().parse::<f64>()).collect();
    let coords = coords.map_err(|_| CliError::Config(format!("bad point '{s}'")))?;
    if coords.iter().any(|c| !c.is_finite()) {
        return Err(CliError::Config(format!("bad point '{s}'")));
    }
    Point::new(&coords).map_err(|e| CliError::Config(e.to_string()))
}

fn unit(name: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name} = {v} must lie in (0, 1)")))
    }
}

/// Readable form of the α bound.
fn bound_text(bound: f64) -> String {
    if (bound - 0.25).abs() < 1e-12 {
        "1/4".into()
    } else if (bound - 2f64.sqrt() / 4.0).abs() < 1e-12 {
        "sqrt(2)/4".into()
    } else {
        format!("{bound}")
    }
}

impl RunConfig {
    pub fn resolve(s: Settings) -> Result<Self, CliError> {
        let system_name = s.system.unwrap_or_else(|| "linear2".into());
        let system: SystemSpec = system_name
            .parse()
            .map_err(|e: schmidt_core::DynamicsError| CliError::Config(e.to_string()))?;
        let alpha = unit("alpha", s.alpha.unwrap_or(0.1))?;
        let beta = unit("beta", s.beta.unwrap_or(0.1))?;
        let target = match s.target {
            Some(t) => parse_point(&t)?,
            None if system.ambient_dim() == 1 => Point::on_circle(0.0),
            None => Point::on_torus(0.0, 0.0),
        };
        if target.dim() != system.ambient_dim() {
            return Err(CliError::Config(format!(
                "target has {} coordinates, system {} needs {}",
                target.dim(),
                system.id(),
                system.ambient_dim()
            )));
        }
        let bob = match s.bob.as_deref().unwrap_or("random") {
            "random" => BobKind::Random,
            "chaser" => BobKind::Chaser,
            "both" => BobKind::Both,
            other => return Err(CliError::Config(format!("unknown bob '{other}'"))),
        };
        let cfg = Self {
            system,
            system_name,
            alpha,
            beta,
            seed: s.seed.unwrap_or(0),
            start_radius: s.start_radius.unwrap_or(0.1),
            stop_radius: s.stop_radius.unwrap_or(1e-9),
            target,
            width: s.width,
            block_length: s.block_length,
            bob,
            depth_bias: s.depth_bias.unwrap_or(0),
            count: s.count.unwrap_or(1),
            targets: s.targets,
            depth: s.depth.unwrap_or(8),
            per_node: s.per_node.unwrap_or(2),
            full: s.full.unwrap_or(false),
            fibers: s.fibers,
            samples: s.samples.unwrap_or(32),
            per_decade: s.per_decade.unwrap_or(5),
            out: s.out,
            addr: s.addr.unwrap_or_else(|| "127.0.0.1:8080".into()),
            reveal: s.reveal.unwrap_or(false),
            idle_secs: s.idle_secs.unwrap_or(300),
        };
        cfg.game_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.width.is_some() != cfg.block_length.is_some() {
            return Err(CliError::Config("width and block-length go together".into()));
        }
        if cfg.per_node == 0 {
            return Err(CliError::Config("per-node must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn game_config(&self) -> GameConfig {
        GameConfig::new(self.alpha, self.beta)
            .with_start_radius(self.start_radius)
            .with_stop_radius(self.stop_radius)
    }

    /// Derived constants, or custom ones when a width is given.
    pub fn constants(&self) -> Result<StrategyConstants, CliError> {
        let res = match (self.width, self.block_length) {
            (Some(c), Some(r)) => StrategyConstants::custom(
                &self.system,
                self.alpha,
                self.beta,
                self.start_radius,
                c,
                r,
            ),
            _ => derive_constants(&self.system, self.alpha, self.beta, self.start_radius),
        };
        res.map_err(|e| match e {
            ConstantsError::AlphaAboveBound { alpha, bound } => CliError::Config(format!(
                "alpha {alpha} is not below the winning bound {b} for u = {u} (need 0 < alpha < {b})",
                b = bound_text(bound),
                u = self.system.u
            )),
            other => CliError::Config(other.to_string()),
        })
    }

    pub fn rectangle(&self, constants: &StrategyConstants) -> Result<Rectangle, CliError> {
        Rectangle::new(self.target, constants.c).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn alpha_bound(&self) -> f64 {
        let u = self.system.u;
        let (c, d) = schmidt_core::alice_strategy::playground_constants(u);
        winning_alpha_bound(c, d, u)
    }
}

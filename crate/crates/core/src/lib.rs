//! Schmidt games against targets of the form `{z : y ∉ closure of the orbit of z}`
//! for expanding and partially hyperbolic model maps.
//!
//! The crate contains the game referee, Alice's block strategy and a set of
//! adversarial Bobs, plus tools for turning game trees into measures and
//! estimating the dimension of winning sets.

pub mod alice_strategy;
pub mod dimension_estimator;
pub mod bob_strategies;
pub mod dynamics;
pub mod error;
pub mod game_core;
pub mod measure_lab;
pub mod metric_space;

pub use alice_strategy::{derive_constants, AliceStrategy, StrategyConstants};
pub use dynamics::{PreimageComponent, Rectangle, SystemSpec};
pub use error::*;
pub use game_core::{run_game, GameConfig, Move, Player, Strategy, Transcript};
pub use metric_space::{Ball, Point};

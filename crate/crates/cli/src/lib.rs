//! Command-line front end and match server for the Schmidt game toolkit.

pub mod commands;
pub mod config;
pub mod server;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{RunConfig, Settings};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Verification(_) | CliError::Failed(_) => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "schmidt", version, about = "Schmidt games against nondense-orbit targets")]
pub struct Cli {
    /// TOML file with default settings (same keys as the flags)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print Alice's strategy constants
    Derive {
        #[command(flatten)]
        settings: Settings,
        /// Machine-readable output
        #[arg(long)]
        json: bool,
    },
    /// Play and verify one game
    Play {
        #[command(flatten)]
        settings: Settings,
        /// Replay a stored game artifact
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Play a seeded batch of games
    Tournament {
        #[command(flatten)]
        settings: Settings,
    },
    /// Build a game tree and its measure
    Tree {
        #[command(flatten)]
        settings: Settings,
    },
    /// Box-counting dimension of sampled winning points
    Dimension {
        #[command(flatten)]
        settings: Settings,
    },
    /// Serve games to remote Bobs over websockets
    Serve {
        #[command(flatten)]
        settings: Settings,
    },
}

fn resolve(config: &Option<PathBuf>, flags: &Settings) -> Result<RunConfig, CliError> {
    let base = match config {
        Some(p) => Settings::from_file(p)?,
        None => Settings::default(),
    };
    RunConfig::resolve(flags.clone().over(base))
}

/// Parse `args` and run; output goes to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            let _ = write!(out, "{e}");
            CliError::Failed(String::new())
        }
        _ => CliError::Config(e.to_string()),
    });
    let cli = match cli {
        Ok(c) => c,
        Err(CliError::Failed(s)) if s.is_empty() => return Ok(()),
        Err(e) => return Err(e),
    };
    match &cli.command {
        Command::Derive { settings, json } => commands::cmd_derive(&resolve(&cli.config, settings)?, *json, out),
        Command::Play { settings, replay } => {
            commands::cmd_play(&resolve(&cli.config, settings)?, replay.as_deref(), out)
        }
        Command::Tournament { settings } => commands::cmd_tournament(&resolve(&cli.config, settings)?, out),
        Command::Tree { settings } => commands::cmd_tree(&resolve(&cli.config, settings)?, out),
        Command::Dimension { settings } => commands::cmd_dimension(&resolve(&cli.config, settings)?, out),
        Command::Serve { settings } => server::cmd_serve(&resolve(&cli.config, settings)?, out),
    }
}

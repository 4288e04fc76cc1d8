//! The batch commands: derive, play, tournament, tree and dimension.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schmidt_core::alice_strategy::{AliceStrategy, InterleavedStrategy, StrategyConstants};
use schmidt_core::bob_strategies::{ChaserBob, RandomBob, ScriptedPlayer};
use schmidt_core::dimension_estimator::{auto_scales, box_counting_dimension, sample_winning_points};
use schmidt_core::game_core::{verify_targets, verify_transcript, MultiTargetReport, Player};
use schmidt_core::measure_lab::{
    build_game_tree, closed_form_bound, dimension_lower_bound, frostman_check, product_measure_check,
    rescale_measures, Expansion, ProductOptions, TreeOptions,
};
use schmidt_core::{run_game, EstimatorError, Point, Rectangle, Strategy, Transcript};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{BobKind, RunConfig, RNG_NAME};
use crate::CliError;

/// Trees with more nodes than this are not exported as nested JSON.
const NESTED_EXPORT_LIMIT: usize = 200_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub tool: String,
    pub rng: String,
    pub seed: u64,
    pub command: String,
    pub config: RunConfig,
}

impl Header {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            tool: format!("schmidt {}", env!("CARGO_PKG_VERSION")),
            rng: RNG_NAME.into(),
            seed: cfg.seed,
            command: command.into(),
            config: cfg.clone(),
        }
    }

    /// Comment line opening every CSV artifact.
    pub fn csv_line(&self) -> String {
        format!("# {} rng={} seed={} command={}\n", self.tool, self.rng, self.seed, self.command)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameArtifact {
    pub header: Header,
    pub transcript: Transcript,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<MultiTargetReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<usize>>,
}

impl GameArtifact {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("artifact serializes")
    }

    pub fn passed(&self) -> bool {
        match (&self.targets, &self.transcript.verification) {
            (Some(t), _) => t.passed,
            (None, Some(v)) => v.passed,
            (None, None) => false,
        }
    }

    /// Smallest margin over the orbit checks: distance minus threshold.
    pub fn min_orbit_distance(&self) -> f64 {
        match (&self.targets, &self.transcript.verification) {
            (Some(t), _) => t.orbits.iter().map(|o| o.min_distance).fold(f64::INFINITY, f64::min),
            (None, Some(v)) => v.orbit.min_distance,
            (None, None) => f64::NAN,
        }
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.transcript.to_json().as_bytes()))
    }
}

fn failed<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Failed(e.to_string())
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Failed(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn out_dir(cfg: &RunConfig) -> Result<Option<PathBuf>, CliError> {
    match &cfg.out {
        Some(d) => {
            fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
            Ok(Some(d.clone()))
        }
        None => Ok(None),
    }
}

fn csv_text(header: &Header, rows: &[Vec<String>], columns: &[&str]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(columns).map_err(failed)?;
    for r in rows {
        w.write_record(r).map_err(failed)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(failed)?).map_err(failed)?;
    Ok(header.csv_line() + &body)
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(failed)
}

pub fn cmd_derive(cfg: &RunConfig, json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let k = cfg.constants()?;
    let report = k.report();
    if json {
        emit(out, &(serde_json::to_string_pretty(&report).map_err(failed)? + "\n"))?;
    } else {
        emit(out, &format!("system       = {}\n", cfg.system.id()))?;
        emit(out, &report.to_text())?;
    }
    if report.all_hold() {
        Ok(())
    } else {
        Err(CliError::Verification("derived constants violate an inequality".into()))
    }
}

fn make_bob(kind: BobKind, seed: u64, depth_bias: usize) -> Box<dyn Strategy> {
    match kind {
        BobKind::Chaser => Box::new(ChaserBob::seeded(depth_bias, seed)),
        _ => Box::new(RandomBob::new(seed)),
    }
}

fn load_targets(path: &Path, u: usize) -> Result<Vec<Point>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let raw: Vec<Vec<f64>> = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: expected a list of coordinate lists ({e})", path.display())))?;
    let pts: Result<Vec<Point>, _> = raw.iter().map(|c| Point::new(c)).collect();
    let pts = pts.map_err(|e| CliError::Config(e.to_string()))?;
    if pts.is_empty() || pts.iter().any(|p| p.dim() != u) {
        return Err(CliError::Config(format!(
            "{}: need at least one target with {u} coordinates",
            path.display()
        )));
    }
    Ok(pts)
}

/// Whether the schedule serves target `t` exactly on turns `k ≡ 2^{t−1} (mod 2^t)`.
pub fn schedule_matches(schedule: &[usize], targets: usize) -> bool {
    schedule.iter().enumerate().all(|(i, &t)| {
        let k = i + 1;
        if t == 0 {
            k % (1 << targets) == 0
        } else {
            t <= targets && k % (1 << t) == 1 << (t - 1)
        }
    })
}

/// Play one game with the configured Alice and the given Bob.
pub fn play_game(
    cfg: &RunConfig,
    header: &Header,
    constants: &StrategyConstants,
    rect: &Rectangle,
    targets: Option<&[Point]>,
    bob: &mut dyn Strategy,
) -> Result<GameArtifact, CliError> {
    let game = cfg.game_config();
    if let Some(targets) = targets {
        let (mut alice, rects) =
            InterleavedStrategy::new(&cfg.system, targets, cfg.alpha, cfg.beta, cfg.start_radius)
                .map_err(|e| CliError::Config(e.to_string()))?;
        let mut t = run_game(&game, &cfg.system, &rects[0], &mut alice, bob).map_err(failed)?;
        t.extra_rectangles = rects[1..].to_vec();
        let report = verify_targets(&t);
        return Ok(GameArtifact {
            header: header.clone(),
            transcript: t,
            targets: Some(report),
            schedule: Some(alice.schedule().to_vec()),
        });
    }
    let mut alice = AliceStrategy::new(cfg.system.clone(), *rect, constants.clone());
    let mut t = run_game(&game, &cfg.system, rect, &mut alice, bob).map_err(failed)?;
    t.verification = Some(verify_transcript(&t, constants, &cfg.system, rect));
    Ok(GameArtifact {
        header: header.clone(),
        transcript: t,
        targets: None,
        schedule: None,
    })
}

impl GameArtifact {
    /// True when no orbit check had a positive threshold at this stop radius.
    pub fn orbit_check_vacuous(&self) -> bool {
        match (&self.targets, &self.transcript.verification) {
            (Some(t), _) => t.orbits.iter().all(|o| o.threshold <= 0.0),
            (None, Some(v)) => v.orbit.threshold <= 0.0,
            (None, None) => true,
        }
    }
}

fn summary_line(a: &GameArtifact) -> String {
    format!(
        "{} after {} moves, outcome {:?}, min orbit distance {:e}{}, sha256 {}\n",
        if a.passed() { "verified" } else { "VERIFICATION FAILED" },
        a.transcript.moves.len(),
        a.transcript.outcome,
        a.min_orbit_distance(),
        if a.orbit_check_vacuous() { " (rectangle below stop radius, orbit check vacuous)" } else { "" },
        a.sha256()
    )
}

pub fn cmd_play(cfg: &RunConfig, replay: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    let artifact = match replay {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let stored: GameArtifact = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: not a game artifact ({e})", path.display())))?;
            let rcfg = &stored.header.config;
            let t = &stored.transcript;
            let mut alice = ScriptedPlayer::from_transcript(t, Player::Alice);
            let mut bob = ScriptedPlayer::from_transcript(t, Player::Bob);
            let mut again = run_game(&t.config, &t.system, &t.rectangle, &mut alice, &mut bob).map_err(failed)?;
            again.extra_rectangles = t.extra_rectangles.clone();
            let mut a = GameArtifact {
                header: stored.header.clone(),
                transcript: again,
                targets: None,
                schedule: stored.schedule.clone(),
            };
            if stored.targets.is_some() {
                a.targets = Some(verify_targets(&a.transcript));
            } else {
                let k = rcfg.constants()?;
                a.transcript.verification =
                    Some(verify_transcript(&a.transcript, &k, &a.transcript.system, &a.transcript.rectangle));
            }
            a
        }
        None => {
            if cfg.bob == BobKind::Both {
                return Err(CliError::Config("play takes a single bob: random or chaser".into()));
            }
            let header = Header::new("play", cfg);
            let k = cfg.constants()?;
            let rect = cfg.rectangle(&k)?;
            let targets = match &cfg.targets {
                Some(p) => Some(load_targets(p, cfg.system.ambient_dim())?),
                None => None,
            };
            let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut bob = make_bob(cfg.bob, master.next_u64(), cfg.depth_bias);
            play_game(cfg, &header, &k, &rect, targets.as_deref(), bob.as_mut())?
        }
    };
    let json = artifact.to_json();
    match &cfg.out {
        Some(path) => {
            write_file(path, &json)?;
            emit(out, &summary_line(&artifact))?;
        }
        None => emit(out, &(json + "\n"))?,
    }
    if artifact.passed() {
        Ok(())
    } else {
        Err(CliError::Verification("game failed verification".into()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TournamentReport {
    pub header: Header,
    pub games: usize,
    pub passed: usize,
    pub failed: usize,
    pub max_danger_count: usize,
    pub danger_bound: usize,
    pub min_orbit_distance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule_ok: Option<bool>,
}

pub fn cmd_tournament(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let header = Header::new("tournament", cfg);
    let k = cfg.constants()?;
    let rect = cfg.rectangle(&k)?;
    let targets = match &cfg.targets {
        Some(p) => Some(load_targets(p, cfg.system.ambient_dim())?),
        None => None,
    };
    let kinds: &[BobKind] = match cfg.bob {
        BobKind::Both => &[BobKind::Random, BobKind::Chaser],
        BobKind::Random => &[BobKind::Random],
        BobKind::Chaser => &[BobKind::Chaser],
    };
    let dir = out_dir(cfg)?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    let mut report = TournamentReport {
        header: header.clone(),
        games: 0,
        passed: 0,
        failed: 0,
        max_danger_count: 0,
        danger_bound: k.n_bound,
        min_orbit_distance: f64::INFINITY,
        schedule_ok: targets.as_ref().map(|_| true),
    };
    for &kind in kinds {
        let name = if kind == BobKind::Chaser { "chaser" } else { "random" };
        for i in 0..cfg.count {
            let seed = master.next_u64();
            let mut bob = make_bob(kind, seed, cfg.depth_bias);
            let a = play_game(cfg, &header, &k, &rect, targets.as_deref(), bob.as_mut())?;
            let passed = a.passed();
            let dangers = a.transcript.verification.as_ref().map_or(0, |v| v.max_danger_count);
            report.games += 1;
            if passed {
                report.passed += 1;
            } else {
                report.failed += 1;
            }
            report.max_danger_count = report.max_danger_count.max(dangers);
            report.min_orbit_distance = report.min_orbit_distance.min(a.min_orbit_distance());
            if let (Some(ok), Some(s), Some(t)) = (report.schedule_ok.as_mut(), &a.schedule, &targets) {
                *ok &= schedule_matches(s, t.len());
            }
            rows.push(vec![
                report.games.to_string(),
                name.to_string(),
                seed.to_string(),
                if passed { "alice" } else { "bob" }.to_string(),
                format!("{:e}", a.min_orbit_distance()),
                a.transcript.moves.len().to_string(),
                dangers.to_string(),
                passed.to_string(),
                a.sha256(),
            ]);
            if let Some(d) = &dir {
                write_file(&d.join("transcripts").join(format!("{name}-{i:05}.json")), &a.to_json())?;
            }
        }
    }
    if let Some(d) = &dir {
        let columns = [
            "game", "bob", "seed", "winner", "min_orbit_distance", "length", "max_dangers", "passed", "sha256",
        ];
        write_file(&d.join("summary.csv"), &csv_text(&header, &rows, &columns)?)?;
        write_file(&d.join("report.json"), &serde_json::to_string_pretty(&report).map_err(failed)?)?;
    }
    emit(
        out,
        &format!(
            "{} games: {} passed, {} failed; max dangers per block {} (bound {}); min orbit distance {:e}\n",
            report.games,
            report.passed,
            report.failed,
            report.max_danger_count,
            report.danger_bound,
            report.min_orbit_distance
        ),
    )?;
    if let Some(ok) = report.schedule_ok {
        emit(out, &format!("interleaving schedule {}\n", if ok { "ok" } else { "MISMATCH" }))?;
    }
    if report.failed > 0 || report.schedule_ok == Some(false) {
        Err(CliError::Verification(format!("{} of {} games failed", report.failed, report.games)))
    } else {
        Ok(())
    }
}

pub fn cmd_tree(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let header = Header::new("tree", cfg);
    let k = cfg.constants()?;
    let rect = cfg.rectangle(&k)?;
    let u = cfg.system.u;
    let mut opts = TreeOptions::new(u);
    opts.expansion = if cfg.full {
        Expansion::Full
    } else {
        Expansion::Sampled {
            per_node: cfg.per_node,
            seed: cfg.seed,
        }
    };
    let tree = build_game_tree(&cfg.system, &rect, &cfg.game_config(), &k, cfg.depth, &opts).map_err(failed)?;
    let m = rescale_measures(&tree).map_err(failed)?;
    let closed = closed_form_bound(u, cfg.alpha, cfg.beta, 1.0);
    emit(out, &format!("nodes: {}, depth: {}\n", tree.nodes.len(), tree.depth()))?;
    emit(out, &format!("closed-form bound: {closed:.6}\n"))?;
    match dimension_lower_bound(&tree, u, cfg.alpha, cfg.beta, 1.0) {
        Ok(b) => {
            emit(out, &format!("measured bound: {:.6}\n", b.measured))?;
            let trend: Vec<String> = b.partial.iter().map(|v| format!("{v:.4}")).collect();
            emit(out, &format!("partial bounds: {}\n", trend.join(" ")))?;
        }
        Err(e) => emit(out, &format!("measured bound: n/a ({e})\n"))?,
    }
    let totals = m.level_totals(&tree);
    let drift = totals
        .iter()
        .map(|t| (t - tree.base_volume).abs() / tree.base_volume)
        .fold(0.0, f64::max);
    emit(out, &format!("max refinement error: {:e}\n", m.max_refinement_error(&tree)))?;
    if cfg.full {
        emit(out, &format!("max level-mass drift: {drift:e}\n"))?;
    }
    let dir = out_dir(cfg)?;
    if tree.depth() >= 4 {
        let rep = frostman_check(&tree, &m, closed - 0.05, 1.0, cfg.samples, cfg.seed).map_err(failed)?;
        emit(
            out,
            &format!(
                "frostman h={:.4} C=1: max ratio {:.4e}, slope {:.4}, {}\n",
                rep.exponent,
                rep.max_ratio,
                rep.slope,
                if rep.passed { "passed" } else { "FAILED" }
            ),
        )?;
        if let Some(d) = &dir {
            let rows: Vec<Vec<String>> = rep
                .rows
                .iter()
                .map(|r| vec![format!("{:e}", r.r), format!("{:e}", r.mass), format!("{:e}", r.residual)])
                .collect();
            write_file(&d.join("slope.csv"), &csv_text(&header, &rows, &["r", "mass", "residual"])?)?;
        }
    }
    if let Some(fibers) = cfg.fibers {
        let mut popts = ProductOptions::new(cfg.alpha, cfg.beta);
        popts.start_radius = cfg.start_radius;
        popts.target = cfg.target;
        popts.tree = opts.clone();
        popts.samples = cfg.samples;
        popts.seed = cfg.seed;
        let rep = product_measure_check(&cfg.system, fibers, cfg.depth, &popts).map_err(failed)?;
        emit(
            out,
            &format!(
                "product measure: {} fibers, slope {:.4} (n - eps = {:.4})\n",
                rep.fibers, rep.slope, rep.expected
            ),
        )?;
        if let Some(d) = &dir {
            let rows: Vec<Vec<String>> = rep
                .rows
                .iter()
                .map(|r| vec![format!("{:e}", r.r), format!("{:e}", r.mass), format!("{:e}", r.residual)])
                .collect();
            write_file(&d.join("product.csv"), &csv_text(&header, &rows, &["r", "mass", "residual"])?)?;
        }
    }
    if let Some(d) = &dir {
        let rows: Vec<Vec<String>> = tree
            .flat_rows(&m)
            .into_iter()
            .map(|r| {
                let c = r.center.coords();
                vec![
                    r.level.to_string(),
                    c[0].to_string(),
                    c.get(1).map_or(String::new(), |y| y.to_string()),
                    format!("{:e}", r.radius),
                    format!("{:e}", r.mass),
                ]
            })
            .collect();
        write_file(&d.join("tree.csv"), &csv_text(&header, &rows, &["level", "x", "y", "radius", "mass"])?)?;
        if tree.nodes.len() <= NESTED_EXPORT_LIMIT {
            let doc = serde_json::json!({ "header": header, "tree": tree.to_nested_json(&m) });
            write_file(&d.join("tree.json"), &serde_json::to_string(&doc).map_err(failed)?)?;
        }
    }
    Ok(())
}

pub fn cmd_dimension(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let header = Header::new("dimension", cfg);
    let k = cfg.constants()?;
    let rect = cfg.rectangle(&k)?;
    let estimator_err = |e: EstimatorError| match e {
        EstimatorError::TooFewPoints(_) | EstimatorError::InsufficientScales(_) => CliError::Config(e.to_string()),
        EstimatorError::VerificationFailed { .. } => CliError::Verification(e.to_string()),
        other => CliError::Failed(other.to_string()),
    };
    let sample = sample_winning_points(&cfg.system, &rect, &cfg.game_config(), &k, cfg.count, cfg.seed)
        .map_err(estimator_err)?;
    let scales = auto_scales(&sample, cfg.per_decade).map_err(estimator_err)?;
    let rep = box_counting_dimension(&sample, &scales).map_err(estimator_err)?;
    emit(
        out,
        &format!(
            "points: {} ({} distinct)\nwindow: [{:e}, {:e}]\nbox-counting slope: {:.4}\nclosed-form bound: {:.4}\n",
            sample.raw_count,
            sample.points.len(),
            rep.rows.iter().map(|r| r.delta).fold(f64::INFINITY, f64::min),
            rep.rows.iter().map(|r| r.delta).fold(0.0, f64::max),
            rep.slope,
            closed_form_bound(cfg.system.u, cfg.alpha, cfg.beta, 1.0)
        ),
    )?;
    if let Some(d) = out_dir(cfg)? {
        let rows: Vec<Vec<String>> = rep
            .rows
            .iter()
            .map(|r| vec![format!("{:e}", r.delta), r.count.to_string(), format!("{:e}", r.residual)])
            .collect();
        write_file(&d.join("boxes.csv"), &csv_text(&header, &rows, &["delta", "count", "residual"])?)?;
        let rows: Vec<Vec<String>> = sample
            .points
            .iter()
            .map(|p| p.coords().iter().map(|c| c.to_string()).collect())
            .collect();
        let cols: &[&str] = if cfg.system.u == 1 { &["x"] } else { &["x", "y"] };
        write_file(&d.join("points.csv"), &csv_text(&header, &rows, cols)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_check() {
        // turns 1..8 with three targets
        assert!(schedule_matches(&[1, 2, 1, 3, 1, 2, 1, 0], 3));
        assert!(!schedule_matches(&[1, 1, 1, 3], 3));
        assert!(!schedule_matches(&[2, 1], 3));
    }
}

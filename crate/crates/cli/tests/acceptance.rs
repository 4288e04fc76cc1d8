//! Acceptance suite: one pass/fail line per headline criterion.

use std::f64::consts::PI;
use std::fs;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schmidt_cli::run;
use schmidt_core::alice_strategy::{
    avoid_move, avoidance_fraction, derive_constants, playground_constants, winning_alpha_bound, AliceStrategy,
    InterleavedStrategy, StrategyConstants,
};
use schmidt_core::bob_strategies::{ChaserBob, RandomBob};
use schmidt_core::dimension_estimator::{auto_scales, box_counting_dimension, sample_winning_points, PointSample, Provenance};
use schmidt_core::dynamics::default_nonlinear_a;
use schmidt_core::game_core::{verify_targets, verify_transcript, Player};
use schmidt_core::measure_lab::*;
use schmidt_core::metric_space::{Ball, Point};
use schmidt_core::{run_game, GameConfig, Rectangle, Strategy, SystemSpec};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn systems() -> Vec<SystemSpec> {
    vec![
        SystemSpec::linear_circle(2),
        SystemSpec::nonlinear_circle(default_nonlinear_a()).unwrap(),
        SystemSpec::conformal_torus(2),
        SystemSpec::skew_product(2, 0.37),
    ]
}

fn target_for(sys: &SystemSpec) -> Point {
    if sys.ambient_dim() == 1 {
        Point::on_circle(0.0)
    } else {
        Point::on_torus(0.0, 0.5)
    }
}

fn circle_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

fn torus_dist(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| circle_dist(*a, *b).powi(2)).sum::<f64>().sqrt()
}

/// Reference implementation of each map on the ambient space.
fn oracle_step(sys: &SystemSpec, p: &[f64]) -> Vec<f64> {
    let a = default_nonlinear_a();
    match sys.id().split('(').next().unwrap() {
        "linear-circle" => vec![(2.0 * p[0]).rem_euclid(1.0)],
        "nonlinear-circle" => vec![(2.0 * p[0] + a * (2.0 * PI * p[0]).sin()).rem_euclid(1.0)],
        "conformal-torus" => vec![(2.0 * p[0]).rem_euclid(1.0), (2.0 * p[1]).rem_euclid(1.0)],
        "skew-product" => vec![(2.0 * p[0]).rem_euclid(1.0), (p[1] + 0.37).rem_euclid(1.0)],
        other => panic!("no oracle for {other}"),
    }
}

/// Smallest h ≥ 0 with σ1^h ≥ c / (2 r_final).
fn oracle_horizon(sigma1: f64, c: f64, final_radius: f64) -> usize {
    let mut h = 0;
    let mut grow = 1.0;
    while grow * 2.0 * final_radius < c * (1.0 - 1e-12) {
        grow *= sigma1;
        h += 1;
    }
    h
}

struct GameTally {
    games: usize,
    passed: usize,
    orbit_ok: usize,
    max_dangers: usize,
    bound: usize,
    horizons: (usize, usize),
}

fn tournament(sys: &SystemSpec, k: &StrategyConstants, cfg: &GameConfig, n: usize, seed: u64) -> GameTally {
    let rect = Rectangle::new(target_for(sys), k.c).unwrap();
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = GameTally {
        games: 0,
        passed: 0,
        orbit_ok: 0,
        max_dangers: 0,
        bound: k.n_bound,
        horizons: (usize::MAX, 0),
    };
    for i in 0..2 * n {
        let s = master.next_u64();
        let mut bob: Box<dyn Strategy> = if i < n {
            Box::new(RandomBob::new(s))
        } else {
            Box::new(ChaserBob::seeded(i % 3, s))
        };
        let mut alice = AliceStrategy::new(sys.clone(), rect, k.clone());
        tally.games += 1;
        let Ok(t) = run_game(cfg, sys, &rect, &mut alice, bob.as_mut()) else {
            continue;
        };
        let v = verify_transcript(&t, k, sys, &rect);
        tally.max_dangers = tally.max_dangers.max(v.max_danger_count);
        if v.passed && t.final_radius <= cfg.stop_radius {
            tally.passed += 1;
        }
        // independent orbit check
        let h = oracle_horizon(sys.sigma1, k.c, t.final_radius);
        tally.horizons = (tally.horizons.0.min(h), tally.horizons.1.max(h));
        let mut p = sys.lift(&t.outcome).coords().to_vec();
        let target = rect.target.coords().to_vec();
        let mut best = torus_dist(&p, &target);
        for _ in 0..h {
            p = oracle_step(sys, &p);
            best = best.min(torus_dist(&p, &target));
        }
        if best >= k.c / 2.0 - 1e-9 && v.orbit.horizon == h {
            tally.orbit_ok += 1;
        }
    }
    tally
}

fn constants() -> Outcome {
    let start = Instant::now();
    let mut out = Vec::new();
    let ok = run(["schmidt", "derive", "--json"], &mut out).is_ok();
    let elapsed = start.elapsed().as_secs_f64();
    let json: serde_json::Value = serde_json::from_slice(&out).unwrap();
    let k = &json["constants"];
    // ε = 1/D − C(2α)^u with C = 1, D = 2, u = 1
    let eps: f64 = 0.5 - 0.2;
    // N(r) = ⌊r·ln(100)/ln 2⌋ + 3 with K = 1, σ1 = 2
    let n_of = |r: f64| (r * 100f64.ln() / 2f64.ln()).floor() + 3.0;
    let r = (1..100).find(|&r| (1.0 - eps).powi(r) * n_of(r as f64) < 1.0).unwrap();
    let n = n_of(r as f64) as u64;
    let product = (1.0 - eps).powi(r) * n as f64;
    let passed = ok
        && (k["epsilon"].as_f64().unwrap() - eps).abs() < 1e-12
        && k["r"] == r
        && k["N"] == n
        && product < 1.0
        && elapsed < 1.0;
    outcome(
        passed,
        format!("epsilon {} r {} N {} (0.7)^13*89 = {product:.4}, {elapsed:.3}s", k["epsilon"], k["r"], k["N"]),
    )
}

fn soundness_and_counting() -> (Outcome, Outcome, Outcome) {
    let mut lines = Vec::new();
    let mut all_pass = true;
    let mut max_seen = 0;
    let mut count_ok = true;
    let start = Instant::now();
    for sys in systems() {
        let k = derive_constants(&sys, 0.1, 0.1, 0.1).unwrap();
        let cfg = GameConfig::new(0.1, 0.1).with_stop_radius(1e-9);
        let t = tournament(&sys, &k, &cfg, 1000, 2024);
        all_pass &= t.passed == t.games && t.orbit_ok == t.games;
        count_ok &= t.max_dangers <= t.bound;
        max_seen = max_seen.max(t.max_dangers);
        lines.push(format!(
            "{} {}/{} verified, {} orbit oracle, horizon {}..{}",
            sys.id(),
            t.passed,
            t.games,
            t.orbit_ok,
            t.horizons.0,
            t.horizons.1
        ));
    }
    let soundness = outcome(
        all_pass,
        format!("{}; {:.1}s", lines.join("; "), start.elapsed().as_secs_f64()),
    );

    // the derived rectangle is far below the stop radius, so a wide custom
    // rectangle shows the strategy against dangers that actually occur
    let mut wide_lines = Vec::new();
    let mut wide_pass = true;
    let mut wide_max = 0;
    for sys in systems() {
        let k = StrategyConstants::custom(&sys, 0.1, 0.5, 0.05, 1e-5, 2).unwrap();
        let cfg = GameConfig::new(0.1, 0.5).with_start_radius(0.05).with_stop_radius(1e-9);
        let t = tournament(&sys, &k, &cfg, 100, 7);
        wide_pass &= t.passed == t.games && t.orbit_ok == t.games;
        count_ok &= t.max_dangers <= t.bound;
        wide_max = wide_max.max(t.max_dangers);
        wide_lines.push(format!(
            "{} {}/{} max dangers {}/{} horizon {}..{}",
            sys.id(),
            t.passed,
            t.games,
            t.max_dangers,
            t.bound,
            t.horizons.0,
            t.horizons.1
        ));
    }
    let wide = outcome(wide_pass, wide_lines.join("; "));
    let counting = outcome(
        count_ok,
        format!("max observed danger count {max_seen} (derived constants), {wide_max} (wide rectangle), bound N per run"),
    );
    (soundness, wide, counting)
}

fn avoidance_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    let mut failures = 0;
    let mut worst = f64::INFINITY;
    for _ in 0..10_000 {
        let u = rng.gen_range(1..=2);
        let (c, d) = playground_constants(u);
        let bound = winning_alpha_bound(c, d, u);
        let alpha = rng.gen_range(0.01..bound * 0.98);
        let eps = avoidance_fraction(c, d, u, alpha);
        let radius = rng.gen_range(0.01..0.25);
        let center: Vec<f64> = (0..u).map(|_| rng.gen_range(0.0..1.0)).collect();
        let current = Ball::new(Point::new(&center).unwrap(), radius).unwrap();
        let n = rng.gen_range(1..=120);
        let spread = radius * rng.gen_range(0.05..1.2);
        let cluster: Vec<f64> = center.iter().map(|x| x + rng.gen_range(-radius..radius) * 0.5).collect();
        let dangers: Vec<Ball> = (0..n)
            .map(|_| {
                let p: Vec<f64> = cluster.iter().map(|x| x + rng.gen_range(-spread..spread)).collect();
                Ball::new(Point::new(&p).unwrap(), alpha * radius * 0.1).unwrap()
            })
            .collect();
        let needed = (eps * n as f64 - 1e-9).ceil().max(1.0) as usize;
        let Ok(got) = avoid_move(&current, &dangers, alpha, eps) else {
            failures += 1;
            continue;
        };
        let a = alpha * radius;
        let gc = got.center.coords().to_vec();
        let inside = torus_dist(&gc, &center) <= radius - a + 1e-12 && (got.radius - a).abs() <= 1e-15;
        let avoided = dangers
            .iter()
            .filter(|d| torus_dist(&gc, d.center.coords()) > 2.0 * a)
            .count();
        worst = worst.min(avoided as f64 / needed as f64);
        if !inside || avoided < needed {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!("10000 instances, {failures} failures, worst avoided/needed {worst:.3}"),
    )
}

fn distortion() -> Outcome {
    let a = default_nonlinear_a();
    let sys = SystemSpec::nonlinear_circle(a).unwrap();
    let k = derive_constants(&sys, 0.1, 0.1, 0.1).unwrap();
    let big_k = sys.distortion_constant(k.c_prime);
    let rect = Rectangle::new(Point::on_circle(0.0), k.c_prime).unwrap();
    let window = Ball::new(Point::on_circle(0.5), 0.25).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut ok = true;
    let map = |x: f64| (2.0 * x + a * (2.0 * PI * x).sin()).rem_euclid(1.0);
    let deriv = |x: f64, n: usize| {
        let mut p = x;
        let mut acc = 1.0;
        for _ in 0..n {
            acc *= 2.0 + 2.0 * PI * a * (2.0 * PI * p).cos();
            p = map(p);
        }
        acc
    };
    while checked < 200 {
        let depth = rng.gen_range(1..=12);
        let comps = sys.preimage_components(&rect, depth, &window).unwrap();
        if comps.is_empty() {
            continue;
        }
        let hull = comps[rng.gen_range(0..comps.len())].hull;
        let mut pick = || loop {
            let x = (hull.center.x() + rng.gen_range(-hull.radius..=hull.radius)).rem_euclid(1.0);
            let mut y = x;
            for _ in 0..depth {
                y = map(y);
            }
            if circle_dist(y, 0.0) <= k.c_prime / 2.0 {
                break x;
            }
        };
        let (z1, z2) = (pick(), pick());
        let log_ratio = (deriv(z1, depth) / deriv(z2, depth)).ln().abs();
        worst = worst.max(log_ratio);
        ok &= log_ratio <= big_k.ln() + 1e-9;
        checked += 1;
    }
    let mut round = 0;
    let mut worst_round: f64 = 1.0;
    for sys in [SystemSpec::conformal_torus(2), SystemSpec::skew_product(2, 0.37)] {
        let k = derive_constants(&sys, 0.1, 0.1, 0.1).unwrap();
        let big_k = sys.distortion_constant(k.c_prime);
        let target = sys.unstable_part(&target_for(&sys));
        let rect = Rectangle::new(target, k.c_prime).unwrap();
        let window = Ball::new(sys.unstable_part(&Point::on_torus(0.3, 0.3)), 0.2).unwrap();
        for depth in 0..=6 {
            for comp in sys.preimage_components(&rect, depth, &window).unwrap() {
                let q = comp.outer_radius / comp.inner_radius;
                worst_round = worst_round.max(q);
                ok &= q <= big_k * (1.0 + 1e-9);
                round += 1;
            }
        }
    }
    outcome(
        ok && round > 0,
        format!(
            "200 pairs, worst |log ratio| {worst:.3e} vs log K {:.3e}; {round} conformal components, worst R/r {worst_round:.6}",
            big_k.ln()
        ),
    )
}

fn game_tree(alpha: f64, beta: f64, depth: usize, exp: Expansion) -> TreeFamily {
    let sys = SystemSpec::linear_circle(2);
    let k = derive_constants(&sys, alpha, beta, 0.1).unwrap();
    let rect = Rectangle::new(Point::on_circle(0.0), k.c).unwrap();
    let mut opts = TreeOptions::new(1);
    opts.expansion = exp;
    build_game_tree(&sys, &rect, &GameConfig::new(alpha, beta), &k, depth, &opts).unwrap()
}

fn measure_suite() -> Outcome {
    let full = game_tree(0.1, 0.19, 8, Expansion::Full);
    let m = rescale_measures(&full).unwrap();
    let conservation = m
        .level_totals(&full)
        .iter()
        .map(|t| (t - full.base_volume).abs() / full.base_volume)
        .fold(0.0, f64::max);
    let refinement = m.max_refinement_error(&full);
    let closed_oracle = 1.0 - 10f64.ln() / 1000f64.ln();
    let sampled = game_tree(0.1, 0.01, 8, Expansion::Sampled { per_node: 2, seed: 7 });
    let b = dimension_lower_bound(&sampled, 1, 0.1, 0.01, 1.0).unwrap();
    let seq: Vec<f64> = [0.1, 0.05, 0.01].iter().map(|&beta| closed_form_bound(1, 0.1, beta, 1.0)).collect();
    let increasing = seq.windows(2).all(|w| w[0] < w[1]) && seq[2] < 1.0;
    let passed = conservation <= 1e-12
        && refinement <= 1e-12
        && (b.closed_form - closed_oracle).abs() <= 1e-12
        && (b.measured - b.closed_form).abs() <= 0.05
        && increasing;
    outcome(
        passed,
        format!(
            "depth 8 ({} leaves): mass error {conservation:.1e}, refinement error {refinement:.1e}; closed form {:.12} measured {:.4}; bounds {:.4} < {:.4} < {:.4}",
            full.levels[8].len(),
            b.closed_form,
            b.measured,
            seq[0],
            seq[1],
            seq[2]
        ),
    )
}

fn cantor_midpoints(depth: u32) -> Vec<Point> {
    (0u32..1 << depth)
        .map(|bits| {
            let mut left = 0.0;
            let mut width = 1.0;
            for i in (0..depth).rev() {
                width /= 3.0;
                if bits >> i & 1 == 1 {
                    left += 2.0 * width;
                }
            }
            Point::on_circle(left + width / 2.0)
        })
        .collect()
}

fn box_count() -> Outcome {
    let sys = SystemSpec::linear_circle(2);
    let k = derive_constants(&sys, 0.1, 0.01, 0.1).unwrap();
    let rect = Rectangle::new(Point::on_circle(0.0), k.c).unwrap();
    let s = sample_winning_points(&sys, &rect, &GameConfig::new(0.1, 0.01), &k, 12_000, 11).unwrap();
    let rep = box_counting_dimension(&s, &auto_scales(&s, 5).unwrap()).unwrap();
    let cantor = PointSample::new(cantor_midpoints(12), Provenance::default()).unwrap();
    let scales: Vec<f64> = (1..=10).map(|k| 3f64.powi(-k)).collect();
    let c = box_counting_dimension(&cantor, &scales).unwrap();
    let want = 2f64.ln() / 3f64.ln();
    outcome(
        rep.slope >= 0.9 * 2.0 / 3.0 && (c.slope - want).abs() <= 0.03,
        format!(
            "winning points beta 0.01: slope {:.4} (need >= {:.4}); Cantor slope {:.4} (want {want:.4})",
            rep.slope,
            0.9 * 2.0 / 3.0,
            c.slope
        ),
    )
}

fn product_measure() -> Outcome {
    let sys = SystemSpec::skew_product(2, 0.37);
    let opts = ProductOptions::new(0.1, 0.01);
    match product_measure_check(&sys, 64, 6, &opts) {
        Ok(rep) => outcome(
            rep.slope >= 1.56 && rep.fibers_isomorphic,
            format!(
                "64 fibers, depth 6: slope {:.4} (expected {:.4}) over {} scales below window {:.3e}",
                rep.slope,
                rep.expected,
                rep.rows.len(),
                rep.window
            ),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

/// Target served on Alice turn k: the t with k ≡ 2^{t−1} (mod 2^t), or 0.
fn oracle_schedule(k: usize, targets: usize) -> usize {
    (1..=targets)
        .find(|&t| k % (1 << t) == 1 << (t - 1))
        .unwrap_or(0)
}

fn interleaving() -> Outcome {
    let sys = SystemSpec::linear_circle(2);
    let targets = [Point::on_circle(0.0), Point::on_circle(0.5), Point::on_circle(1.0 / 3.0)];
    let cfg = GameConfig::new(0.05, 0.9).with_stop_radius(1e-9);
    let mut master = ChaCha8Rng::seed_from_u64(25);
    let mut passed = 0;
    let mut schedules = 0;
    let mut horizon = 0;
    for i in 0..100 {
        let (mut alice, rects) = InterleavedStrategy::new(&sys, &targets, 0.05, 0.9, cfg.start_radius).unwrap();
        let s = master.next_u64();
        let mut bob: Box<dyn Strategy> = if i % 2 == 0 {
            Box::new(RandomBob::new(s))
        } else {
            Box::new(ChaserBob::seeded(i % 3, s))
        };
        let Ok(mut t) = run_game(&cfg, &sys, &rects[0], &mut alice, bob.as_mut()) else {
            continue;
        };
        t.extra_rectangles = rects[1..].to_vec();
        let rep = verify_targets(&t);
        let avoided = rects.iter().all(|r| {
            let h = oracle_horizon(sys.sigma1, r.width, t.final_radius);
            horizon = horizon.max(h);
            let mut p = t.outcome.x();
            let mut best = circle_dist(p, r.target.x());
            for _ in 0..h {
                p = (2.0 * p).rem_euclid(1.0);
                best = best.min(circle_dist(p, r.target.x()));
            }
            best >= r.width / 2.0 - t.final_radius
        });
        if rep.passed && avoided {
            passed += 1;
        }
        let alice_turns = t.moves.iter().filter(|m| m.player == Player::Alice).count();
        let sched = alice.schedule();
        if sched.len() == alice_turns && sched.iter().enumerate().all(|(i, &t)| t == oracle_schedule(i + 1, 3)) {
            schedules += 1;
        }
    }
    outcome(
        passed == 100 && schedules == 100,
        format!("100 games: {passed} avoid all three rectangles, {schedules} schedules match, max horizon {horizon}"),
    )
}

fn determinism() -> Outcome {
    let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &dirs {
        let out = d.path().to_str().unwrap().to_string();
        let args = ["schmidt", "tournament", "--system", "torus2", "--count", "20", "--bob", "both", "--seed", "99", "--out", &out];
        run(args, &mut Vec::new()).unwrap();
        let game = d.path().join("game.json");
        run(["schmidt", "play", "--seed", "5", "--system", "skew2", "--out", game.to_str().unwrap()], &mut Vec::new())
            .unwrap();
    }
    let mut files = Vec::new();
    let mut stack = vec![dirs[0].path().to_path_buf()];
    while let Some(p) = stack.pop() {
        for e in fs::read_dir(&p).unwrap() {
            let e = e.unwrap().path();
            if e.is_dir() {
                stack.push(e);
            } else {
                files.push(e);
            }
        }
    }
    let same = files.iter().all(|f| {
        let rel = f.strip_prefix(dirs[0].path()).unwrap();
        fs::read(f).unwrap() == fs::read(dirs[1].path().join(rel)).unwrap()
    });
    let replay = dirs[0].path().join("replayed.json");
    let game = dirs[0].path().join("game.json");
    run(
        ["schmidt", "play", "--replay", game.to_str().unwrap(), "--out", replay.to_str().unwrap()],
        &mut Vec::new(),
    )
    .unwrap();
    let replay_same = fs::read(&game).unwrap() == fs::read(&replay).unwrap();
    outcome(
        same && replay_same && files.len() > 40,
        format!("{} files identical across two runs: {same}; replay identical: {replay_same}", files.len()),
    )
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    results.push(("constants", constants()));
    let (soundness, wide, counting) = soundness_and_counting();
    results.push(("winning-strategy soundness", soundness));
    results.push(("counting assertions", counting));
    results.push(("avoidance property suite", avoidance_suite()));
    results.push(("bounded distortion", distortion()));
    results.push(("measure suite", measure_suite()));
    results.push(("box-count cross-check", box_count()));
    results.push(("product measure", product_measure()));
    results.push(("interleaving", interleaving()));
    results.push(("determinism", determinism()));
    let mut failed = 0;
    for (name, o) in &results {
        println!("[{}] {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.passed);
    }
    println!(
        "[{}] (supplementary) wide-rectangle games: {}",
        if wide.passed { "PASS" } else { "FAIL" },
        wide.detail
    );
    println!(
        "acceptance: {} of {} criteria passed in {:.1}s",
        results.len() - failed,
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 || !wide.passed {
        std::process::exit(1);
    }
}

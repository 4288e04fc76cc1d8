//! Tree-like families of balls, the rescaled measures they carry, and the
//! dimension bounds and Frostman checks built on them.
//!
//! Node centers are stored as offsets from the parent center. Radii at depth
//! eight shrink to around `1e-30`, far below the resolution of an absolute
//! coordinate in `[0, 1)`, so all geometry inside a tree is done with sums of
//! offsets. `approx_center` is kept for export and for strategy calls.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alice_strategy::{AliceStrategy, StrategyConstants};
use crate::dynamics::{Rectangle, SystemKind, SystemSpec};
use crate::error::MeasureError;
use crate::game_core::GameConfig;
use crate::metric_space::{ball_volume, intersection_volume, packing_offsets, Ball, Point};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub level: usize,
    pub parent: Option<usize>,
    /// Center minus parent center.
    pub offset: [f64; 2],
    pub radius: f64,
    pub approx_center: Point,
    pub children: Vec<usize>,
}

/// Which nodes get children.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Expansion {
    /// Every node at every level.
    Full,
    /// Every expanded node gets all its children, but only `per_node` of them
    /// (picked by a generator seeded from `seed`, the level and the parent
    /// index) are expanded in turn.
    Sampled { per_node: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeFamily {
    pub u: usize,
    pub nodes: Vec<TreeNode>,
    pub levels: Vec<Vec<usize>>,
    pub base_volume: f64,
}

fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

fn add(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] + b[0], a[1] + b[1]]
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

/// Indices of the children to expand below `parent`.
fn expansion_choice(exp: Expansion, level: usize, parent: usize, n_children: usize) -> Vec<usize> {
    match exp {
        Expansion::Full => (0..n_children).collect(),
        Expansion::Sampled { per_node, seed } => {
            let mix = seed
                ^ (level as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
                ^ (parent as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
            let mut rng = ChaCha8Rng::seed_from_u64(mix);
            let mut v = sample(&mut rng, n_children, per_node.min(n_children)).into_vec();
            v.sort_unstable();
            v
        }
    }
}

impl TreeFamily {
    fn with_root(root: &Ball) -> Self {
        Self {
            u: root.dim(),
            nodes: vec![TreeNode {
                level: 0,
                parent: None,
                offset: [0.0; 2],
                radius: root.radius,
                approx_center: root.center,
                children: Vec::new(),
            }],
            levels: vec![vec![0]],
            base_volume: root.volume(),
        }
    }

    fn push_child(&mut self, parent: usize, offset: [f64; 2], radius: f64) -> usize {
        let level = self.nodes[parent].level + 1;
        let center = self.nodes[parent].approx_center.shifted(&offset);
        let idx = self.nodes.len();
        self.nodes.push(TreeNode {
            level,
            parent: Some(parent),
            offset,
            radius,
            approx_center: center,
            children: Vec::new(),
        });
        self.nodes[parent].children.push(idx);
        if self.levels.len() <= level {
            self.levels.push(Vec::new());
        }
        self.levels[level].push(idx);
        idx
    }

    /// Self-similar family: every node has children at `offsets` (in units of
    /// its radius) with radius `ratio` times its own.
    pub fn self_similar(
        root: &Ball,
        offsets: &[[f64; 2]],
        ratio: f64,
        depth: usize,
        expansion: Expansion,
    ) -> Self {
        let mut t = Self::with_root(root);
        let mut frontier = vec![0];
        for level in 0..depth {
            let mut next = Vec::new();
            for &p in &frontier {
                let r = t.nodes[p].radius;
                let kids: Vec<usize> = offsets
                    .iter()
                    .map(|o| t.push_child(p, [o[0] * r, o[1] * r], r * ratio))
                    .collect();
                for i in expansion_choice(expansion, level, p, kids.len()) {
                    next.push(kids[i]);
                }
            }
            frontier = next;
        }
        t
    }

    /// Number of levels below the root.
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn is_expanded(&self, idx: usize) -> bool {
        !self.nodes[idx].children.is_empty()
    }

    pub fn node_volume(&self, idx: usize) -> f64 {
        ball_volume(self.u, self.nodes[idx].radius)
    }

    /// Root-to-node path.
    pub fn path(&self, idx: usize) -> Vec<usize> {
        let mut p = vec![idx];
        let mut cur = idx;
        while let Some(parent) = self.nodes[cur].parent {
            p.push(parent);
            cur = parent;
        }
        p.reverse();
        p
    }

    /// `d_l`: largest node diameter at each level.
    pub fn diameters(&self) -> Vec<f64> {
        self.levels
            .iter()
            .map(|lv| lv.iter().map(|&i| 2.0 * self.nodes[i].radius).fold(0.0, f64::max))
            .collect()
    }

    /// `Δ_l`: smallest covered fraction over expanded level-`l` nodes.
    pub fn stage_densities(&self) -> Vec<f64> {
        (0..self.depth())
            .map(|l| {
                self.levels[l]
                    .iter()
                    .filter(|&&i| self.is_expanded(i))
                    .map(|&i| {
                        let covered: f64 = self.nodes[i]
                            .children
                            .iter()
                            .map(|&c| self.node_volume(c))
                            .sum();
                        covered / self.node_volume(i)
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    /// Verify the strongly tree-like conditions on the constructed levels.
    pub fn check_conditions(&self) -> Result<(), MeasureError> {
        if !(self.base_volume > 0.0) {
            return Err(MeasureError::ZeroVolume(0));
        }
        for node in &self.nodes {
            for (a, &ci) in node.children.iter().enumerate() {
                let c = &self.nodes[ci];
                // nesting
                if norm(c.offset) > node.radius - c.radius {
                    return Err(MeasureError::Malformed(format!(
                        "level-{} node not inside its parent",
                        c.level
                    )));
                }
                // volume-null overlaps between siblings
                for &di in &node.children[a + 1..] {
                    let d = &self.nodes[di];
                    let gap = norm(sub(c.offset, d.offset));
                    if intersection_volume(self.u, gap, c.radius, d.radius) > 0.0 {
                        return Err(MeasureError::Malformed(format!(
                            "overlapping siblings at level {}",
                            c.level
                        )));
                    }
                }
            }
        }
        let d = self.diameters();
        if d.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(MeasureError::Malformed("diameters not decreasing".into()));
        }
        for (l, delta) in self.stage_densities().into_iter().enumerate() {
            if !(delta > 0.0) {
                return Err(MeasureError::Degenerate(l));
            }
        }
        Ok(())
    }

    /// Flat export rows.
    pub fn flat_rows(&self, m: &NodeMeasure) -> Vec<FlatRow> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| FlatRow {
                level: n.level,
                center: n.approx_center,
                radius: n.radius,
                mass: m.mass[i],
            })
            .collect()
    }

    /// Nested JSON export.
    pub fn to_nested_json(&self, m: &NodeMeasure) -> serde_json::Value {
        fn rec(t: &TreeFamily, m: &NodeMeasure, i: usize) -> serde_json::Value {
            let n = &t.nodes[i];
            serde_json::json!({
                "level": n.level,
                "c": n.approx_center,
                "r": n.radius,
                "offset": &n.offset[..t.u],
                "mass": m.mass[i],
                "children": n.children.iter().map(|&c| rec(t, m, c)).collect::<Vec<_>>(),
            })
        }
        rec(self, m, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatRow {
    pub level: usize,
    pub center: Point,
    pub radius: f64,
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeOptions {
    /// Center of Bob's opening ball on the playing leaf.
    pub start_center: Point,
    pub expansion: Expansion,
}

impl TreeOptions {
    pub fn new(u: usize) -> Self {
        Self {
            start_center: if u == 1 {
                Point::on_circle(0.5)
            } else {
                Point::on_torus(0.5, 0.5)
            },
            expansion: Expansion::Sampled {
                per_node: 2,
                seed: 0,
            },
        }
    }
}

/// Game tree of Alice's replies: every node is an Alice ball, its children are
/// her replies to the packed Bob options inside it.
pub fn build_game_tree(
    system: &SystemSpec,
    rect: &Rectangle,
    config: &GameConfig,
    constants: &StrategyConstants,
    depth: usize,
    opts: &TreeOptions,
) -> Result<TreeFamily, MeasureError> {
    let mut alice = AliceStrategy::new(system.clone(), *rect, constants.clone());
    let mut bob = Ball::new(opts.start_center, config.start_radius)?;
    let root = loop {
        let reply = alice.respond(&bob)?;
        if alice.is_active() {
            break reply;
        }
        bob = Ball::new(reply.center, reply.radius * config.beta)?;
    };
    let mut tree = TreeFamily::with_root(&root);
    let offsets = packing_offsets(system.u, config.beta);
    let mut frontier: Vec<(usize, AliceStrategy)> = vec![(0, alice)];
    for level in 0..depth {
        let mut next = Vec::new();
        for (p, strat) in frontier {
            let a = tree.nodes[p].radius;
            let center = tree.nodes[p].approx_center;
            let mut kids = Vec::with_capacity(offsets.len());
            for o in &offsets {
                let shift = [o[0] * a, o[1] * a];
                let bob = Ball {
                    center: center.shifted(&shift),
                    radius: a * config.beta,
                };
                let mut s = strat.clone();
                let reply = s.respond(&bob)?;
                let dodge = bob.center.displacement_to(&reply.center);
                let idx = tree.push_child(p, add(shift, dodge), reply.radius);
                kids.push((idx, s));
            }
            let chosen = expansion_choice(opts.expansion, level, p, kids.len());
            let mut kids: Vec<Option<(usize, AliceStrategy)>> = kids.into_iter().map(Some).collect();
            for i in chosen {
                next.push(kids[i].take().expect("chosen once"));
            }
        }
        frontier = next;
    }
    Ok(tree)
}

/// Node masses `μ^{(l)}(A)` for `A` at level `l`; since nodes never lose mass
/// to later refinements this is also `μ̄(A)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeMeasure {
    pub mass: Vec<f64>,
}

/// Start from volume on the root and hand each node's mass to its children in
/// proportion to their volumes.
pub fn rescale_measures(t: &TreeFamily) -> Result<NodeMeasure, MeasureError> {
    let mut mass = vec![0.0; t.nodes.len()];
    mass[0] = t.base_volume;
    for level in &t.levels {
        for &i in level {
            let kids = &t.nodes[i].children;
            if kids.is_empty() {
                continue;
            }
            let total: f64 = kids.iter().map(|&c| t.node_volume(c)).sum();
            if !(total > 0.0) {
                return Err(MeasureError::ZeroVolume(t.nodes[i].level + 1));
            }
            for &c in kids {
                mass[c] = mass[i] * (t.node_volume(c) / total);
            }
        }
    }
    Ok(NodeMeasure { mass })
}

/// Compensated sum.
fn neumaier(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = s + v;
        if s.abs() >= v.abs() {
            comp += (s - t) + v;
        } else {
            comp += (v - t) + s;
        }
        s = t;
    }
    s + comp
}

impl NodeMeasure {
    /// Total mass per level (meaningful when every node is expanded).
    pub fn level_totals(&self, t: &TreeFamily) -> Vec<f64> {
        t.levels
            .iter()
            .map(|lv| neumaier(lv.iter().map(|&i| self.mass[i])))
            .collect()
    }

    /// Largest relative gap between an expanded node's mass and the sum of
    /// its children's masses.
    pub fn max_refinement_error(&self, t: &TreeFamily) -> f64 {
        t.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| !n.children.is_empty())
            .map(|(i, n)| {
                let s = neumaier(n.children.iter().map(|&c| self.mass[c]));
                (s - self.mass[i]).abs() / self.mass[i]
            })
            .fold(0.0, f64::max)
    }

    /// `μ̄(B(z, r))` for `z` the center of node `leaf`.
    ///
    /// Mass inside unexpanded nodes is spread uniformly over the node, which
    /// is exact for the finite-depth measure at radii of at least `d_L`.
    pub fn ball_mass(&self, t: &TreeFamily, leaf: usize, r: f64) -> f64 {
        // Displacements from z to the path nodes are accumulated upward from
        // the leaf so that they stay accurate at the leaf's scale.
        let path = t.path(leaf);
        let mut disp = vec![[0.0; 2]; path.len()];
        for l in (0..path.len() - 1).rev() {
            disp[l] = sub(disp[l + 1], t.nodes[path[l + 1]].offset);
        }
        self.mass_within(t, &path, &disp, 0, disp[0], r)
    }

    fn mass_within(
        &self,
        t: &TreeFamily,
        path: &[usize],
        path_disp: &[[f64; 2]],
        idx: usize,
        disp: [f64; 2],
        r: f64,
    ) -> f64 {
        let node = &t.nodes[idx];
        let d = norm(disp);
        if d >= r + node.radius {
            return 0.0;
        }
        if d + node.radius <= r {
            return self.mass[idx];
        }
        if node.children.is_empty() {
            let frac = intersection_volume(t.u, d, r, node.radius) / t.node_volume(idx);
            return self.mass[idx] * frac;
        }
        let next_on_path = path.get(node.level + 1).copied();
        let on_path = path.get(node.level) == Some(&idx);
        node.children
            .iter()
            .map(|&c| {
                let dc = if on_path && Some(c) == next_on_path {
                    path_disp[node.level + 1]
                } else {
                    add(disp, t.nodes[c].offset)
                };
                self.mass_within(t, path, path_disp, c, dc, r)
            })
            .sum()
    }
}

/// `k − log(c2/(c·c1·α^k))/log(1/(αβ))` with equal power-law constants.
pub fn closed_form_bound(k: usize, alpha: f64, beta: f64, packing_constant: f64) -> f64 {
    let k_f = k as f64;
    k_f - (1.0 / (packing_constant * alpha.powi(k as i32))).ln() / (1.0 / (alpha * beta)).ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionBound {
    /// `k − Σ_{i<L} log(1/Δ_i) / log(1/d_{L−1})` from the measured tree.
    pub measured: f64,
    pub closed_form: f64,
    pub deltas: Vec<f64>,
    pub diameters: Vec<f64>,
    /// The same quotient truncated at each level `l = 0..L−1`.
    pub partial: Vec<f64>,
}

pub fn dimension_lower_bound(
    t: &TreeFamily,
    k: usize,
    alpha: f64,
    beta: f64,
    packing_constant: f64,
) -> Result<DimensionBound, MeasureError> {
    let depth = t.depth();
    if depth < 2 {
        return Err(MeasureError::TooShallow { have: depth, need: 2 });
    }
    let deltas = t.stage_densities();
    if let Some(l) = deltas.iter().position(|d| !(*d > 0.0)) {
        return Err(MeasureError::Degenerate(l));
    }
    let diameters = t.diameters();
    let mut acc = 0.0;
    let mut partial = Vec::with_capacity(depth);
    for l in 0..depth {
        acc += (1.0 / deltas[l]).ln();
        partial.push(k as f64 - acc / (1.0 / diameters[l]).ln());
    }
    Ok(DimensionBound {
        measured: *partial.last().expect("depth >= 2"),
        closed_form: closed_form_bound(k, alpha, beta, packing_constant),
        deltas,
        diameters,
        partial,
    })
}

/// Least-squares slope and intercept of `y` on `x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub r: f64,
    /// Geometric mean of the sampled ball masses.
    pub mass: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrostmanReport {
    pub exponent: f64,
    pub constant: f64,
    pub samples: usize,
    pub max_ratio: f64,
    pub slope: f64,
    pub passed: bool,
    pub rows: Vec<ScaleRow>,
}

fn sample_leaves(t: &TreeFamily, samples: usize, seed: u64) -> Vec<usize> {
    let leaves = &t.levels[t.depth()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample(&mut rng, leaves.len(), samples.min(leaves.len()))
        .into_iter()
        .map(|i| leaves[i])
        .collect()
}

fn scale_rows(radii: &[f64], log_mass: &[Vec<f64>]) -> (f64, Vec<ScaleRow>) {
    let x: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let y: Vec<f64> = log_mass
        .iter()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .collect();
    let (slope, icpt) = fit_line(&x, &y);
    let rows = radii
        .iter()
        .zip(x.iter().zip(&y))
        .map(|(&r, (&lx, &ly))| ScaleRow {
            r,
            mass: ly.exp(),
            residual: ly - (slope * lx + icpt),
        })
        .collect();
    (slope, rows)
}

/// Check `μ̄(B(z, r)) ≤ C·r^h` at sampled leaf centers `z` and radii `r = d_l`.
pub fn frostman_check(
    t: &TreeFamily,
    m: &NodeMeasure,
    exponent: f64,
    constant: f64,
    samples: usize,
    seed: u64,
) -> Result<FrostmanReport, MeasureError> {
    if t.depth() < 4 {
        return Err(MeasureError::TooShallow { have: t.depth(), need: 4 });
    }
    let radii = t.diameters();
    let zs = sample_leaves(t, samples, seed);
    let mut max_ratio: f64 = 0.0;
    let mut logs = vec![Vec::with_capacity(zs.len()); radii.len()];
    for &z in &zs {
        for (i, &r) in radii.iter().enumerate() {
            let mass = m.ball_mass(t, z, r);
            max_ratio = max_ratio.max(mass / r.powf(exponent));
            logs[i].push(mass.ln());
        }
    }
    // the root scale saturates and is left out of the fit
    let (slope, rows) = scale_rows(&radii[1..], &logs[1..]);
    Ok(FrostmanReport {
        exponent,
        constant,
        samples: zs.len(),
        max_ratio,
        slope,
        passed: max_ratio <= constant,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductOptions {
    pub alpha: f64,
    pub beta: f64,
    pub start_radius: f64,
    /// Avoided point on the 2-torus.
    pub target: Point,
    pub tree: TreeOptions,
    pub samples: usize,
    pub seed: u64,
}

impl ProductOptions {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self {
            alpha,
            beta,
            start_radius: 0.1,
            target: Point::on_torus(0.0, 0.5),
            tree: TreeOptions::new(1),
            samples: 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductReport {
    pub fibers: usize,
    pub depth: usize,
    /// Width `δ` of the transversal window.
    pub window: f64,
    pub fibers_isomorphic: bool,
    pub slope: f64,
    /// `n − ε` with `n = 2` and `ε` from the fiber closed form.
    pub expected: f64,
    pub rows: Vec<ScaleRow>,
}

/// Discretized product measure on the skew product: one game-tree measure
/// per fiber, integrated against uniform transversal cells.
pub fn product_measure_check(
    system: &SystemSpec,
    fibers: usize,
    depth: usize,
    opts: &ProductOptions,
) -> Result<ProductReport, MeasureError> {
    if !matches!(system.kind(), SystemKind::SkewProduct { .. }) {
        return Err(MeasureError::NotSkewProduct);
    }
    if fibers < 8 {
        return Err(MeasureError::TooFewFibers(fibers));
    }
    if depth < 2 {
        return Err(MeasureError::TooShallow { have: depth, need: 2 });
    }
    let delta = 2.0 * opts.start_radius;
    let cell = delta / fibers as f64;
    let theta0 = system.fiber().expect("skew product");
    let config = GameConfig::new(opts.alpha, opts.beta).with_start_radius(opts.start_radius);
    let constants = crate::alice_strategy::derive_constants(system, opts.alpha, opts.beta, opts.start_radius)
        .map_err(|e| MeasureError::Strategy(e.into()))?;
    let rect = Rectangle::new(opts.target, constants.c)
        .map_err(|e| MeasureError::Strategy(e.into()))?;
    let mut trees = Vec::with_capacity(fibers);
    for f in 0..fibers {
        let theta = theta0 - delta / 2.0 + (f as f64 + 0.5) * cell;
        let sys_f = system.with_fiber(theta);
        let t = build_game_tree(&sys_f, &rect, &config, &constants, depth, &opts.tree)?;
        let m = rescale_measures(&t)?;
        trees.push((t, m));
    }
    let reference = &trees[0].0;
    let isomorphic = trees.iter().all(|(t, _)| {
        t.nodes.len() == reference.nodes.len()
            && t.nodes
                .iter()
                .zip(&reference.nodes)
                .all(|(a, b)| a.children == b.children && a.radius == b.radius && a.offset == b.offset)
    });
    if !isomorphic {
        return Err(MeasureError::Malformed(
            "fiber trees differ; the discretized integral needs a common index".into(),
        ));
    }

    let home = fibers / 2;
    let radii: Vec<f64> = reference
        .diameters()
        .into_iter()
        .filter(|&r| r < delta / 2.0)
        .collect();
    if radii.len() < 2 {
        return Err(MeasureError::TooShallow { have: depth, need: 2 });
    }
    let zs = sample_leaves(reference, opts.samples, opts.seed);
    let mut logs = vec![Vec::with_capacity(zs.len()); radii.len()];
    for &z in &zs {
        for (i, &r) in radii.iter().enumerate() {
            let mut acc = 0.0;
            for (f, (t, m)) in trees.iter().enumerate() {
                // cell bounds relative to theta_z, so tiny r is not lost
                let lo = (f as f64 - home as f64 - 0.5) * cell;
                let overlap = ((lo + cell).min(r) - lo.max(-r)).max(0.0);
                if overlap > 0.0 {
                    acc += overlap / cell * m.ball_mass(t, z, r);
                }
            }
            logs[i].push((acc / fibers as f64).ln());
        }
    }
    let (slope, rows) = scale_rows(&radii, &logs);
    Ok(ProductReport {
        fibers,
        depth,
        window: delta,
        fibers_isomorphic: isomorphic,
        slope,
        expected: 1.0 + closed_form_bound(1, opts.alpha, opts.beta, 1.0),
        rows,
    })
}

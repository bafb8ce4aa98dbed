//! Seeding pipeline: pseudo-obstacles, a safe-zone-biased visibility
//! roadmap, box decomposition of the free space along each path and a
//! knot-point NMPC producing ancillary control sequences.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{substream, Rng};
use crate::sim::{
    step, Blocking, Cell, CollisionMap, Control, ControlBounds, ControlSequence, Environment, OccupancyGrid, SafeZone,
    State,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub waypoints: Vec<[f64; 2]>,
}

impl Path {
    pub fn new(waypoints: Vec<[f64; 2]>) -> Self {
        Self { waypoints }
    }

    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| dist(w[0], w[1])).sum()
    }

    /// Point at arc length `s`, clamped to the path ends.
    pub fn point_at(&self, s: f64) -> [f64; 2] {
        let mut left = s.max(0.0);
        for w in self.waypoints.windows(2) {
            let l = dist(w[0], w[1]);
            if left <= l {
                let t = if l > 0.0 { left / l } else { 0.0 };
                return lerp(w[0], w[1], t);
            }
            left -= l;
        }
        *self.waypoints.last().expect("path has at least one waypoint")
    }

    /// The sub-path covering arc lengths `[0, s]`.
    pub fn prefix(&self, s: f64) -> Path {
        let mut out = vec![self.waypoints[0]];
        let mut left = s.max(0.0);
        for w in self.waypoints.windows(2) {
            let l = dist(w[0], w[1]);
            if left < l {
                if left > 0.0 {
                    out.push(lerp(w[0], w[1], left / l));
                }
                return Path::new(out);
            }
            out.push(w[1]);
            left -= l;
        }
        Path::new(out)
    }

    /// `n >= 2` points equally spaced by arc length, ends included.
    pub fn resample(&self, n: usize) -> Vec<[f64; 2]> {
        let len = self.length();
        (0..n).map(|i| self.point_at(len * i as f64 / (n - 1) as f64)).collect()
    }
}

#[inline]
fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[inline]
fn lerp(a: [f64; 2], b: [f64; 2], t: f64) -> [f64; 2] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]
}

/// Half-space intersection `{p : n_j . p <= b_j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    pub normals: Vec<[f64; 2]>,
    pub offsets: Vec<f64>,
}

impl Polytope {
    pub fn from_box(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { normals: vec![[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]], offsets: vec![x1, -x0, y1, -y0] }
    }

    /// Largest constraint value `n_j . p - b_j`; non-positive inside.
    pub fn violation(&self, p: [f64; 2]) -> f64 {
        self.normals
            .iter()
            .zip(&self.offsets)
            .map(|(n, b)| n[0] * p[0] + n[1] * p[1] - b)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, p: [f64; 2], tol: f64) -> bool {
        self.violation(p) <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmpcParams {
    pub max_iters: usize,
    pub max_outer: usize,
    /// Constraint tolerance used by the acceptance re-check.
    pub tol_con: f64,
    /// Extra interior margin the penalty aims for.
    pub margin: f64,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    /// Knot speed as a fraction of `v_max`.
    pub speed_ratio: f64,
}

impl Default for NmpcParams {
    fn default() -> Self {
        Self {
            max_iters: 150,
            max_outer: 6,
            tol_con: 1e-6,
            margin: 1e-3,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            speed_ratio: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendParams {
    /// Fraction of roadmap samples drawn inside safe zones.
    pub p_safe: f64,
    /// Maximum number of returned paths (`B`).
    pub max_paths: usize,
    /// Knot count (`M`).
    pub knots: usize,
    /// Contingency reach radius, `v_max * T_s * dt`.
    pub r_max: f64,
    pub prm_samples: usize,
    pub connect_radius: f64,
    /// Points per path in the distinctness check.
    pub equivalence_points: usize,
    /// Box growth limit per side, meters.
    pub max_box_extent: f64,
    pub nmpc: NmpcParams,
}

impl Default for FrontendParams {
    fn default() -> Self {
        Self {
            p_safe: 0.3,
            max_paths: 3,
            knots: 6,
            r_max: 1.5,
            prm_samples: 120,
            connect_radius: 2.5,
            equivalence_points: 16,
            max_box_extent: 1.5,
            nmpc: NmpcParams::default(),
        }
    }
}

impl FrontendParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_safe) {
            return Err(invalid("p_safe must lie in [0, 1]"));
        }
        if self.knots < 2 || !(self.r_max > 0.0) || self.equivalence_points < 2 {
            return Err(invalid("knots >= 2, r_max > 0 and equivalence_points >= 2 required"));
        }
        if !(self.connect_radius > 0.0) || !(self.max_box_extent > 0.0) || !(self.nmpc.tol_con > 0.0) {
            return Err(invalid("connect_radius, max_box_extent and tol_con must be positive"));
        }
        Ok(())
    }
}

/// Marks every cell whose center is farther than `r_max` from all zone
/// centers as occupied. Other cells keep their status.
pub fn add_pseudo_obstacles(grid: &OccupancyGrid, zones: &[SafeZone], r_max: f64) -> OccupancyGrid {
    let mut out = grid.clone();
    let r2 = r_max * r_max;
    for iy in 0..grid.height() {
        for ix in 0..grid.width() {
            let c = grid.cell_center(ix, iy);
            let near = zones.iter().any(|z| (c[0] - z.center[0]).powi(2) + (c[1] - z.center[1]).powi(2) <= r2);
            if !near {
                out.set(ix, iy, Cell::Occupied);
            }
        }
    }
    out
}

/// Arc-length point `r_max` along the path, or its last waypoint.
pub fn truncate_path(path: &Path, r_max: f64) -> [f64; 2] {
    path.point_at(r_max)
}

fn segment_free(map: &CollisionMap, a: [f64; 2], b: [f64; 2]) -> bool {
    let step = map.grid().resolution() * 0.5;
    let n = (dist(a, b) / step).ceil().max(1.0) as usize;
    (0..=n).all(|i| {
        let p = lerp(a, b, i as f64 / n as f64);
        !map.collides_at(p[0], p[1])
    })
}

/// Two paths are equivalent when their arc-length-matched sample points are
/// pairwise visible.
pub fn paths_equivalent(a: &Path, b: &Path, sight: &CollisionMap, points: usize) -> bool {
    let pa = a.resample(points);
    let pb = b.resample(points);
    pa.iter().zip(&pb).all(|(p, q)| segment_free(sight, *p, *q))
}

fn shortcut(nodes: &[[f64; 2]], map: &CollisionMap) -> Path {
    let mut out = vec![nodes[0]];
    let mut i = 0;
    while i + 1 < nodes.len() {
        let mut j = nodes.len() - 1;
        while j > i + 1 && !segment_free(map, nodes[i], nodes[j]) {
            j -= 1;
        }
        out.push(nodes[j]);
        i = j;
    }
    Path::new(out)
}

#[derive(PartialEq)]
struct Frontier(f64, usize);

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(adj: &[Vec<(usize, f64)>], penalty: &[f64], from: usize) -> (Vec<f64>, Vec<usize>) {
    let n = adj.len();
    let mut d = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    d[from] = 0.0;
    heap.push(Frontier(0.0, from));
    while let Some(Frontier(du, u)) = heap.pop() {
        if du > d[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = du + w * (1.0 + penalty[u] + penalty[v]);
            if nd < d[v] {
                d[v] = nd;
                prev[v] = u;
                heap.push(Frontier(nd, v));
            }
        }
    }
    (d, prev)
}

fn sample_point(grid: &OccupancyGrid, zones: &[SafeZone], p_safe: f64, rng: &mut Rng) -> [f64; 2] {
    if !zones.is_empty() && rng.gen::<f64>() < p_safe {
        let z = &zones[rng.gen_range(0..zones.len())];
        let r = z.radius * rng.gen::<f64>().sqrt();
        let a = rng.gen_range(0.0..std::f64::consts::TAU);
        [z.center[0] + r * a.cos(), z.center[1] + r * a.sin()]
    } else {
        let [x0, y0, x1, y1] = grid.bounds();
        [rng.gen_range(x0..x1), rng.gen_range(y0..y1)]
    }
}

/// Visibility roadmap over the biased grid returning up to `max_paths`
/// mutually distinct, shortcut paths from `start` toward `goal`. When the goal
/// is blocked or unreachable the reachable node nearest to it is targeted;
/// an empty list means no node gets closer to the goal than the start.
pub fn topo_prm(
    grid_biased: &OccupancyGrid,
    start: [f64; 2],
    goal: [f64; 2],
    zones: &[SafeZone],
    params: &FrontendParams,
    robot_radius: f64,
    rng: &mut Rng,
) -> Vec<Path> {
    let clear = CollisionMap::new(grid_biased, robot_radius, Blocking::Occupied);
    if clear.collides_at(start[0], start[1]) {
        return Vec::new();
    }
    let sight = CollisionMap::new(grid_biased, 0.0, Blocking::Occupied);

    let mut nodes = vec![start];
    let goal_free = !clear.collides_at(goal[0], goal[1]);
    if goal_free {
        nodes.push(goal);
    }
    let mut attempts = 0;
    while nodes.len() < params.prm_samples + 2 && attempts < params.prm_samples * 20 {
        attempts += 1;
        let p = sample_point(grid_biased, zones, params.p_safe, rng);
        if !clear.collides_at(p[0], p[1]) {
            nodes.push(p);
        }
    }

    let n = nodes.len();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            let d = dist(nodes[i], nodes[j]);
            if d <= params.connect_radius && segment_free(&clear, nodes[i], nodes[j]) {
                adj[i].push((j, d));
                adj[j].push((i, d));
            }
        }
    }

    let mut penalty = vec![0.0; n];
    let (d0, _) = dijkstra(&adj, &penalty, 0);
    let target = if goal_free && d0[1].is_finite() {
        1
    } else {
        match (0..n).filter(|&i| d0[i].is_finite()).min_by(|&a, &b| {
            dist(nodes[a], goal).total_cmp(&dist(nodes[b], goal)).then(a.cmp(&b))
        }) {
            Some(t) => t,
            None => return Vec::new(),
        }
    };
    // no progress toward the goal is possible from here
    if target == 0 || dist(nodes[target], goal) > dist(start, goal) - grid_biased.resolution() {
        return Vec::new();
    }

    let mut paths: Vec<Path> = Vec::new();
    let penalty_radius = params.connect_radius * 0.5;
    for _ in 0..params.max_paths * 4 {
        if paths.len() >= params.max_paths {
            break;
        }
        let (d, prev) = dijkstra(&adj, &penalty, 0);
        if !d[target].is_finite() {
            break;
        }
        let mut chain = vec![target];
        while *chain.last().unwrap() != 0 {
            chain.push(prev[*chain.last().unwrap()]);
        }
        chain.reverse();
        let pts: Vec<[f64; 2]> = chain.iter().map(|&i| nodes[i]).collect();
        let path = shortcut(&pts, &clear);

        // push later searches away from this corridor
        let probe = path.resample(params.equivalence_points.max(8));
        for (i, p) in nodes.iter().enumerate().skip(1) {
            if i != target && probe.iter().any(|q| dist(*p, *q) < penalty_radius) {
                penalty[i] += 2.0;
            }
        }
        if !paths.iter().any(|q| paths_equivalent(q, &path, &sight, params.equivalence_points)) {
            paths.push(path);
        }
    }
    paths
}

/// Knots at arc lengths `L i / M`, `i = 1..=M`, and one shrunk box per
/// segment between consecutive knots (the first segment starts at `S`).
/// Boxes grow over `Free` cells of `grid` only.
pub fn convex_decompose(
    grid: &OccupancyGrid,
    path: &Path,
    m: usize,
    robot_radius: f64,
    max_extent: f64,
) -> Result<(Vec<Polytope>, Vec<[f64; 2]>)> {
    if m < 1 || path.waypoints.is_empty() {
        return Err(invalid("decomposition needs a nonempty path and at least one knot"));
    }
    let len = path.length();
    let mut prev = path.waypoints[0];
    let mut polys = Vec::with_capacity(m);
    let mut knots = Vec::with_capacity(m);
    for i in 1..=m {
        let knot = path.point_at(len * i as f64 / m as f64);
        let poly = grow_box(grid, prev, knot, robot_radius, max_extent)
            .map_err(|reason| Error::Decomposition { knot: i, reason })?;
        polys.push(poly);
        knots.push(knot);
        prev = knot;
    }
    Ok((polys, knots))
}

fn grow_box(
    grid: &OccupancyGrid,
    a: [f64; 2],
    b: [f64; 2],
    robot_radius: f64,
    max_extent: f64,
) -> std::result::Result<Polytope, String> {
    let (ca, cb) = match (grid.cell_of(a[0], a[1]), grid.cell_of(b[0], b[1])) {
        (Some(ca), Some(cb)) => (ca, cb),
        _ => return Err("segment leaves the map".into()),
    };
    let free = |ix0: usize, ix1: usize, iy0: usize, iy1: usize| {
        (iy0..=iy1).all(|iy| (ix0..=ix1).all(|ix| grid.get(ix, iy) == Cell::Free))
    };
    let (mut ix0, mut ix1) = (ca.0.min(cb.0), ca.0.max(cb.0));
    let (mut iy0, mut iy1) = (ca.1.min(cb.1), ca.1.max(cb.1));
    if !free(ix0, ix1, iy0, iy1) {
        return Err("seed box covers a non-free cell".into());
    }
    let cap = if max_extent.is_finite() { (max_extent / grid.resolution()).ceil() as usize } else { usize::MAX };
    let (sx0, sx1, sy0, sy1) = (ix0, ix1, iy0, iy1);
    loop {
        let mut grew = false;
        if ix0 > 0 && sx0 - ix0 < cap && free(ix0 - 1, ix0 - 1, iy0, iy1) {
            ix0 -= 1;
            grew = true;
        }
        if ix1 + 1 < grid.width() && ix1 - sx1 < cap && free(ix1 + 1, ix1 + 1, iy0, iy1) {
            ix1 += 1;
            grew = true;
        }
        if iy0 > 0 && sy0 - iy0 < cap && free(ix0, ix1, iy0 - 1, iy0 - 1) {
            iy0 -= 1;
            grew = true;
        }
        if iy1 + 1 < grid.height() && iy1 - sy1 < cap && free(ix0, ix1, iy1 + 1, iy1 + 1) {
            iy1 += 1;
            grew = true;
        }
        if !grew {
            break;
        }
    }
    let res = grid.resolution();
    let o = grid.origin();
    let poly = Polytope::from_box(
        o[0] + ix0 as f64 * res + robot_radius,
        o[1] + iy0 as f64 * res + robot_radius,
        o[0] + (ix1 + 1) as f64 * res - robot_radius,
        o[1] + (iy1 + 1) as f64 * res - robot_radius,
    );
    if poly.contains(a, 0.0) && poly.contains(b, 0.0) {
        Ok(poly)
    } else {
        Err("segment closer than robot_radius to a non-free cell".into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmpcSolution {
    /// One control per knot interval.
    pub controls: ControlSequence,
    pub dt: f64,
    /// Sum of knot distances to the goal.
    pub objective: f64,
    pub states: Vec<State>,
}

/// Knot timing so that `m` steps cover `arc` at `ratio * v_max`.
pub fn knot_dt(arc: f64, m: usize, v_max: f64, ratio: f64) -> f64 {
    arc / (m as f64 * ratio * v_max)
}

fn shoot(x0: &State, u: &[Control], dt: f64) -> Vec<State> {
    let mut xs = Vec::with_capacity(u.len() + 1);
    xs.push(*x0);
    for c in u {
        let s = step(xs.last().unwrap(), *c, dt);
        xs.push(s);
    }
    xs
}

pub fn nmpc_objective(states: &[State], goal: [f64; 2]) -> f64 {
    states.iter().skip(1).map(|s| dist(s.position(), goal)).sum()
}

/// Pure-pursuit seed through the knots.
fn pursuit(x0: &State, knots: &[[f64; 2]], bounds: &ControlBounds, dt: f64) -> Vec<Control> {
    let mut s = *x0;
    knots
        .iter()
        .map(|k| {
            let d = dist(s.position(), *k);
            let u = if d < 1e-9 {
                Control::ZERO
            } else {
                let heading = (k[1] - s.y).atan2(k[0] - s.x);
                let turn = crate::sim::wrap_angle(heading - s.theta);
                bounds.clamp(Control::new(d / dt * turn.cos().max(0.0), turn / dt))
            };
            s = step(&s, u, dt);
            u
        })
        .collect()
}

struct Merit<'a> {
    x0: &'a State,
    polys: &'a [Polytope],
    goal: [f64; 2],
    dt: f64,
    rho: f64,
    margin: f64,
}

const SMOOTH_EPS: f64 = 1e-4;

impl Merit<'_> {
    fn value(&self, u: &[Control]) -> f64 {
        let xs = shoot(self.x0, u, self.dt);
        let mut f = 0.0;
        for (s, poly) in xs.iter().skip(1).zip(self.polys) {
            let p = s.position();
            f += ((p[0] - self.goal[0]).powi(2) + (p[1] - self.goal[1]).powi(2) + SMOOTH_EPS * SMOOTH_EPS).sqrt();
            for (n, b) in poly.normals.iter().zip(&poly.offsets) {
                let g = n[0] * p[0] + n[1] * p[1] - b + self.margin;
                if g > 0.0 {
                    f += self.rho * g * g;
                }
            }
        }
        f
    }

    fn gradient(&self, u: &[Control]) -> Vec<[f64; 2]> {
        let xs = shoot(self.x0, u, self.dt);
        let m = u.len();
        let mut grad = vec![[0.0; 2]; m];
        let mut lam = [0.0f64; 3];
        for i in (1..=m).rev() {
            let p = xs[i].position();
            let e = [p[0] - self.goal[0], p[1] - self.goal[1]];
            let r = (e[0] * e[0] + e[1] * e[1] + SMOOTH_EPS * SMOOTH_EPS).sqrt();
            lam[0] += e[0] / r;
            lam[1] += e[1] / r;
            let poly = &self.polys[i - 1];
            for (n, b) in poly.normals.iter().zip(&poly.offsets) {
                let g = n[0] * p[0] + n[1] * p[1] - b + self.margin;
                if g > 0.0 {
                    lam[0] += 2.0 * self.rho * g * n[0];
                    lam[1] += 2.0 * self.rho * g * n[1];
                }
            }
            let th = xs[i - 1].theta;
            let (sn, cs) = th.sin_cos();
            let v = u[i - 1].v;
            grad[i - 1] = [(lam[0] * cs + lam[1] * sn) * self.dt, lam[2] * self.dt];
            lam[2] += self.dt * v * (-lam[0] * sn + lam[1] * cs);
        }
        grad
    }
}

/// Single-shooting NMPC over `M = polytopes.len()` knot steps: minimizes the
/// summed goal distance subject to knot `i` lying in polytope `i` and the
/// control bounds. Penalty weights escalate until the re-check passes at
/// `tol_con`; otherwise the solve fails.
pub fn nmpc_solve(
    x_start: &State,
    knots: &[[f64; 2]],
    polytopes: &[Polytope],
    goal: [f64; 2],
    bounds: &ControlBounds,
    dt: f64,
    params: &NmpcParams,
) -> Result<NmpcSolution> {
    if knots.len() != polytopes.len() || knots.is_empty() {
        return Err(Error::Nmpc("knots and polytopes must pair up".into()));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Nmpc(format!("invalid knot step {dt}")));
    }
    let mut u = pursuit(x_start, knots, bounds, dt);
    let mut rho = params.initial_penalty;
    for _ in 0..params.max_outer {
        let merit = Merit { x0: x_start, polys: polytopes, goal, dt, rho, margin: params.margin };
        let mut f = merit.value(&u);
        let mut alpha = 1.0;
        for _ in 0..params.max_iters {
            let g = merit.gradient(&u);
            let mut accepted = false;
            let mut trial_alpha = alpha;
            for _ in 0..40 {
                let cand: Vec<Control> = u
                    .iter()
                    .zip(&g)
                    .map(|(c, gi)| bounds.clamp(Control::new(c.v - trial_alpha * gi[0], c.omega - trial_alpha * gi[1])))
                    .collect();
                let decrease: f64 = u
                    .iter()
                    .zip(&cand)
                    .zip(&g)
                    .map(|((a, b), gi)| gi[0] * (a.v - b.v) + gi[1] * (a.omega - b.omega))
                    .sum();
                let fc = merit.value(&cand);
                if fc <= f - 1e-4 * decrease && decrease > 0.0 {
                    u = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
                trial_alpha *= 0.5;
            }
            if !accepted {
                break;
            }
            alpha = (trial_alpha * 2.0).min(1e3);
        }
        let xs = shoot(x_start, &u, dt);
        let ok = xs.iter().skip(1).zip(polytopes).all(|(s, p)| p.contains(s.position(), params.tol_con));
        if ok {
            let controls = ControlSequence::new(u);
            debug_assert!(controls.is_within(bounds));
            return Ok(NmpcSolution { objective: nmpc_objective(&xs, goal), controls, dt, states: xs });
        }
        rho *= params.penalty_growth;
    }
    Err(Error::Nmpc("constraints not met within the iteration cap".into()))
}

/// Resamples a knot-step sequence onto the planner step `dt`, zero-padded to
/// `horizon`.
pub fn to_horizon(sol: &NmpcSolution, horizon: usize, dt: f64) -> ControlSequence {
    let m = sol.controls.horizon();
    let controls = (0..horizon)
        .map(|t| {
            let i = ((t as f64 * dt) / sol.dt + 1e-9).floor() as usize;
            if i < m {
                sol.controls.controls()[i]
            } else {
                Control::ZERO
            }
        })
        .collect();
    ControlSequence::new(controls)
}

/// Full seeding pass from state `x`: pseudo-obstacles, roadmap, then
/// decomposition and NMPC per path. Paths that fail any stage are dropped.
pub fn ancillary_sequences(
    env: &Environment,
    x: &State,
    params: &FrontendParams,
    bounds: &ControlBounds,
    horizon: usize,
    seed: u64,
) -> Vec<ControlSequence> {
    let biased = add_pseudo_obstacles(&env.known, &env.safe_zones, params.r_max);
    let mut rng = substream(seed, &[0]);
    let paths = topo_prm(&biased, x.position(), env.goal, &env.safe_zones, params, env.robot_radius, &mut rng);
    paths
        .par_iter()
        .filter_map(|path| {
            let sub = path.prefix(params.r_max);
            let arc = sub.length();
            if arc < 1e-6 {
                return None;
            }
            let (polys, knots) =
                convex_decompose(&env.known, &sub, params.knots, env.robot_radius, params.max_box_extent).ok()?;
            let dt_k = knot_dt(arc, params.knots, env.v_max, params.nmpc.speed_ratio);
            let sol = nmpc_solve(x, &knots, &polys, env.goal, bounds, dt_k, &params.nmpc).ok()?;
            Some(to_horizon(&sol, horizon, env.dt))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn open(w: usize, h: usize) -> OccupancyGrid {
        OccupancyGrid::new(w, h, 0.1, [0.0, 0.0], Cell::Free)
    }

    #[test]
    fn pseudo_obstacles_trivial_cases() {
        let mut g = open(30, 20);
        g.set(3, 3, Cell::Occupied);
        g.set(4, 4, Cell::Unknown);
        let zones = [SafeZone::new(1.0, 1.0, 0.2)];
        assert_eq!(add_pseudo_obstacles(&g, &zones, 100.0), g);
        let z0 = add_pseudo_obstacles(&g, &zones, 0.0);
        assert!(z0.cells().iter().all(|c| *c == Cell::Occupied));
        let on_center = [SafeZone::new(1.05, 1.05, 0.2)];
        let z1 = add_pseudo_obstacles(&g, &on_center, 0.0);
        assert_eq!(z1.cells().iter().filter(|c| **c != Cell::Occupied).count(), 1);
        assert_eq!(z1.get(10, 10), Cell::Free);
    }

    #[test]
    fn pseudo_obstacles_match_scan() {
        let mut rng = seeded(3);
        for _ in 0..20 {
            let mut g = open(rng.gen_range(5..25), rng.gen_range(5..25));
            for c in 0..g.width() * g.height() {
                let r: f64 = rng.gen();
                let (ix, iy) = (c % g.width(), c / g.width());
                g.set(ix, iy, if r < 0.2 { Cell::Occupied } else if r < 0.4 { Cell::Unknown } else { Cell::Free });
            }
            let zones: Vec<SafeZone> =
                (0..rng.gen_range(1..4)).map(|_| SafeZone::new(rng.gen_range(0.0..2.5), rng.gen_range(0.0..2.5), 0.1)).collect();
            let r_max = rng.gen_range(0.1..1.5);
            let out = add_pseudo_obstacles(&g, &zones, r_max);
            for iy in 0..g.height() {
                for ix in 0..g.width() {
                    let cx = (ix as f64 + 0.5) * 0.1;
                    let cy = (iy as f64 + 0.5) * 0.1;
                    let dmin = zones
                        .iter()
                        .map(|z| ((cx - z.center[0]).powi(2) + (cy - z.center[1]).powi(2)).sqrt())
                        .fold(f64::INFINITY, f64::min);
                    let want = if dmin > r_max { Cell::Occupied } else { g.get(ix, iy) };
                    assert_eq!(out.get(ix, iy), want);
                }
            }
        }
    }

    #[test]
    fn truncate_cases() {
        let p = Path::new(vec![[0.0, 0.0], [10.0, 0.0]]);
        assert_eq!(truncate_path(&p, 3.0), [3.0, 0.0]);
        assert_eq!(truncate_path(&p, 30.0), [10.0, 0.0]);
        let poly = Path::new(vec![[0.0, 0.0], [3.0, 0.0], [3.0, 4.0], [0.0, 4.0]]);
        // segment walk: 3 along x, then 2 up
        let e = truncate_path(&poly, 5.0);
        assert!((e[0] - 3.0).abs() < 1e-12 && (e[1] - 2.0).abs() < 1e-12);
        let e = truncate_path(&poly, 8.5);
        assert!((e[0] - 1.5).abs() < 1e-12 && (e[1] - 4.0).abs() < 1e-12);
        assert!((poly.prefix(5.0).length() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn empty_map_path_is_nearly_straight() {
        let g = open(60, 40);
        let params = FrontendParams { max_paths: 2, ..Default::default() };
        let paths = topo_prm(&g, [0.5, 0.5], [5.5, 3.5], &[], &params, 0.1, &mut seeded(1));
        assert!(!paths.is_empty());
        let best = paths.iter().map(Path::length).fold(f64::INFINITY, f64::min);
        let straight = dist([0.5, 0.5], [5.5, 3.5]);
        assert!(best <= straight * 1.05, "{best} vs {straight}");
    }

    #[test]
    fn central_obstacle_gives_two_distinct_paths() {
        let mut g = open(60, 40);
        g.fill_rect(2.5, 1.0, 3.5, 3.0, Cell::Occupied);
        let params = FrontendParams { max_paths: 2, prm_samples: 150, ..Default::default() };
        let paths = topo_prm(&g, [0.5, 2.0], [5.5, 2.0], &[], &params, 0.1, &mut seeded(2));
        assert_eq!(paths.len(), 2);
        let sight = CollisionMap::new(&g, 0.0, Blocking::Occupied);
        assert!(!paths_equivalent(&paths[0], &paths[1], &sight, 16));
        let clear = CollisionMap::new(&g, 0.1, Blocking::Occupied);
        for p in &paths {
            assert_eq!(p.waypoints[0], [0.5, 2.0]);
            for w in p.waypoints.windows(2) {
                assert!(segment_free(&clear, w[0], w[1]));
            }
        }
        let above = |p: &Path| p.waypoints.iter().any(|w| w[1] > 3.0);
        assert_ne!(above(&paths[0]), above(&paths[1]));
    }

    #[test]
    fn enclosed_start_has_no_paths() {
        let mut g = open(40, 40);
        g.fill_rect(1.0, 1.0, 3.0, 3.0, Cell::Occupied);
        g.fill_rect(1.1, 1.1, 2.9, 2.9, Cell::Free);
        let paths = topo_prm(&g, [2.0, 2.0], [3.5, 3.5], &[], &FrontendParams::default(), 0.1, &mut seeded(4));
        // only nodes inside the box are reachable; the nearest one to the goal is targeted
        for p in &paths {
            assert!(p.waypoints.iter().all(|w| w[0] < 3.0 && w[1] < 3.0));
        }
        let mut sealed = open(40, 40);
        sealed.fill_rect(1.0, 1.0, 3.0, 3.0, Cell::Occupied);
        sealed.fill_rect(1.9, 1.9, 2.1, 2.1, Cell::Free);
        assert!(topo_prm(&sealed, [2.0, 2.0], [3.5, 3.5], &[], &FrontendParams::default(), 0.05, &mut seeded(4))
            .is_empty());
    }

    #[test]
    fn empty_map_boxes_span_the_grid() {
        let g = open(40, 30);
        let path = Path::new(vec![[0.5, 0.5], [3.0, 2.0]]);
        let (polys, knots) = convex_decompose(&g, &path, 4, 0.1, 1e9).unwrap();
        assert_eq!(knots.len(), 4);
        let last = knots[3];
        assert!((last[0] - 3.0).abs() < 1e-12 && (last[1] - 2.0).abs() < 1e-12);
        for p in &polys {
            assert_eq!(p, &Polytope::from_box(0.1, 0.1, 3.9, 2.9));
        }
    }

    #[test]
    fn corridor_boxes_fit_the_corridor() {
        // corridor of width 0.8 m along y in [1.0, 1.8]
        let mut g = open(60, 30);
        g.fill_rect(0.0, 0.0, 6.0, 1.0, Cell::Occupied);
        g.fill_rect(0.0, 1.8, 6.0, 3.0, Cell::Occupied);
        let path = Path::new(vec![[0.5, 1.4], [5.5, 1.4]]);
        let (polys, knots) = convex_decompose(&g, &path, 5, 0.15, 1.0).unwrap();
        for (p, k) in polys.iter().zip(&knots) {
            assert!(p.contains(*k, 0.0));
            let width = p.offsets[2] + p.offsets[3];
            assert!(width <= 0.8 - 0.3 + 1e-9);
            for iy in 0..g.height() {
                for ix in 0..g.width() {
                    if p.contains(g.cell_center(ix, iy), 0.0) {
                        assert_eq!(g.get(ix, iy), Cell::Free);
                    }
                }
            }
        }
        let hugging = Path::new(vec![[0.5, 1.05], [5.5, 1.05]]);
        assert!(matches!(convex_decompose(&g, &hugging, 5, 0.15, 1.0), Err(Error::Decomposition { .. })));
    }

    #[test]
    fn start_at_goal_keeps_zero_controls() {
        let polys = vec![Polytope::from_box(0.0, 0.0, 2.0, 2.0); 4];
        let knots = vec![[1.0, 1.0]; 4];
        let b = ControlBounds::forward(1.5, 1.5);
        let sol = nmpc_solve(&State::new(1.0, 1.0, 0.3), &knots, &polys, [1.0, 1.0], &b, 0.2, &NmpcParams::default()).unwrap();
        assert!(sol.controls.controls().iter().all(|u| *u == Control::ZERO));
        assert!(sol.objective < 1e-12);
    }

    #[test]
    fn straight_corridor_stays_inside() {
        let mut g = open(60, 30);
        g.fill_rect(0.0, 0.0, 6.0, 1.0, Cell::Occupied);
        g.fill_rect(0.0, 1.8, 6.0, 3.0, Cell::Occupied);
        let path = Path::new(vec![[0.5, 1.4], [3.5, 1.4]]);
        let (polys, knots) = convex_decompose(&g, &path, 6, 0.15, 1.0).unwrap();
        let b = ControlBounds::forward(1.5, 1.5);
        let dt = knot_dt(3.0, 6, 1.5, 0.8);
        let sol = nmpc_solve(&State::new(0.5, 1.4, 0.2), &knots, &polys, [5.5, 1.4], &b, dt, &NmpcParams::default())
            .unwrap();
        for s in &sol.states[1..] {
            assert!((s.y - 1.4).abs() <= 0.4);
        }
        assert!(sol.controls.is_within(&b));
    }

    #[test]
    fn resampling_to_planner_steps() {
        let sol = NmpcSolution {
            controls: ControlSequence::new(vec![Control::new(1.0, 0.0), Control::new(0.5, 1.0)]),
            dt: 0.25,
            objective: 0.0,
            states: vec![],
        };
        let u = to_horizon(&sol, 8, 0.1);
        let v: Vec<f64> = u.controls().iter().map(|c| c.v).collect();
        assert_eq!(v, vec![1.0, 1.0, 1.0, 0.5, 0.5, 0.0, 0.0, 0.0]);
    }
}

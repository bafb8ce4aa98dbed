//! Random benchmark maps and hand-built dead-end fixtures.

use rand::Rng;
use serde::{Deserialize, Serialize};

use cmppi::rng::substream;
use cmppi::sim::{Cell, Environment, OccupancyGrid, SafeZone, State};

use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvGenParams {
    /// Map size in meters.
    pub width: f64,
    pub height: f64,
    pub resolution: f64,
    pub obstacle_count: [usize; 2],
    /// Rectangle side lengths in meters.
    pub obstacle_size: [f64; 2],
    pub zone_radius: [f64; 2],
    /// Center distance between consecutive zones of the start-to-goal chain.
    pub chain_spacing: [f64; 2],
    /// Maximum heading deviation of a chain link from the goal direction, radians.
    pub chain_jitter: f64,
    /// Obstacles keep this distance from the straight links of the chain.
    pub corridor_clearance: f64,
    /// Zones placed anywhere in addition to the chain.
    pub extra_zones: usize,
    /// Minimum center distance between an extra zone and any other zone.
    pub zone_min_spacing: f64,
    pub sensing_radius: f64,
    pub robot_radius: f64,
    pub dt: f64,
    pub v_max: f64,
    pub max_attempts: usize,
}

impl Default for EnvGenParams {
    fn default() -> Self {
        Self {
            width: 10.0,
            height: 6.0,
            resolution: 0.1,
            obstacle_count: [4, 9],
            obstacle_size: [0.4, 1.6],
            zone_radius: [0.35, 0.55],
            chain_spacing: [1.9, 2.4],
            chain_jitter: 0.35,
            corridor_clearance: 0.4,
            extra_zones: 2,
            zone_min_spacing: 1.4,
            sensing_radius: 2.5,
            robot_radius: 0.15,
            dt: 0.1,
            v_max: 1.5,
            max_attempts: 5000,
        }
    }
}

impl EnvGenParams {
    pub fn validate(&self) -> Result<(), BenchError> {
        let ok = self.width > 2.0
            && self.height > 2.0
            && self.resolution > 0.0
            && self.obstacle_count[0] <= self.obstacle_count[1]
            && 0.0 < self.obstacle_size[0]
            && self.obstacle_size[0] <= self.obstacle_size[1]
            && 0.0 < self.zone_radius[0]
            && self.zone_radius[0] <= self.zone_radius[1]
            && 0.0 < self.chain_spacing[0]
            && self.chain_spacing[0] <= self.chain_spacing[1]
            && self.chain_jitter >= 0.0
            && self.corridor_clearance >= 0.0
            && self.zone_min_spacing >= 0.0
            && self.sensing_radius > 0.0
            && self.robot_radius > 0.0
            && self.dt > 0.0
            && self.v_max > 0.0
            && self.max_attempts > 0;
        if ok {
            Ok(())
        } else {
            Err(BenchError::Config("inconsistent environment generator parameters".into()))
        }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn disc_free(grid: &OccupancyGrid, c: [f64; 2], r: f64) -> bool {
    grid.at(c[0], c[1]) == Cell::Free && !grid.any_cell_within(c[0], c[1], r, |_, _, cell| cell != Cell::Free)
}

/// Bordered map with random rectangles. A jittered chain of zones runs from
/// the start to a zone on the goal, and rectangles are rejected near the zones
/// and the chain links. Wide gaps between zones can still leave no certified
/// route to the goal.
pub fn generate_env(params: &EnvGenParams, seed: u64) -> Result<Environment, BenchError> {
    params.validate()?;
    let mut last = None;
    for layout in 0..LAYOUT_RETRIES {
        match try_layout(params, seed, layout) {
            Ok(env) => return Ok(env),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one layout attempt"))
}

const LAYOUT_RETRIES: u64 = 20;

fn try_layout(params: &EnvGenParams, seed: u64, layout: u64) -> Result<Environment, BenchError> {
    let mut rng = substream(seed, &[0x656e76, layout]);
    let w = (params.width / params.resolution).round() as usize;
    let h = (params.height / params.resolution).round() as usize;
    let mut grid = OccupancyGrid::new(w, h, params.resolution, [0.0, 0.0], Cell::Free);
    grid.fill_border(Cell::Occupied);

    let margin = 0.6;
    let start = [0.9, rng.gen_range(margin + 0.4..params.height - margin - 0.4)];
    let goal = [params.width - 0.9, rng.gen_range(margin + 0.4..params.height - margin - 0.4)];
    let keep_clear = 0.8;

    let clearance = params.robot_radius + params.resolution;
    let [bx0, by0, bx1, by1] = grid.bounds();
    let inside = |c: [f64; 2], r: f64| c[0] - r > bx0 + 0.2 && c[0] + r < bx1 - 0.2 && c[1] - r > by0 + 0.2 && c[1] + r < by1 - 0.2;

    // chain toward the goal, laid out before any obstacle
    let r0 = rng.gen_range(params.zone_radius[0]..=params.zone_radius[1]);
    let mut zones = vec![SafeZone::new(start[0], start[1], r0)];
    let mut tip = start;
    while dist(tip, goal) > params.chain_spacing[1] {
        let base = (goal[1] - tip[1]).atan2(goal[0] - tip[0]);
        let mut next = None;
        for _ in 0..params.max_attempts.min(200) {
            let a = base + rng.gen_range(-params.chain_jitter..=params.chain_jitter);
            let d = rng.gen_range(params.chain_spacing[0]..=params.chain_spacing[1]);
            let r = rng.gen_range(params.zone_radius[0]..=params.zone_radius[1]);
            let c = [tip[0] + d * a.cos(), tip[1] + d * a.sin()];
            if inside(c, r) && dist(c, goal) < dist(tip, goal) {
                next = Some(SafeZone::new(c[0], c[1], r));
                break;
            }
        }
        let Some(z) = next else {
            return Err(BenchError::Generation("zone chain could not be extended".into()));
        };
        tip = z.center;
        zones.push(z);
    }
    let rg = rng.gen_range(params.zone_radius[0]..=params.zone_radius[1]);
    zones.push(SafeZone::new(goal[0], goal[1], rg));
    let links: Vec<([f64; 2], [f64; 2])> = zones.windows(2).map(|w| (w[0].center, w[1].center)).collect();

    let n_obs = rng.gen_range(params.obstacle_count[0]..=params.obstacle_count[1]);
    let mut placed = 0;
    let mut attempts = 0;
    while placed < n_obs && attempts < params.max_attempts {
        attempts += 1;
        let sx = rng.gen_range(params.obstacle_size[0]..=params.obstacle_size[1]);
        let sy = rng.gen_range(params.obstacle_size[0]..=params.obstacle_size[1]);
        let x0 = rng.gen_range(0.0..params.width - sx);
        let y0 = rng.gen_range(0.0..params.height - sy);
        let rect_dist = |p: [f64; 2]| dist(p, [p[0].clamp(x0, x0 + sx), p[1].clamp(y0, y0 + sy)]);
        let blocks_zone = zones.iter().any(|z| rect_dist(z.center) < z.radius + clearance + params.resolution);
        let blocks_link = links.iter().any(|&(a, b)| {
            (0..=20).any(|i| {
                let t = i as f64 / 20.0;
                rect_dist([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]) < params.corridor_clearance
            })
        });
        if rect_dist(start) < keep_clear || rect_dist(goal) < keep_clear || blocks_zone || blocks_link {
            continue;
        }
        grid.fill_rect(x0, y0, x0 + sx, y0 + sy, Cell::Occupied);
        placed += 1;
    }

    let mut extra = 0;
    attempts = 0;
    while extra < params.extra_zones && attempts < params.max_attempts {
        attempts += 1;
        let r = rng.gen_range(params.zone_radius[0]..=params.zone_radius[1]);
        let c = [rng.gen_range(bx0 + r + 0.2..bx1 - r - 0.2), rng.gen_range(by0 + r + 0.2..by1 - r - 0.2)];
        let spaced = zones.iter().all(|z| dist(c, z.center) >= params.zone_min_spacing);
        if spaced && disc_free(&grid, c, r + clearance) {
            zones.push(SafeZone::new(c[0], c[1], r));
            extra += 1;
        }
    }

    let theta = (goal[1] - start[1]).atan2(goal[0] - start[0]);
    let env = Environment::new(
        grid,
        zones,
        State::new(start[0], start[1], theta),
        goal,
        params.sensing_radius,
        params.robot_radius,
        params.dt,
        params.v_max,
    );
    env.validate().map_err(|e| BenchError::Generation(e.to_string()))?;
    Ok(env)
}

/// Corridor from a start zone into a long closed pocket that points at the
/// goal. The pocket floor lies well beyond the contingency reach of the
/// only zone, and the goal sits behind its far wall.
pub fn dead_end_fixture(params: &EnvGenParams, variant: usize) -> Environment {
    let res = params.resolution;
    let (w, h) = (10.0, 6.0);
    let mut grid = OccupancyGrid::new((w / res).round() as usize, (h / res).round() as usize, res, [0.0, 0.0], Cell::Free);
    grid.fill_border(Cell::Occupied);
    let mid = if variant.is_multiple_of(2) { 3.0 } else { 2.6 };
    let half = 0.45 + 0.05 * (variant % 3) as f64;
    // pocket walls, open toward the start, closed at x = 7.0
    grid.fill_rect(2.5, mid + half, 7.2, mid + half + 0.3, Cell::Occupied);
    grid.fill_rect(2.5, mid - half - 0.3, 7.2, mid - half, Cell::Occupied);
    grid.fill_rect(7.0, mid - half - 0.3, 7.3, mid + half + 0.3, Cell::Occupied);
    let zones = vec![SafeZone::new(1.0, mid, 0.45)];
    Environment::new(
        grid,
        zones,
        State::new(1.0, mid, 0.0),
        [8.8, mid],
        params.sensing_radius,
        params.robot_radius,
        params.dt,
        params.v_max,
    )
}

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dynamics::State;
use super::grid::{collides, Cell, OccupancyGrid};
use crate::error::{Error, Result};

/// Disc-shaped safe region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafeZone {
    pub center: [f64; 2],
    pub radius: f64,
}

impl SafeZone {
    pub fn new(x: f64, y: f64, radius: f64) -> Self {
        Self { center: [x, y], radius }
    }

    /// Distance from `p` to the disc, zero inside.
    #[inline]
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        let d = ((p[0] - self.center[0]).powi(2) + (p[1] - self.center[1]).powi(2)).sqrt();
        (d - self.radius).max(0.0)
    }
}

/// Ground-truth world plus the agent's partial knowledge of it.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    /// Ground truth; contains only `Free` and `Occupied` cells.
    pub grid: OccupancyGrid,
    /// Agent belief: `Unknown` until revealed, then equal to ground truth.
    pub known: OccupancyGrid,
    pub safe_zones: Vec<SafeZone>,
    pub start: State,
    pub goal: [f64; 2],
    pub sensing_radius: f64,
    pub robot_radius: f64,
    pub dt: f64,
    pub v_max: f64,
}

impl Environment {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: OccupancyGrid,
        safe_zones: Vec<SafeZone>,
        start: State,
        goal: [f64; 2],
        sensing_radius: f64,
        robot_radius: f64,
        dt: f64,
        v_max: f64,
    ) -> Self {
        let known = OccupancyGrid::new(grid.width(), grid.height(), grid.resolution(), grid.origin(), Cell::Unknown);
        Self { grid, known, safe_zones, start, goal, sensing_radius, robot_radius, dt, v_max }
    }

    /// Copy ground truth into the known grid for every cell whose center is
    /// strictly closer than `sensing_radius` to the state.
    pub fn reveal(&mut self, s: &State) {
        let r = self.sensing_radius;
        if r <= 0.0 {
            return;
        }
        let Self { grid, known, .. } = self;
        grid.any_cell_within(s.x, s.y, r, |ix, iy, truth| {
            let [cx, cy] = grid.cell_center(ix, iy);
            if (cx - s.x).powi(2) + (cy - s.y).powi(2) < r * r {
                known.set(ix, iy, truth);
            }
            false
        });
    }

    /// Forget everything revealed so far.
    pub fn reset_knowledge(&mut self) {
        self.known = OccupancyGrid::new(
            self.grid.width(),
            self.grid.height(),
            self.grid.resolution(),
            self.grid.origin(),
            Cell::Unknown,
        );
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidEnvironment(m));
        if self.safe_zones.is_empty() {
            return Err(Error::NoSafeZones);
        }
        if !(self.dt > 0.0) || !(self.v_max > 0.0) || self.robot_radius < 0.0 || self.sensing_radius < 0.0 {
            return bad("dt, v_max must be positive; radii non-negative".into());
        }
        if self.grid.cells().contains(&Cell::Unknown) {
            return bad("ground truth contains unknown cells".into());
        }
        for (i, z) in self.safe_zones.iter().enumerate() {
            if !(z.radius > 0.0) {
                return bad(format!("safe zone {i} has non-positive radius"));
            }
            if self.grid.at(z.center[0], z.center[1]) != Cell::Free {
                return bad(format!("safe zone {i} center is not free"));
            }
        }
        if self.grid.at(self.goal[0], self.goal[1]) != Cell::Free {
            return bad("goal is not free".into());
        }
        if collides(&self.grid, &self.start, self.robot_radius) {
            return bad("start state collides".into());
        }
        for (k, t) in self.known.cells().iter().zip(self.grid.cells()) {
            if *k != Cell::Unknown && k != t {
                return bad("known grid disagrees with ground truth".into());
            }
        }
        Ok(())
    }

    pub fn to_file(&self) -> EnvironmentFile {
        let mut occupied_cells = Vec::new();
        for iy in 0..self.grid.height() {
            for ix in 0..self.grid.width() {
                if self.grid.get(ix, iy) == Cell::Occupied {
                    occupied_cells.push([ix, iy]);
                }
            }
        }
        let any_known = self.known.cells().iter().any(|&c| c != Cell::Unknown);
        let known = any_known.then(|| {
            (0..self.known.height())
                .map(|iy| (0..self.known.width()).map(|ix| self.known.get(ix, iy).to_char()).collect())
                .collect()
        });
        EnvironmentFile {
            resolution: self.grid.resolution(),
            origin: self.grid.origin(),
            size: [self.grid.width(), self.grid.height()],
            occupied_cells,
            occupied_rects: Vec::new(),
            safe_zones: self
                .safe_zones
                .iter()
                .map(|z| ZoneRecord { x: z.center[0], y: z.center[1], r: z.radius })
                .collect(),
            start: self.start,
            goal: GoalRecord { x: self.goal[0], y: self.goal[1] },
            sensing_radius: self.sensing_radius,
            robot_radius: self.robot_radius,
            dt: self.dt,
            v_max: self.v_max,
            known,
        }
    }

    pub fn from_file(f: EnvironmentFile) -> Result<Self> {
        let [w, h] = f.size;
        if w == 0 || h == 0 || !(f.resolution > 0.0) {
            return Err(Error::InvalidEnvironment("empty grid or non-positive resolution".into()));
        }
        let mut grid = OccupancyGrid::new(w, h, f.resolution, f.origin, Cell::Free);
        for r in &f.occupied_rects {
            grid.fill_rect(r[0], r[1], r[2], r[3], Cell::Occupied);
        }
        for &[ix, iy] in &f.occupied_cells {
            if ix >= w || iy >= h {
                return Err(Error::InvalidEnvironment(format!("occupied cell ({ix}, {iy}) out of range")));
            }
            grid.set(ix, iy, Cell::Occupied);
        }
        let mut env = Environment::new(
            grid,
            f.safe_zones.iter().map(|z| SafeZone::new(z.x, z.y, z.r)).collect(),
            f.start,
            [f.goal.x, f.goal.y],
            f.sensing_radius,
            f.robot_radius,
            f.dt,
            f.v_max,
        );
        if let Some(rows) = f.known {
            if rows.len() != h {
                return Err(Error::InvalidEnvironment("known grid row count mismatch".into()));
            }
            for (iy, row) in rows.iter().enumerate() {
                let cells: Vec<char> = row.chars().collect();
                if cells.len() != w {
                    return Err(Error::InvalidEnvironment(format!("known grid row {iy} has wrong width")));
                }
                for (ix, ch) in cells.into_iter().enumerate() {
                    let c = Cell::from_char(ch)
                        .ok_or_else(|| Error::InvalidEnvironment(format!("bad cell code {ch:?}")))?;
                    env.known.set(ix, iy, c);
                }
            }
        }
        Ok(env)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneRecord {
    pub x: f64,
    pub y: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalRecord {
    pub x: f64,
    pub y: f64,
}

/// On-disk environment layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentFile {
    pub resolution: f64,
    pub origin: [f64; 2],
    /// `[width, height]` in cells.
    pub size: [usize; 2],
    #[serde(default)]
    pub occupied_cells: Vec<[usize; 2]>,
    /// `[x0, y0, x1, y1]` world rectangles; cells whose centers fall inside are occupied.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub occupied_rects: Vec<[f64; 4]>,
    pub safe_zones: Vec<ZoneRecord>,
    pub start: State,
    pub goal: GoalRecord,
    pub sensing_radius: f64,
    pub robot_radius: f64,
    pub dt: f64,
    pub v_max: f64,
    /// Revealed knowledge as rows of `.`/`#`/`?`, omitted when nothing is known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known: Option<Vec<String>>,
}

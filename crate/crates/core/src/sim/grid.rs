use serde::{Deserialize, Serialize};

use super::dynamics::State;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Free,
    Occupied,
    Unknown,
}

impl Cell {
    pub fn to_char(self) -> char {
        match self {
            Cell::Free => '.',
            Cell::Occupied => '#',
            Cell::Unknown => '?',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            '.' => Some(Cell::Free),
            '#' => Some(Cell::Occupied),
            '?' => Some(Cell::Unknown),
            _ => None,
        }
    }
}

/// Row-major 2-D occupancy grid. Cell `(ix, iy)` covers
/// `[ox + ix*res, ox + (ix+1)*res) x [oy + iy*res, oy + (iy+1)*res)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    resolution: f64,
    origin: [f64; 2],
    width: usize,
    height: usize,
    cells: Vec<Cell>,
}

impl OccupancyGrid {
    pub fn new(width: usize, height: usize, resolution: f64, origin: [f64; 2], fill: Cell) -> Self {
        assert!(resolution > 0.0, "resolution must be positive");
        Self { resolution, origin, width, height, cells: vec![fill; width * height] }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    /// World-space extent `[x_min, y_min, x_max, y_max]`.
    pub fn bounds(&self) -> [f64; 4] {
        [
            self.origin[0],
            self.origin[1],
            self.origin[0] + self.width as f64 * self.resolution,
            self.origin[1] + self.height as f64 * self.resolution,
        ]
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.width + ix
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> Cell {
        self.cells[self.index(ix, iy)]
    }

    pub fn set(&mut self, ix: usize, iy: usize, cell: Cell) {
        let i = self.index(ix, iy);
        self.cells[i] = cell;
    }

    /// Signed cell coordinates of a world point, possibly outside the grid.
    #[inline]
    pub fn raw_cell(&self, x: f64, y: f64) -> (i64, i64) {
        (
            ((x - self.origin[0]) / self.resolution).floor() as i64,
            ((y - self.origin[1]) / self.resolution).floor() as i64,
        )
    }

    #[inline]
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !x.is_finite() || !y.is_finite() {
            return None;
        }
        let (ix, iy) = self.raw_cell(x, y);
        if ix >= 0 && iy >= 0 && (ix as usize) < self.width && (iy as usize) < self.height {
            Some((ix as usize, iy as usize))
        } else {
            None
        }
    }

    #[inline]
    pub fn cell_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.origin[0] + (ix as f64 + 0.5) * self.resolution,
            self.origin[1] + (iy as f64 + 0.5) * self.resolution,
        ]
    }

    /// Cell status at a world point; out of bounds reads as `Occupied`.
    pub fn at(&self, x: f64, y: f64) -> Cell {
        match self.cell_of(x, y) {
            Some((ix, iy)) => self.get(ix, iy),
            None => Cell::Occupied,
        }
    }

    /// Set every cell whose center lies inside the axis-aligned rectangle.
    pub fn fill_rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, cell: Cell) {
        for iy in 0..self.height {
            for ix in 0..self.width {
                let [cx, cy] = self.cell_center(ix, iy);
                if cx >= x0 && cx <= x1 && cy >= y0 && cy <= y1 {
                    self.set(ix, iy, cell);
                }
            }
        }
    }

    /// Mark the outermost ring of cells.
    pub fn fill_border(&mut self, cell: Cell) {
        for ix in 0..self.width {
            self.set(ix, 0, cell);
            self.set(ix, self.height - 1, cell);
        }
        for iy in 0..self.height {
            self.set(0, iy, cell);
            self.set(self.width - 1, iy, cell);
        }
    }

    /// Inclusive index window of cells whose centers could be within `r` of `(x, y)`.
    fn window(&self, x: f64, y: f64, r: f64) -> Option<(usize, usize, usize, usize)> {
        let (lx, ly) = self.raw_cell(x - r, y - r);
        let (hx, hy) = self.raw_cell(x + r, y + r);
        let lx = lx.max(0);
        let ly = ly.max(0);
        let hx = hx.min(self.width as i64 - 1);
        let hy = hy.min(self.height as i64 - 1);
        if lx > hx || ly > hy {
            return None;
        }
        Some((lx as usize, ly as usize, hx as usize, hy as usize))
    }

    /// Call `f` for every cell whose center is within `r` of `(x, y)`; stops when `f` returns true.
    pub fn any_cell_within(&self, x: f64, y: f64, r: f64, mut f: impl FnMut(usize, usize, Cell) -> bool) -> bool {
        let Some((lx, ly, hx, hy)) = self.window(x, y, r) else {
            return false;
        };
        let r2 = r * r;
        for iy in ly..=hy {
            for ix in lx..=hx {
                let [cx, cy] = self.cell_center(ix, iy);
                let d2 = (cx - x) * (cx - x) + (cy - y) * (cy - y);
                if d2 <= r2 && f(ix, iy, self.get(ix, iy)) {
                    return true;
                }
            }
        }
        false
    }
}

/// True iff the point is off the grid, lies in an `Occupied` cell, or any
/// `Occupied` cell center lies within `robot_radius` of the state's position.
pub fn collides(grid: &OccupancyGrid, s: &State, robot_radius: f64) -> bool {
    let Some((ix, iy)) = grid.cell_of(s.x, s.y) else {
        return true;
    };
    if grid.get(ix, iy) == Cell::Occupied {
        return true;
    }
    grid.any_cell_within(s.x, s.y, robot_radius, |_, _, c| c == Cell::Occupied)
}

/// Which cell statuses block the robot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Blocking {
    /// Only `Occupied` cells block.
    Occupied,
    /// Anything not known to be `Free` blocks.
    NotFree,
}

impl Blocking {
    #[inline]
    fn blocks(self, c: Cell) -> bool {
        match self {
            Blocking::Occupied => c == Cell::Occupied,
            Blocking::NotFree => c != Cell::Free,
        }
    }
}

/// Precomputed collision checker that answers exactly like [`collides`]
/// (generalised to a [`Blocking`] rule) but skips the disc scan for cells
/// with no blocking cell nearby.
#[derive(Debug, Clone)]
pub struct CollisionMap {
    grid: OccupancyGrid,
    radius: f64,
    rule: Blocking,
    near: Vec<bool>,
}

impl CollisionMap {
    pub fn new(grid: &OccupancyGrid, radius: f64, rule: Blocking) -> Self {
        let res = grid.resolution();
        let half_diag = 0.5 * res * std::f64::consts::SQRT_2;
        let reach = radius.max(0.0) + half_diag + 1e-9;
        let reach2 = reach * reach;
        let k = (reach / res).ceil() as i64;
        let (w, h) = (grid.width() as i64, grid.height() as i64);
        let mut near = vec![false; grid.cells().len()];
        for iy in 0..h {
            for ix in 0..w {
                if !rule.blocks(grid.get(ix as usize, iy as usize)) {
                    continue;
                }
                for dy in -k..=k {
                    for dx in -k..=k {
                        let (jx, jy) = (ix + dx, iy + dy);
                        if jx < 0 || jy < 0 || jx >= w || jy >= h {
                            continue;
                        }
                        let d2 = ((dx * dx + dy * dy) as f64) * res * res;
                        if d2 <= reach2 {
                            near[(jy * w + jx) as usize] = true;
                        }
                    }
                }
            }
        }
        Self { grid: grid.clone(), radius, rule, near }
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn rule(&self) -> Blocking {
        self.rule
    }

    #[inline]
    pub fn collides_at(&self, x: f64, y: f64) -> bool {
        let Some((ix, iy)) = self.grid.cell_of(x, y) else {
            return true;
        };
        let i = self.grid.index(ix, iy);
        if !self.near[i] {
            return false;
        }
        let rule = self.rule;
        if rule.blocks(self.grid.cells()[i]) {
            return true;
        }
        self.grid.any_cell_within(x, y, self.radius, |_, _, c| rule.blocks(c))
    }

    #[inline]
    pub fn collides(&self, s: &State) -> bool {
        self.collides_at(s.x, s.y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn brute_collides(grid: &OccupancyGrid, x: f64, y: f64, r: f64, rule: Blocking) -> bool {
        let Some((ox, oy)) = grid.cell_of(x, y) else {
            return true;
        };
        if rule.blocks(grid.get(ox, oy)) {
            return true;
        }
        for iy in 0..grid.height() {
            for ix in 0..grid.width() {
                let [cx, cy] = grid.cell_center(ix, iy);
                if ((cx - x).powi(2) + (cy - y).powi(2)).sqrt() <= r && rule.blocks(grid.get(ix, iy)) {
                    return true;
                }
            }
        }
        false
    }

    fn walled() -> OccupancyGrid {
        let mut g = OccupancyGrid::new(40, 30, 0.1, [0.0, 0.0], Cell::Free);
        g.fill_rect(2.0, 0.0, 2.2, 2.0, Cell::Occupied);
        g.fill_rect(0.5, 2.5, 1.0, 3.0, Cell::Unknown);
        g
    }

    #[test]
    fn free_center_does_not_collide() {
        let g = OccupancyGrid::new(100, 100, 0.1, [0.0, 0.0], Cell::Free);
        assert!(!collides(&g, &State::new(5.0, 5.0, 0.0), 0.3));
    }

    #[test]
    fn inside_occupied_collides() {
        let g = walled();
        assert!(collides(&g, &State::new(2.1, 1.0, 0.0), 0.05));
        assert!(collides(&g, &State::new(2.1, 1.0, 0.0), 0.0));
    }

    #[test]
    fn out_of_bounds_collides() {
        let g = walled();
        assert!(collides(&g, &State::new(-0.01, 1.0, 0.0), 0.1));
        assert!(collides(&g, &State::new(1.0, 3.0, 0.0), 0.1));
        assert!(collides(&g, &State::new(f64::NAN, 1.0, 0.0), 0.1));
        assert_eq!(g.at(100.0, 0.0), Cell::Occupied);
    }

    #[test]
    fn near_wall_matches_brute_force() {
        let g = walled();
        let mut rng = seeded(3);
        for _ in 0..4000 {
            let x = rng.gen_range(-0.2..4.2);
            let y = rng.gen_range(-0.2..3.2);
            let r = rng.gen_range(0.0..0.5);
            let s = State::new(x, y, 0.0);
            let expect = brute_collides(&g, x, y, r, Blocking::Occupied);
            assert_eq!(collides(&g, &s, r), expect, "({x}, {y}) r={r}");
            for rule in [Blocking::Occupied, Blocking::NotFree] {
                let map = CollisionMap::new(&g, r, rule);
                assert_eq!(map.collides(&s), brute_collides(&g, x, y, r, rule), "({x}, {y}) r={r} {rule:?}");
            }
        }
    }

    #[test]
    fn char_codes_roundtrip() {
        for c in [Cell::Free, Cell::Occupied, Cell::Unknown] {
            assert_eq!(Cell::from_char(c.to_char()), Some(c));
        }
        assert_eq!(Cell::from_char('x'), None);
    }
}

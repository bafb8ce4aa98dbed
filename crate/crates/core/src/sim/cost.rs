//! Task cost terms for the hide-and-seek navigation problem.

use super::dynamics::State;
use super::env::SafeZone;
use super::grid::{Cell, OccupancyGrid};
use crate::error::{Error, Result};

/// Smallest distance from any state's position to any safe-zone disc
/// (zero once a state is inside a zone).
pub fn min_dist_to_safe(states: &[State], zones: &[SafeZone]) -> Result<f64> {
    if zones.is_empty() {
        return Err(Error::NoSafeZones);
    }
    let mut best = f64::INFINITY;
    for s in states {
        best = best.min(dist_to_safe(s.position(), zones));
        if best == 0.0 {
            break;
        }
    }
    Ok(best)
}

/// Distance from one point to the nearest safe zone. `zones` must be non-empty
/// for the result to be finite.
#[inline]
pub fn dist_to_safe(p: [f64; 2], zones: &[SafeZone]) -> f64 {
    zones.iter().fold(f64::INFINITY, |acc, z| acc.min(z.distance(p)))
}

/// Symmetric 2x2 weight applied to the position error.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PositionWeight(pub [[f64; 2]; 2]);

impl PositionWeight {
    pub fn identity() -> Self {
        Self([[1.0, 0.0], [0.0, 1.0]])
    }

    pub fn diagonal(qx: f64, qy: f64) -> Self {
        Self([[qx, 0.0], [0.0, qy]])
    }

    #[inline]
    pub fn quad(&self, e: [f64; 2]) -> f64 {
        let q = &self.0;
        e[0] * (q[0][0] * e[0] + q[0][1] * e[1]) + e[1] * (q[1][0] * e[0] + q[1][1] * e[1])
    }
}

/// Quadratic goal-distance cost summed over every state. Heading is not
/// weighted.
pub fn nominal_cost(states: &[State], goal: [f64; 2], q: &PositionWeight) -> f64 {
    states.iter().map(|s| q.quad([s.x - goal[0], s.y - goal[1]])).sum()
}

/// `0` if states `0..t_safe` all sit in cells the known grid marks `Free`, `+inf` otherwise.
pub fn known_space_cost(states: &[State], known: &OccupancyGrid, t_safe: usize) -> f64 {
    let all_free = states.iter().take(t_safe).all(|s| known.at(s.x, s.y) == Cell::Free);
    if all_free {
        0.0
    } else {
        f64::INFINITY
    }
}

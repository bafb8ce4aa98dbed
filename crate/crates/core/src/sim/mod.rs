//! Deterministic differential-drive simulation: dynamics, occupancy grids,
//! limited-range sensing, safe zones and task costs.

mod cost;
mod dynamics;
mod env;
mod grid;

pub use cost::{dist_to_safe, known_space_cost, min_dist_to_safe, nominal_cost, PositionWeight};
pub use dynamics::{
    rollout, step, wrap_angle, Control, ControlBounds, ControlSequence, State, StateSequence, CONTROL_DIM,
};
pub use env::{Environment, EnvironmentFile, GoalRecord, SafeZone, ZoneRecord};
pub use grid::{collides, Blocking, Cell, CollisionMap, OccupancyGrid};

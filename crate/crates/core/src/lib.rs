//! Contingency-constrained sampling-based model predictive control.
//!
//! The crate is organised bottom-up:
//!
//! - [`sim`]: differential-drive dynamics, occupancy grids with limited-range
//!   sensing, safe zones and the task cost terms.
//! - [`mppi`]: Gaussian proposal sampling, importance weights, penalty
//!   constraints and cross-entropy adaptive importance sampling.
//! - [`contingency`]: per-state search for a short control sequence that
//!   reaches the safe set, plus deterministic replay verification.
//! - [`nested`]: nominal MPPI whose sample cost embeds the contingency reach
//!   score, with ancillary control sequences injected as mixture modes.
//! - [`frontend`]: safe-zone-biased roadmap paths, pseudo-obstacles, convex
//!   free-space boxes and a knot-point shooting NMPC producing the ancillary
//!   control sequences.
//! - [`pipeline`]: the receding-horizon outer loop with retreat-to-safe
//!   behaviour and run traces.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod contingency;
pub mod error;
pub mod frontend;
pub mod mppi;
pub mod nested;
pub mod pipeline;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Planar pose of a differential-drive vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl State {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: wrap_angle(theta) }
    }

    /// Workspace projection (x, y).
    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Map an angle onto [-π, π).
pub fn wrap_angle(theta: f64) -> f64 {
    if (-PI..PI).contains(&theta) {
        return theta;
    }
    let two_pi = 2.0 * PI;
    let wrapped = theta - two_pi * ((theta + PI) / two_pi).floor();
    // floor can land exactly on π through rounding
    if wrapped >= PI {
        wrapped - two_pi
    } else {
        wrapped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    pub v: f64,
    pub omega: f64,
}

impl Control {
    pub const ZERO: Control = Control { v: 0.0, omega: 0.0 };

    pub fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }
}

/// Box bounds on (v, omega).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    pub lower: Control,
    pub upper: Control,
}

impl ControlBounds {
    pub fn new(lower: Control, upper: Control) -> Self {
        Self { lower, upper }
    }

    /// Forward-only differential drive: v in [0, v_max], omega in [-omega_max, omega_max].
    pub fn forward(v_max: f64, omega_max: f64) -> Self {
        Self {
            lower: Control::new(0.0, -omega_max),
            upper: Control::new(v_max, omega_max),
        }
    }

    pub fn clamp(&self, u: Control) -> Control {
        Control {
            v: u.v.clamp(self.lower.v, self.upper.v),
            omega: u.omega.clamp(self.lower.omega, self.upper.omega),
        }
    }

    pub fn contains(&self, u: Control) -> bool {
        u.v >= self.lower.v && u.v <= self.upper.v && u.omega >= self.lower.omega && u.omega <= self.upper.omega
    }

    /// Lower/upper bound for coordinate `j` of a flattened sequence.
    pub fn flat(&self, j: usize) -> (f64, f64) {
        if j.is_multiple_of(CONTROL_DIM) {
            (self.lower.v, self.upper.v)
        } else {
            (self.lower.omega, self.upper.omega)
        }
    }

    pub fn midpoint(&self) -> Control {
        Control::new(
            0.5 * (self.lower.v + self.upper.v),
            0.5 * (self.lower.omega + self.upper.omega),
        )
    }
}

/// Number of control coordinates per step.
pub const CONTROL_DIM: usize = 2;

/// A horizon of controls; the flattened view interleaves `[v0, w0, v1, w1, ...]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlSequence {
    controls: Vec<Control>,
}

impl ControlSequence {
    pub fn new(controls: Vec<Control>) -> Self {
        Self { controls }
    }

    pub fn zeros(horizon: usize) -> Self {
        Self { controls: vec![Control::ZERO; horizon] }
    }

    pub fn constant(horizon: usize, u: Control) -> Self {
        Self { controls: vec![u; horizon] }
    }

    /// Panics if `flat.len()` is odd.
    pub fn from_flat(flat: &[f64]) -> Self {
        assert!(flat.len().is_multiple_of(CONTROL_DIM), "flattened control length must be even");
        Self {
            controls: flat.chunks_exact(CONTROL_DIM).map(|c| Control::new(c[0], c[1])).collect(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.controls.iter().flat_map(|u| [u.v, u.omega]).collect()
    }

    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn controls(&self) -> &[Control] {
        &self.controls
    }

    pub fn get(&self, i: usize) -> Option<Control> {
        self.controls.get(i).copied()
    }

    pub fn clamped(&self, bounds: &ControlBounds) -> Self {
        Self { controls: self.controls.iter().map(|&u| bounds.clamp(u)).collect() }
    }

    pub fn is_within(&self, bounds: &ControlBounds) -> bool {
        self.controls.iter().all(|&u| bounds.contains(u))
    }

    /// Drop the first control and pad with zero, keeping the horizon.
    pub fn shifted(&self) -> Self {
        if self.controls.is_empty() {
            return self.clone();
        }
        let mut controls = self.controls[1..].to_vec();
        controls.push(Control::ZERO);
        Self { controls }
    }

    /// Suffix starting at `from`, zero-padded back to `horizon` entries.
    pub fn suffix_padded(&self, from: usize, horizon: usize) -> Self {
        let mut controls: Vec<Control> = self.controls.iter().skip(from).copied().take(horizon).collect();
        controls.resize(horizon, Control::ZERO);
        Self { controls }
    }
}

pub type StateSequence = Vec<State>;

/// One explicit Euler step of the unicycle model.
#[inline]
pub fn step(s: &State, u: Control, dt: f64) -> State {
    State {
        x: s.x + u.v * s.theta.cos() * dt,
        y: s.y + u.v * s.theta.sin() * dt,
        theta: wrap_angle(s.theta + u.omega * dt),
    }
}

/// States `x0, x1, ..., xT` produced by applying every control in turn.
pub fn rollout(x0: &State, controls: &ControlSequence, dt: f64) -> StateSequence {
    let mut states = Vec::with_capacity(controls.horizon() + 1);
    let mut s = *x0;
    states.push(s);
    for &u in controls.controls() {
        s = step(&s, u, dt);
        states.push(s);
    }
    states
}

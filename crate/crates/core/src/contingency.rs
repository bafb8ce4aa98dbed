//! Contingency search: from each of the first `T_s` states of a nominal
//! rollout, look for a control sequence of at most `T_c` steps that reaches
//! the safe set without colliding.
//!
//! Round 0 draws sequences uniformly inside the control bounds and seeds a
//! Gaussian proposal from its elite set; later rounds sample that proposal and
//! refit it by CEM. A state is certified once any sample's rollout enters a
//! safe zone (within `eps_safe`). Rollouts stop at the first state inside the
//! safe set, so collisions after arrival are irrelevant.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mppi::{self, CostParams, SamplingDistribution, SampleBatch, DEFAULT_SIGMA_FLOOR};
use crate::rng::{derive_seed, substream};
use crate::sim::{
    collides, dist_to_safe, step, Blocking, CollisionMap, ControlBounds, ControlSequence, Environment, SafeZone,
    State,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContingencyParams {
    /// Samples per round (`K_c`).
    pub samples: usize,
    /// Contingency horizon in steps (`T_c`).
    pub horizon: usize,
    /// AIS rounds (`L_c`).
    pub rounds: usize,
    /// Number of leading nominal states that must be certified (`T_s`).
    pub checked_states: usize,
    pub m_elite: usize,
    /// Reach threshold in meters beyond the zone radius.
    pub eps_safe: f64,
    /// Fallback per-step variance `[var_v, var_omega]` when round 0 has too few finite samples.
    pub sigma: [f64; 2],
    pub sigma_floor: f64,
    pub cost: CostParams,
}

impl Default for ContingencyParams {
    fn default() -> Self {
        Self {
            samples: 64,
            horizon: 12,
            rounds: 2,
            checked_states: 10,
            m_elite: 6,
            eps_safe: 0.0,
            sigma: [0.3, 0.5],
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            cost: CostParams { lambda: 0.1, alpha: 1.0 },
        }
    }
}

impl ContingencyParams {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(invalid("contingency samples must be at least 2"));
        }
        if self.horizon == 0 {
            return Err(invalid("contingency horizon must be at least 1"));
        }
        if self.rounds == 0 {
            return Err(invalid("contingency rounds must be at least 1"));
        }
        if self.checked_states == 0 {
            return Err(invalid("at least one nominal state must be checked"));
        }
        if self.m_elite < 2 || self.m_elite > self.samples {
            return Err(invalid("contingency m_elite must lie in [2, samples]"));
        }
        if !(self.eps_safe >= 0.0) {
            return Err(invalid("eps_safe must be non-negative"));
        }
        SamplingDistribution::per_step(vec![0.0; 2], self.sigma, self.sigma_floor)?;
        self.cost.validate()
    }

    /// The same search with `k` times the samples and `l` times the rounds.
    pub fn scaled(&self, k: usize, l: usize) -> Self {
        Self { samples: self.samples * k, rounds: self.rounds * l, m_elite: self.m_elite * k, ..*self }
    }
}

/// Result of the search from one nominal state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateCertificate {
    /// `0` when certified, `+inf` otherwise.
    pub reach_score: f64,
    /// Best sequence found, always `T_c` long.
    pub controls: ControlSequence,
    /// Smallest distance to the safe set achieved by `controls` (`+inf` if every sample collided).
    pub min_distance: f64,
    /// Step at which `controls` enters the safe set.
    pub reached_at: Option<usize>,
}

impl StateCertificate {
    pub fn is_certified(&self) -> bool {
        self.reach_score == 0.0
    }

    /// Certificate for a state already inside the safe set.
    pub fn trivial(horizon: usize) -> Self {
        Self { reach_score: 0.0, controls: ControlSequence::zeros(horizon), min_distance: 0.0, reached_at: Some(0) }
    }

    /// Certificate for the state reached after executing `steps` controls of
    /// this one: the remaining sequence, zero-padded.
    pub fn advanced(&self, steps: usize) -> Self {
        let horizon = self.controls.horizon();
        Self {
            reach_score: self.reach_score,
            controls: self.controls.suffix_padded(steps, horizon),
            min_distance: self.min_distance,
            reached_at: self.reached_at.map(|t| t.saturating_sub(steps)),
        }
    }
}

/// Per-state certificates for a nominal rollout prefix.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContingencyCertificate {
    pub states: Vec<StateCertificate>,
}

impl ContingencyCertificate {
    pub fn all_certified(&self) -> bool {
        !self.states.is_empty() && self.states.iter().all(StateCertificate::is_certified)
    }

    /// `0` iff every stored state is certified.
    pub fn reach_score(&self) -> f64 {
        self.states.iter().map(|c| c.reach_score).sum()
    }
}

/// Geometry a contingency search runs against.
#[derive(Debug, Clone, Copy)]
pub struct SearchSpace<'a> {
    pub zones: &'a [SafeZone],
    pub collision: &'a CollisionMap,
    pub bounds: ControlBounds,
    pub dt: f64,
}

/// Outcome of replaying one candidate sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Escape {
    /// Minimum distance over the replayed states; `+inf` on collision.
    pub distance: f64,
    pub reached_at: Option<usize>,
}

/// Roll `flat` out from `x0`, stopping at the first state within `eps` of the
/// safe set or at the first colliding state.
pub fn replay_escape(x0: &State, flat: &[f64], space: &SearchSpace, eps: f64) -> Escape {
    let horizon = flat.len() / 2;
    let mut s = *x0;
    let mut best = f64::INFINITY;
    for tau in 0..=horizon {
        if space.collision.collides(&s) {
            return Escape { distance: f64::INFINITY, reached_at: None };
        }
        let d = dist_to_safe(s.position(), space.zones);
        best = best.min(d);
        if d <= eps {
            return Escape { distance: best, reached_at: Some(tau) };
        }
        if tau < horizon {
            let u = crate::sim::Control::new(flat[2 * tau], flat[2 * tau + 1]);
            s = step(&s, u, space.dt);
        }
    }
    Escape { distance: best, reached_at: None }
}

/// Search for an escape from a single state.
pub fn search_state(x: &State, space: &SearchSpace, params: &ContingencyParams, seed: u64) -> StateCertificate {
    let horizon = params.horizon;
    let dim = 2 * horizon;
    let eps = params.eps_safe;

    if !space.collision.collides(x) && dist_to_safe(x.position(), space.zones) <= eps {
        return StateCertificate::trivial(horizon);
    }

    let prior = || {
        let mid = space.bounds.midpoint();
        let mean = (0..dim).map(|j| if j % 2 == 0 { mid.v } else { mid.omega }).collect();
        SamplingDistribution::per_step(mean, params.sigma, params.sigma_floor)
            .expect("contingency sigma validated against floor")
    };

    let gamma = params.cost.gamma();
    let mut best = (f64::INFINITY, vec![0.0; dim], None::<usize>);
    let mut proposal: Option<SamplingDistribution> = None;

    'rounds: for round in 0..params.rounds {
        let mut batch = SampleBatch::empty();
        for k in 0..params.samples {
            let mut rng = substream(seed, &[round as u64, k as u64]);
            let (mut v, e) = match &proposal {
                None => (mppi::draw_uniform(dim, &space.bounds, &mut rng), vec![0.0; dim]),
                Some(p) => mppi::draw_around(p.mean(), p.covariance(), &mut rng),
            };
            mppi::clamp_flat(&mut v, &space.bounds);
            let esc = replay_escape(x, &v, space, eps);
            let cost = match &proposal {
                Some(p) if esc.distance.is_finite() => {
                    esc.distance + mppi::control_cost_term(p.mean(), p.covariance(), &e, &v, gamma)
                }
                _ => esc.distance,
            };
            if esc.distance < best.0 {
                best = (esc.distance, v.clone(), esc.reached_at);
            }
            // the first escape found certifies the state; later samples cannot improve the score
            if esc.distance <= eps {
                break 'rounds;
            }
            batch.push(v, e);
            let last = batch.len() - 1;
            batch.costs[last] = cost;
        }

        if round + 1 < params.rounds {
            match mppi::cem_update(&batch, params.m_elite, params.sigma_floor) {
                Ok(next) => proposal = Some(next),
                Err(Error::AllInfeasible) => {
                    if proposal.is_none() {
                        proposal = Some(prior());
                    }
                }
                Err(e) => panic!("contingency CEM misconfigured: {e}"),
            }
        }
    }

    let (min_distance, flat, reached_at) = best;
    StateCertificate {
        reach_score: if min_distance <= eps { 0.0 } else { f64::INFINITY },
        controls: ControlSequence::from_flat(&flat),
        min_distance,
        reached_at,
    }
}

/// Certify the first `T_s` states of `states`. Returns the certificates and
/// the summed reach score (`0` iff all are certified).
pub fn find_contingency_plan(
    states: &[State],
    space: &SearchSpace,
    params: &ContingencyParams,
    seed: u64,
) -> Result<(ContingencyCertificate, f64)> {
    params.validate()?;
    if params.checked_states > states.len() {
        return Err(invalid(format!(
            "checked_states = {} exceeds rollout length {}",
            params.checked_states,
            states.len()
        )));
    }
    if space.zones.is_empty() {
        return Err(Error::NoSafeZones);
    }
    let certs: Vec<StateCertificate> = (0..params.checked_states)
        .into_par_iter()
        .map(|i| search_state(&states[i], space, params, derive_seed(seed, &[i as u64])))
        .collect();
    let cert = ContingencyCertificate { states: certs };
    let score = cert.reach_score();
    Ok((cert, score))
}

/// Like [`find_contingency_plan`] but stops at the first uncertified state,
/// checking from the end of the prefix backwards. Per-state results are
/// identical to the full search. Returns `None` when some state fails.
pub fn certify_prefix(
    states: &[State],
    space: &SearchSpace,
    params: &ContingencyParams,
    seed: u64,
) -> Option<ContingencyCertificate> {
    let n = params.checked_states.min(states.len());
    let mut certs = vec![None; n];
    for i in (0..n).rev() {
        let c = search_state(&states[i], space, params, derive_seed(seed, &[i as u64]));
        if !c.is_certified() {
            return None;
        }
        certs[i] = Some(c);
    }
    Some(ContingencyCertificate { states: certs.into_iter().map(Option::unwrap).collect() })
}

/// Replay a certificate from `x` against ground truth: true iff it reaches
/// within `eps_safe` of a safe zone within `T_c` steps and every state up to
/// arrival is collision-free.
pub fn verify_certificate(cert: &StateCertificate, x: &State, env: &Environment, params: &ContingencyParams) -> bool {
    if !cert.is_certified() || cert.controls.horizon() != params.horizon || env.safe_zones.is_empty() {
        return false;
    }
    let mut s = *x;
    for tau in 0..=params.horizon {
        if collides(&env.grid, &s, env.robot_radius) {
            return false;
        }
        if dist_to_safe(s.position(), &env.safe_zones) <= params.eps_safe {
            return true;
        }
        if tau < params.horizon {
            s = step(&s, cert.controls.controls()[tau], env.dt);
        }
    }
    false
}

/// Collision map over the agent's knowledge: anything not known free blocks.
pub fn known_space_map(env: &Environment) -> CollisionMap {
    CollisionMap::new(&env.known, env.robot_radius, Blocking::NotFree)
}

/// Collision map over ground truth.
pub fn ground_truth_map(env: &Environment) -> CollisionMap {
    CollisionMap::new(&env.grid, env.robot_radius, Blocking::Occupied)
}

//! Nested MPPI: nominal MPPI whose per-sample cost embeds the contingency
//! reach score of the sample's zero-noise rollout. Ancillary control
//! sequences enter as additional Gaussian mixture modes sharing the running
//! covariance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contingency::{certify_prefix, ContingencyCertificate, ContingencyParams, SearchSpace};
use crate::error::{invalid, Error, Result};
use crate::mppi::{self, CostParams, SamplingDistribution, SampleBatch, DEFAULT_SIGMA_FLOOR};
use crate::rng::{derive_seed, substream};
use crate::sim::{
    known_space_cost, nominal_cost, rollout, Blocking, CollisionMap, ControlBounds, ControlSequence, Environment,
    PositionWeight, State,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NominalParams {
    /// Samples per round (`K`), bias samples included.
    pub samples: usize,
    /// Horizon in steps (`T`).
    pub horizon: usize,
    /// AIS rounds (`L`).
    pub rounds: usize,
    /// Samples drawn around each ancillary sequence (`N_a`).
    pub bias_samples: usize,
    pub cost: CostParams,
    pub position_weight: PositionWeight,
    /// Leading states that must lie in known free space (`T_safe`).
    pub safe_prefix: usize,
    pub elite_fraction: f64,
    pub smoothing: f64,
    pub sigma_floor: f64,
}

impl Default for NominalParams {
    fn default() -> Self {
        Self {
            samples: 128,
            horizon: 20,
            rounds: 2,
            bias_samples: 16,
            cost: CostParams { lambda: 0.1, alpha: 1.0 },
            position_weight: PositionWeight::identity(),
            safe_prefix: 10,
            elite_fraction: 0.1,
            smoothing: 0.0,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
        }
    }
}

impl NominalParams {
    pub fn validate(&self, bias_count: usize) -> Result<()> {
        if self.samples == 0 || self.horizon == 0 || self.rounds == 0 {
            return Err(invalid("samples, horizon and rounds must be at least 1"));
        }
        if self.safe_prefix == 0 || self.safe_prefix > self.horizon + 1 {
            return Err(invalid("safe_prefix must lie in [1, horizon + 1]"));
        }
        if self.bias_samples * bias_count > self.samples {
            return Err(invalid(format!(
                "{bias_count} biases x {} samples exceed the budget of {}",
                self.bias_samples, self.samples
            )));
        }
        if !(0.0..=1.0).contains(&self.smoothing) || !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return Err(invalid("smoothing must lie in [0, 1] and elite_fraction in (0, 1]"));
        }
        self.cost.validate()
    }

    pub fn m_elite(&self) -> usize {
        mppi::elite_count(self.samples, self.elite_fraction)
    }
}

/// Everything a sample evaluation reads, precomputed once per planning cycle.
#[derive(Debug, Clone)]
pub struct PlanningProblem<'a> {
    pub env: &'a Environment,
    pub bounds: ControlBounds,
    /// Blocks anything not known free; used for the safe prefix and contingencies.
    pub known_free: CollisionMap,
    /// Blocks known obstacles only; used beyond the safe prefix.
    pub known_occupied: CollisionMap,
}

impl<'a> PlanningProblem<'a> {
    pub fn new(env: &'a Environment, bounds: ControlBounds) -> Self {
        Self {
            env,
            bounds,
            known_free: CollisionMap::new(&env.known, env.robot_radius, Blocking::NotFree),
            known_occupied: CollisionMap::new(&env.known, env.robot_radius, Blocking::Occupied),
        }
    }

    pub fn search_space(&self) -> SearchSpace<'_> {
        SearchSpace { zones: &self.env.safe_zones, collision: &self.known_free, bounds: self.bounds, dt: self.env.dt }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleEvaluation {
    /// Extended-real cost without the control-cost term.
    pub cost: f64,
    /// Present iff the contingency search ran and certified the whole prefix.
    pub certificate: Option<ContingencyCertificate>,
}

/// Cost of one clamped control sequence: goal cost, known-space and
/// collision penalties and, when `contingency` is set, the reach score of
/// the first `T_s` states. The contingency search is skipped when the cheap
/// terms are already infinite.
pub fn evaluate_sample(
    controls: &ControlSequence,
    x0: &State,
    problem: &PlanningProblem,
    params: &NominalParams,
    contingency: Option<&ContingencyParams>,
    seed: u64,
) -> SampleEvaluation {
    let env = problem.env;
    let states = rollout(x0, controls, env.dt);
    let prefix = params.safe_prefix.min(states.len());

    let collision_free = states[..prefix].iter().all(|s| !problem.known_free.collides(s))
        && states[prefix..].iter().all(|s| !problem.known_occupied.collides(s));
    let mut cost = nominal_cost(&states, env.goal, &params.position_weight)
        + known_space_cost(&states, &env.known, params.safe_prefix)
        + mppi::penalty(collision_free);
    if !cost.is_finite() {
        return SampleEvaluation { cost: f64::INFINITY, certificate: None };
    }
    let Some(cparams) = contingency else {
        return SampleEvaluation { cost, certificate: None };
    };
    let certificate = certify_prefix(&states, &problem.search_space(), cparams, seed);
    cost += mppi::penalty(certificate.is_some());
    SampleEvaluation { cost, certificate }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    /// Updated proposal mean (or the initial sequence if nothing was feasible).
    pub nominal: ControlSequence,
    /// Certificates of the lowest-cost finite sample.
    pub contingencies: Option<ContingencyCertificate>,
    /// The lowest-cost finite sample itself.
    pub best_sample: Option<ControlSequence>,
    pub best_cost: f64,
    /// Finite-cost fraction of the final round.
    pub finite_fraction: f64,
    pub round_finite_fractions: Vec<f64>,
    /// Samples per round drawn around ancillary sequences.
    pub bias_samples_per_round: usize,
}

impl PlanResult {
    pub fn is_feasible(&self) -> bool {
        self.best_cost.is_finite()
    }
}

/// Run `L` rounds of nested MPPI from `x0`.
///
/// Each round draws `N_a` samples around every bias and the rest around the
/// running mean, all with the running covariance. Rounds before the last
/// refit the proposal by CEM; the last round yields the weighted mean. An
/// all-infeasible round leaves the proposal untouched.
#[allow(clippy::too_many_arguments)]
pub fn nested_mppi(
    x0: &State,
    u_init: &ControlSequence,
    biases: &[ControlSequence],
    step_variance: [f64; 2],
    problem: &PlanningProblem,
    params: &NominalParams,
    contingency: Option<&ContingencyParams>,
    seed: u64,
) -> Result<PlanResult> {
    params.validate(biases.len())?;
    if u_init.horizon() != params.horizon {
        return Err(invalid(format!("initial sequence has {} steps, expected {}", u_init.horizon(), params.horizon)));
    }
    if let Some(b) = biases.iter().find(|b| b.horizon() != params.horizon) {
        return Err(invalid(format!("bias has {} steps, expected {}", b.horizon(), params.horizon)));
    }
    if let Some(c) = contingency {
        c.validate()?;
    }
    let bias_flat: Vec<Vec<f64>> = biases.iter().map(|b| b.clamped(&problem.bounds).to_flat()).collect();
    let n_bias = biases.len() * params.bias_samples;
    let gamma = params.cost.gamma();

    let mut proposal = SamplingDistribution::per_step(u_init.to_flat(), step_variance, params.sigma_floor)?;
    let mut best: Option<(f64, Vec<f64>, Option<ContingencyCertificate>)> = None;
    let mut round_finite_fractions = Vec::with_capacity(params.rounds);
    let mut final_mean = None;

    for round in 0..params.rounds {
        let mut batch = SampleBatch::empty();
        for k in 0..params.samples {
            let mut rng = substream(seed, &[round as u64, k as u64]);
            let mode = if k < n_bias { &bias_flat[k / params.bias_samples] } else { &proposal.mean().to_vec() };
            let (v, e) = mppi::draw_around(mode, proposal.covariance(), &mut rng);
            batch.push(v, e);
        }
        batch.clamp(&problem.bounds);

        let evals: Vec<SampleEvaluation> = batch
            .samples
            .par_iter()
            .enumerate()
            .map(|(k, v)| {
                evaluate_sample(
                    &ControlSequence::from_flat(v),
                    x0,
                    problem,
                    params,
                    contingency,
                    derive_seed(seed, &[round as u64, k as u64, 1]),
                )
            })
            .collect();

        for (k, ev) in evals.into_iter().enumerate() {
            let cost = if ev.cost.is_finite() {
                ev.cost
                    + mppi::control_cost_term(proposal.mean(), proposal.covariance(), &batch.noises[k], &batch.samples[k], gamma)
            } else {
                f64::INFINITY
            };
            batch.costs[k] = cost;
            if cost.is_finite() && best.as_ref().is_none_or(|b| cost < b.0) {
                best = Some((cost, batch.samples[k].clone(), ev.certificate));
            }
        }
        round_finite_fractions.push(batch.finite_count() as f64 / batch.len() as f64);

        if round + 1 < params.rounds {
            match mppi::cem_update(&batch, params.m_elite().max(2).min(batch.len()), params.sigma_floor) {
                Ok(next) => proposal = proposal.smoothed_toward(&next, params.smoothing),
                Err(Error::AllInfeasible) | Err(Error::InvalidParameter(_)) => {}
                Err(e) => return Err(e),
            }
        } else {
            final_mean = match mppi::weights(&batch.costs, params.cost.lambda) {
                Ok(w) => Some(mppi::update_mean(&batch, &w)),
                Err(Error::AllInfeasible) => None,
                Err(e) => return Err(e),
            };
        }
    }

    let finite_fraction = *round_finite_fractions.last().unwrap_or(&0.0);
    let Some((best_cost, best_flat, certs)) = best else {
        return Ok(PlanResult {
            nominal: u_init.clone(),
            contingencies: None,
            best_sample: None,
            best_cost: f64::INFINITY,
            finite_fraction,
            round_finite_fractions,
            bias_samples_per_round: n_bias,
        });
    };
    let nominal = ControlSequence::from_flat(&final_mean.unwrap_or_else(|| proposal.mean().to_vec()));
    Ok(PlanResult {
        nominal,
        contingencies: certs,
        best_sample: Some(ControlSequence::from_flat(&best_flat)),
        best_cost,
        finite_fraction,
        round_finite_fractions,
        bias_samples_per_round: n_bias,
    })
}

/// Re-run the full sample evaluation on a sequence (normally the updated
/// mean). The averaged mean is not itself certified by the sampling rounds.
pub fn recertify(
    controls: &ControlSequence,
    x0: &State,
    problem: &PlanningProblem,
    params: &NominalParams,
    contingency: Option<&ContingencyParams>,
    seed: u64,
) -> SampleEvaluation {
    evaluate_sample(&controls.clamped(&problem.bounds), x0, problem, params, contingency, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contingency::verify_certificate;
    use crate::sim::{Cell, Control, OccupancyGrid, SafeZone};

    fn open_env(zones: Vec<SafeZone>, goal: [f64; 2]) -> Environment {
        let mut grid = OccupancyGrid::new(100, 60, 0.1, [0.0, 0.0], Cell::Free);
        grid.fill_border(Cell::Occupied);
        let mut env = Environment::new(grid, zones, State::new(1.0, 3.0, 0.0), goal, 100.0, 0.15, 0.1, 1.5);
        env.reveal(&State::new(1.0, 3.0, 0.0));
        env
    }

    fn cparams() -> ContingencyParams {
        ContingencyParams { samples: 32, horizon: 10, rounds: 2, checked_states: 6, m_elite: 4, ..Default::default() }
    }

    fn nparams() -> NominalParams {
        NominalParams { samples: 48, horizon: 12, rounds: 2, bias_samples: 8, safe_prefix: 6, ..Default::default() }
    }

    #[test]
    fn corridor_with_zones_everywhere_is_finite() {
        let zones = (0..10).map(|i| SafeZone::new(1.0 + i as f64 * 0.8, 3.0, 0.6)).collect();
        let env = open_env(zones, [8.0, 3.0]);
        let problem = PlanningProblem::new(&env, ControlBounds::forward(1.5, 1.5));
        let u = ControlSequence::constant(12, Control::new(1.0, 0.0));
        let ev = evaluate_sample(&u, &env.start, &problem, &nparams(), Some(&cparams()), 5);
        assert!(ev.cost.is_finite());
        let cert = ev.certificate.unwrap();
        assert_eq!(cert.states.len(), 6);
        let xs = rollout(&env.start, &u, env.dt);
        for (c, x) in cert.states.iter().zip(&xs) {
            assert!(verify_certificate(c, x, &env, &cparams()));
        }
    }

    #[test]
    fn leaving_known_space_is_infinite() {
        let mut env = open_env(vec![SafeZone::new(1.0, 3.0, 0.5)], [8.0, 3.0]);
        env.reset_knowledge();
        env.sensing_radius = 0.6;
        env.reveal(&env.start.clone());
        let problem = PlanningProblem::new(&env, ControlBounds::forward(1.5, 1.5));
        let u = ControlSequence::constant(12, Control::new(1.5, 0.0));
        let ev = evaluate_sample(&u, &env.start, &problem, &nparams(), None, 5);
        assert_eq!(ev.cost, f64::INFINITY);
    }

    #[test]
    fn descent_toward_goal_without_biases() {
        let zones = (0..12).map(|i| SafeZone::new(0.5 + i as f64 * 0.8, 3.0, 1.0)).collect();
        let env = open_env(zones, [5.0, 3.0]);
        let problem = PlanningProblem::new(&env, ControlBounds::forward(1.5, 1.5));
        let u0 = ControlSequence::zeros(12);
        let res = nested_mppi(&env.start, &u0, &[], [0.3, 0.3], &problem, &nparams(), Some(&cparams()), 3).unwrap();
        assert!(res.is_feasible());
        assert_eq!(res.bias_samples_per_round, 0);
        let end = *rollout(&env.start, &res.nominal, env.dt).last().unwrap();
        let d0 = 4.0;
        let d1 = ((end.x - 5.0).powi(2) + (end.y - 3.0).powi(2)).sqrt();
        assert!(d1 < d0, "{d1}");
        let cert = res.contingencies.unwrap();
        let xs = rollout(&env.start, res.best_sample.as_ref().unwrap(), env.dt);
        for (c, x) in cert.states.iter().zip(&xs) {
            assert!(verify_certificate(c, x, &env, &cparams()));
        }
    }

    #[test]
    fn infeasible_everywhere_returns_initial_plan() {
        // only zone far out of reach: every sample fails the reach constraint
        let env = open_env(vec![SafeZone::new(9.0, 5.5, 0.3)], [5.0, 3.0]);
        let problem = PlanningProblem::new(&env, ControlBounds::forward(1.5, 1.5));
        let u0 = ControlSequence::constant(12, Control::new(0.5, 0.1));
        let res = nested_mppi(&env.start, &u0, &[], [0.3, 0.3], &problem, &nparams(), Some(&cparams()), 3).unwrap();
        assert_eq!(res.best_cost, f64::INFINITY);
        assert_eq!(res.nominal, u0);
        assert_eq!(res.finite_fraction, 0.0);
        assert!(res.contingencies.is_none());
    }

    #[test]
    fn bias_budget_is_validated_and_counted() {
        let zones = (0..12).map(|i| SafeZone::new(0.5 + i as f64 * 0.8, 3.0, 1.0)).collect();
        let env = open_env(zones, [5.0, 3.0]);
        let problem = PlanningProblem::new(&env, ControlBounds::forward(1.5, 1.5));
        let u0 = ControlSequence::zeros(12);
        let biases = vec![ControlSequence::constant(12, Control::new(1.0, 0.0)); 3];
        let res = nested_mppi(&env.start, &u0, &biases, [0.3, 0.3], &problem, &nparams(), None, 3).unwrap();
        assert_eq!(res.bias_samples_per_round, 24);
        let too_many = vec![ControlSequence::zeros(12); 7];
        assert!(nested_mppi(&env.start, &u0, &too_many, [0.3, 0.3], &problem, &nparams(), None, 3).is_err());
        let wrong_len = vec![ControlSequence::zeros(5)];
        assert!(nested_mppi(&env.start, &u0, &wrong_len, [0.3, 0.3], &problem, &nparams(), None, 3).is_err());
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let zones = (0..12).map(|i| SafeZone::new(0.5 + i as f64 * 0.8, 3.0, 0.5)).collect();
        let env = open_env(zones, [5.0, 3.0]);
        let problem = PlanningProblem::new(&env, ControlBounds::forward(1.5, 1.5));
        let u0 = ControlSequence::zeros(12);
        let biases = vec![ControlSequence::constant(12, Control::new(1.0, 0.0))];
        let a = nested_mppi(&env.start, &u0, &biases, [0.3, 0.3], &problem, &nparams(), Some(&cparams()), 11).unwrap();
        let b = nested_mppi(&env.start, &u0, &biases, [0.3, 0.3], &problem, &nparams(), Some(&cparams()), 11).unwrap();
        assert_eq!(a, b);
        let total: usize = (a.finite_fraction * 48.0).round() as usize;
        assert!((a.finite_fraction - total as f64 / 48.0).abs() < 1e-15);
    }
}

//! Receding-horizon outer loop: seed, plan, execute one control, reveal,
//! shift and repeat, with a backup plan and a retreat rule for cycles where
//! no certified plan is found.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::contingency::{
    ground_truth_map, search_state, verify_certificate, ContingencyCertificate, ContingencyParams, SearchSpace,
    StateCertificate,
};
use crate::error::{invalid, Error, Result};
use crate::frontend::{ancillary_sequences, FrontendParams};
use crate::nested::{nested_mppi, recertify, NominalParams, PlanResult, PlanningProblem};
use crate::rng::derive_seed;
use crate::sim::{step, Control, ControlBounds, ControlSequence, Environment, State};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Nominal cost only, no contingency constraint.
    Mppi,
    /// Nested MPPI, single contingency round, no seeding.
    Base,
    /// Base plus frontend seeding.
    Mpc,
    /// Seeding plus multi-round contingency sampling.
    AisMpc,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Mppi, Variant::Base, Variant::Mpc, Variant::AisMpc];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Mppi => "mppi",
            Variant::Base => "base",
            Variant::Mpc => "mpc",
            Variant::AisMpc => "ais-mpc",
        }
    }

    pub fn uses_contingency(self) -> bool {
        self != Variant::Mppi
    }

    pub fn uses_frontend(self) -> bool {
        matches!(self, Variant::Mpc | Variant::AisMpc)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| invalid(format!("unknown variant '{s}' (expected mppi, base, mpc or ais-mpc)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub nominal: NominalParams,
    pub contingency: ContingencyParams,
    /// `r_max` is recomputed from the environment on every cycle.
    pub frontend: FrontendParams,
    /// Initial per-step proposal variance `[v, omega]`.
    pub step_variance: [f64; 2],
    pub omega_max: f64,
    pub goal_tol: f64,
    pub max_steps: usize,
    /// Consecutive infeasible cycles before retreating (`C`).
    pub retreat_after: usize,
    /// Sample and round multipliers of the safety oracle.
    pub oracle_samples_scale: usize,
    pub oracle_rounds_scale: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            nominal: NominalParams::default(),
            contingency: ContingencyParams::default(),
            frontend: FrontendParams::default(),
            step_variance: [0.3, 0.5],
            omega_max: 1.5,
            goal_tol: 0.3,
            max_steps: 200,
            retreat_after: 5,
            oracle_samples_scale: 10,
            oracle_rounds_scale: 2,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        self.nominal.validate(self.frontend.max_paths)?;
        self.contingency.validate()?;
        self.frontend.validate()?;
        if self.contingency.checked_states != self.nominal.safe_prefix {
            return Err(invalid("contingency checked_states must equal nominal safe_prefix"));
        }
        if self.nominal.safe_prefix < 2 {
            return Err(invalid("safe_prefix must be at least 2 so the next executed state is certified"));
        }
        if !(self.omega_max > 0.0) || !(self.goal_tol >= 0.0) {
            return Err(invalid("omega_max must be positive and goal_tol non-negative"));
        }
        if self.step_variance.iter().any(|v| !(*v >= self.nominal.sigma_floor)) {
            return Err(invalid("step_variance must be at least sigma_floor"));
        }
        if self.oracle_samples_scale == 0 || self.oracle_rounds_scale == 0 {
            return Err(invalid("oracle scales must be positive"));
        }
        Ok(())
    }

    /// Parameters the given variant actually runs with.
    pub fn for_variant(&self, variant: Variant) -> PlannerConfig {
        let mut c = *self;
        match variant {
            Variant::Mppi => c.nominal.safe_prefix = 1,
            Variant::Base | Variant::Mpc => c.contingency.rounds = 1,
            Variant::AisMpc => {}
        }
        c
    }

    pub fn bounds(&self, env: &Environment) -> ControlBounds {
        ControlBounds::forward(env.v_max, self.omega_max)
    }

    pub fn oracle_params(&self) -> ContingencyParams {
        self.contingency.scaled(self.oracle_samples_scale, self.oracle_rounds_scale)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleOutcome {
    pub result: PlanResult,
    /// Sequence to execute and its certificates, if any plan is usable.
    pub plan: Option<(ControlSequence, Option<ContingencyCertificate>)>,
    pub biases: usize,
}

/// One planning cycle from `x`. Runs the frontend for seeding variants,
/// nested MPPI, then re-certifies the updated mean; if that fails the best
/// certified sample is used instead.
pub fn plan_cycle(
    env: &Environment,
    x: &State,
    u_prev: &ControlSequence,
    config: &PlannerConfig,
    variant: Variant,
    seed: u64,
) -> Result<CycleOutcome> {
    let cfg = config.for_variant(variant);
    let bounds = cfg.bounds(env);
    let problem = PlanningProblem::new(env, bounds);
    let biases = if variant.uses_frontend() {
        let mut fp = cfg.frontend;
        fp.r_max = env.v_max * cfg.contingency.checked_states as f64 * env.dt;
        ancillary_sequences(env, x, &fp, &bounds, cfg.nominal.horizon, derive_seed(seed, &[0]))
    } else {
        Vec::new()
    };
    let cparams = variant.uses_contingency().then_some(&cfg.contingency);
    let result = nested_mppi(
        x,
        u_prev,
        &biases,
        cfg.step_variance,
        &problem,
        &cfg.nominal,
        cparams,
        derive_seed(seed, &[1]),
    )?;

    let plan = if result.is_feasible() {
        let mean = result.nominal.clamped(&bounds);
        let ev = recertify(&mean, x, &problem, &cfg.nominal, cparams, derive_seed(seed, &[2]));
        if ev.cost.is_finite() {
            Some((mean, ev.certificate))
        } else {
            result.best_sample.clone().map(|s| (s, result.contingencies.clone()))
        }
    } else {
        None
    };
    Ok(CycleOutcome { result, plan, biases: biases.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepMode {
    /// Executed the first control of a fresh plan.
    Plan,
    /// Followed the last certified plan after an infeasible cycle.
    Backup,
    /// Followed the current state's contingency toward a safe zone.
    Retreat,
    /// Stayed in place.
    Hold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// State before the control is applied.
    pub state: State,
    pub control: Control,
    /// Contingency attached to `state` when it was entered.
    pub certificate: Option<StateCertificate>,
    pub best_cost: f64,
    pub finite_fraction: f64,
    pub mode: StepMode,
    pub warm_start: ControlSequence,
    pub plan: Option<ControlSequence>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub variant: Variant,
    pub steps: Vec<StepRecord>,
    pub final_state: State,
    pub final_certificate: Option<StateCertificate>,
    pub reached_goal: bool,
}

#[derive(Serialize)]
struct TraceLine {
    step: usize,
    x: f64,
    y: f64,
    theta: f64,
    v: f64,
    omega: f64,
    best_cost: Option<f64>,
    finite_fraction: f64,
    certified: bool,
    wall_ms: f64,
}

impl RunTrace {
    /// States the robot moved into, with their attached certificates.
    pub fn executed(&self) -> Vec<(State, Option<&StateCertificate>)> {
        let mut out: Vec<_> = self.steps.iter().skip(1).map(|r| (r.state, r.certificate.as_ref())).collect();
        if !self.steps.is_empty() {
            out.push((self.final_state, self.final_certificate.as_ref()));
        }
        out
    }

    pub fn states(&self) -> Vec<State> {
        let mut out: Vec<State> = self.steps.iter().map(|r| r.state).collect();
        out.push(self.final_state);
        out
    }

    /// One JSON object per step.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.steps {
            let line = TraceLine {
                step: r.step,
                x: r.state.x,
                y: r.state.y,
                theta: r.state.theta,
                v: r.control.v,
                omega: r.control.omega,
                best_cost: r.best_cost.is_finite().then_some(r.best_cost),
                finite_fraction: r.finite_fraction,
                certified: r.certificate.as_ref().is_some_and(StateCertificate::is_certified),
                wall_ms: r.wall_ms,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// True when applying every recorded control reproduces the recorded states.
    pub fn replays_consistently(&self, dt: f64) -> bool {
        let states = self.states();
        self.steps.iter().enumerate().all(|(i, r)| step(&r.state, r.control, dt) == states[i + 1])
    }
}

struct Backup {
    controls: ControlSequence,
    certs: ContingencyCertificate,
    /// Index of the current state along `controls`.
    offset: usize,
}

fn at_goal(x: &State, env: &Environment, tol: f64) -> bool {
    ((x.x - env.goal[0]).powi(2) + (x.y - env.goal[1]).powi(2)).sqrt() <= tol
}

/// Run one closed-loop episode on a copy of `env` whose knowledge is reset to
/// what the start state senses.
pub fn run_episode(env: &Environment, config: &PlannerConfig, variant: Variant, seed: u64) -> Result<RunTrace> {
    config.validate()?;
    let cfg = config.for_variant(variant);
    let mut env = env.clone();
    env.reset_knowledge();
    let mut x = env.start;
    env.reveal(&x);
    let horizon = cfg.nominal.horizon;
    let t_safe = cfg.contingency.checked_states;

    let mut cert = if variant.uses_contingency() {
        let cmap = crate::contingency::known_space_map(&env);
        let space = SearchSpace { zones: &env.safe_zones, collision: &cmap, bounds: cfg.bounds(&env), dt: env.dt };
        Some(search_state(&x, &space, &cfg.contingency, derive_seed(seed, &[u64::MAX]))).filter(|c| c.is_certified())
    } else {
        None
    };
    let mut u_prev = ControlSequence::zeros(horizon);
    let mut backup: Option<Backup> = None;
    let mut streak = 0usize;
    let mut steps = Vec::new();
    let mut reached = at_goal(&x, &env, cfg.goal_tol);

    let mut k = 0;
    while !reached && k < cfg.max_steps {
        let t0 = Instant::now();
        let out = plan_cycle(&env, &x, &u_prev, &cfg, variant, derive_seed(seed, &[k as u64]))?;
        let warm_start = u_prev.clone();

        let (mode, u, next_cert, plan) = match &out.plan {
            Some((plan, certs)) => {
                streak = 0;
                let next = certs.as_ref().map(|c| c.states[1].clone());
                if let Some(c) = certs {
                    backup = Some(Backup { controls: plan.clone(), certs: c.clone(), offset: 1 });
                }
                u_prev = plan.shifted();
                (StepMode::Plan, plan.controls()[0], next, Some(plan.clone()))
            }
            None if !variant.uses_contingency() => {
                u_prev = ControlSequence::zeros(horizon);
                (StepMode::Hold, Control::ZERO, None, None)
            }
            None => {
                streak += 1;
                let usable = backup.as_ref().filter(|b| streak < cfg.retreat_after && b.offset + 1 < t_safe);
                if let Some(b) = usable {
                    let u = b.controls.controls()[b.offset];
                    let next = b.certs.states[b.offset + 1].clone();
                    let offset = b.offset + 1;
                    u_prev = b.controls.suffix_padded(offset, horizon);
                    backup.as_mut().unwrap().offset = offset;
                    (StepMode::Backup, u, Some(next), None)
                } else {
                    backup = None;
                    match &cert {
                        Some(c) if c.reached_at != Some(0) => {
                            u_prev = c.controls.suffix_padded(1, horizon);
                            (StepMode::Retreat, c.controls.controls()[0], Some(c.advanced(1)), None)
                        }
                        Some(c) => {
                            u_prev = ControlSequence::zeros(horizon);
                            (StepMode::Hold, Control::ZERO, Some(c.clone()), None)
                        }
                        None => {
                            u_prev = ControlSequence::zeros(horizon);
                            (StepMode::Hold, Control::ZERO, None, None)
                        }
                    }
                }
            }
        };

        steps.push(StepRecord {
            step: k,
            state: x,
            control: u,
            certificate: cert.clone(),
            best_cost: out.result.best_cost,
            finite_fraction: out.result.finite_fraction,
            mode,
            warm_start,
            plan,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
        x = step(&x, u, env.dt);
        cert = next_cert;
        env.reveal(&x);
        reached = at_goal(&x, &env, cfg.goal_tol);
        k += 1;
    }

    Ok(RunTrace { variant, steps, final_state: x, final_certificate: cert, reached_goal: reached })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyReport {
    pub executed: usize,
    pub unsafe_states: usize,
    /// Executed states carrying a certificate.
    pub certified: usize,
    /// Attached certificates that replay successfully on ground truth.
    pub verified: usize,
}

impl SafetyReport {
    pub fn merge(&mut self, other: &SafetyReport) {
        self.executed += other.executed;
        self.unsafe_states += other.unsafe_states;
        self.certified += other.certified;
        self.verified += other.verified;
    }
}

/// Scores every executed state. A state is safe when its attached
/// certificate replays on the ground truth or, failing that, when a
/// high-budget search on the ground truth finds an escape.
pub fn evaluate_safety(env: &Environment, trace: &RunTrace, config: &PlannerConfig, seed: u64) -> SafetyReport {
    let oracle = config.oracle_params();
    let truth = ground_truth_map(env);
    let bounds = config.bounds(env);
    let space = SearchSpace { zones: &env.safe_zones, collision: &truth, bounds, dt: env.dt };
    let mut report = SafetyReport::default();
    for (i, (x, cert)) in trace.executed().into_iter().enumerate() {
        report.executed += 1;
        let verified = cert.is_some_and(|c| verify_certificate(c, &x, env, &config.contingency));
        if cert.is_some() {
            report.certified += 1;
        }
        if verified {
            report.verified += 1;
            continue;
        }
        if !search_state(&x, &space, &oracle, derive_seed(seed, &[i as u64])).is_certified() {
            report.unsafe_states += 1;
        }
    }
    report
}

use rayon::prelude::*;

use cmppi::pipeline::{evaluate_safety, run_episode, RunTrace, SafetyReport, StepMode, Variant};
use cmppi::rng::derive_seed;
use cmppi::sim::Environment;

use crate::config::BenchConfig;
use crate::envgen::{dead_end_fixture, generate_env};
use crate::metrics::MetricsRecord;
use crate::BenchError;

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub env_index: usize,
    pub variant: Variant,
    pub reached_goal: bool,
    pub steps: usize,
    pub safety: SafetyReport,
    /// Sum of final-round finite fractions over cycles that sampled.
    pub finite_sum: f64,
    pub cycles: usize,
    /// Steps where the planner did not execute a fresh plan.
    pub fallback_steps: usize,
    pub trace: RunTrace,
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutput {
    pub records: Vec<MetricsRecord>,
    pub episodes: Vec<EpisodeOutcome>,
    pub envs: Vec<Environment>,
}

/// The random maps followed by the dead-end fixtures.
pub fn build_suite(config: &BenchConfig, n_envs: usize, seed: u64) -> Result<Vec<Environment>, BenchError> {
    let mut envs = (0..n_envs)
        .map(|i| generate_env(&config.envgen, derive_seed(seed, &[1, i as u64])))
        .collect::<Result<Vec<_>, _>>()?;
    envs.extend((0..config.dead_end_fixtures).map(|i| dead_end_fixture(&config.envgen, i)));
    Ok(envs)
}

pub fn run_one(
    env: &Environment,
    env_index: usize,
    variant: Variant,
    config: &BenchConfig,
    seed: u64,
) -> Result<EpisodeOutcome, BenchError> {
    let vseed = derive_seed(seed, &[2, env_index as u64, variant as u64]);
    let trace = run_episode(env, &config.planner, variant, vseed)?;
    let safety = evaluate_safety(env, &trace, &config.planner, derive_seed(vseed, &[7]));
    let finite_sum = trace.steps.iter().map(|s| s.finite_fraction).sum();
    let fallback_steps = trace.steps.iter().filter(|s| s.mode != StepMode::Plan).count();
    Ok(EpisodeOutcome {
        env_index,
        variant,
        reached_goal: trace.reached_goal,
        steps: trace.steps.len(),
        safety,
        finite_sum,
        cycles: trace.steps.len(),
        fallback_steps,
        trace,
    })
}

/// Aggregate episodes of one variant into a metrics row.
pub fn aggregate(variant: Variant, episodes: &[&EpisodeOutcome]) -> MetricsRecord {
    let n = episodes.len().max(1) as f64;
    let reached: Vec<_> = episodes.iter().filter(|e| e.reached_goal).collect();
    let executed: usize = episodes.iter().map(|e| e.safety.executed).sum();
    let unsafe_states: usize = episodes.iter().map(|e| e.safety.unsafe_states).sum();
    let cycles: usize = episodes.iter().map(|e| e.cycles).sum();
    let finite: f64 = episodes.iter().map(|e| e.finite_sum).sum();
    MetricsRecord {
        variant: variant.name().to_string(),
        reached_goal_rate: 100.0 * reached.len() as f64 / n,
        unsafe_state_rate: if executed == 0 { 0.0 } else { 100.0 * unsafe_states as f64 / executed as f64 },
        avg_steps_to_goal: (!reached.is_empty())
            .then(|| reached.iter().map(|e| e.steps as f64).sum::<f64>() / reached.len() as f64),
        finite_cost_pct: (variant.uses_contingency() && cycles > 0).then(|| 100.0 * finite / cycles as f64),
    }
}

/// Runs every variant on the same suite. Episodes are independent and run
/// on the rayon pool; results do not depend on scheduling.
pub fn run_benchmark(
    variants: &[Variant],
    n_envs: usize,
    seed: u64,
    config: &BenchConfig,
) -> Result<BenchmarkOutput, BenchError> {
    if n_envs == 0 && config.dead_end_fixtures == 0 {
        return Err(BenchError::Config("the suite is empty".into()));
    }
    config.validate()?;
    let envs = build_suite(config, n_envs, seed)?;
    let jobs: Vec<(usize, Variant)> =
        variants.iter().flat_map(|&v| (0..envs.len()).map(move |i| (i, v))).collect();
    let episodes = jobs
        .par_iter()
        .map(|&(i, v)| run_one(&envs[i], i, v, config, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let records = variants
        .iter()
        .map(|&v| {
            let eps: Vec<&EpisodeOutcome> = episodes.iter().filter(|e| e.variant == v).collect();
            aggregate(v, &eps)
        })
        .collect();
    Ok(BenchmarkOutput { records, episodes, envs })
}

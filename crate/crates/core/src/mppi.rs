//! Information-theoretic MPPI building blocks.
//!
//! Control sequences are handled in their flattened form (`[v0, w0, v1, w1, ...]`)
//! with a diagonal Gaussian proposal. Costs are extended reals: a constraint
//! violation is a genuine `+inf`, which receives exactly zero weight.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::Rng;
use crate::sim::ControlBounds;

pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-4;

/// Diagonal Gaussian over flattened control sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingDistribution {
    mean: Vec<f64>,
    covariance: Vec<f64>,
}

impl SamplingDistribution {
    /// Rejects mismatched lengths and any variance below `sigma_floor`.
    pub fn new(mean: Vec<f64>, covariance: Vec<f64>, sigma_floor: f64) -> Result<Self> {
        if !(sigma_floor > 0.0) {
            return Err(invalid("sigma_floor must be positive"));
        }
        if mean.len() != covariance.len() {
            return Err(invalid(format!(
                "mean has {} entries but covariance has {}",
                mean.len(),
                covariance.len()
            )));
        }
        if let Some(j) = covariance.iter().position(|&c| !(c >= sigma_floor) || !c.is_finite()) {
            return Err(invalid(format!(
                "covariance[{j}] = {} is below sigma_floor {sigma_floor}",
                covariance[j]
            )));
        }
        Ok(Self { mean, covariance })
    }

    /// Per-step variance `[var_v, var_omega]` repeated over the horizon.
    pub fn per_step(mean: Vec<f64>, step_variance: [f64; 2], sigma_floor: f64) -> Result<Self> {
        let covariance = (0..mean.len()).map(|j| step_variance[j % 2]).collect();
        Self::new(mean, covariance, sigma_floor)
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn with_mean(&self, mean: Vec<f64>) -> Self {
        assert_eq!(mean.len(), self.mean.len());
        Self { mean, covariance: self.covariance.clone() }
    }

    /// `(1 - keep) * new + keep * self`, coordinate-wise. `keep = 0` returns `new`.
    pub fn smoothed_toward(&self, new: &SamplingDistribution, keep: f64) -> Self {
        if keep == 0.0 {
            return new.clone();
        }
        let mix = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(o, n)| keep * o + (1.0 - keep) * n).collect();
        Self { mean: mix(&self.mean, &new.mean), covariance: mix(&self.covariance, &new.covariance) }
    }
}

/// Inverse temperature and control-cost mixing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub lambda: f64,
    pub alpha: f64,
}

impl CostParams {
    pub fn new(lambda: f64, alpha: f64) -> Result<Self> {
        let p = Self { lambda, alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(invalid("lambda must be positive and finite"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid("alpha must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Control-cost weight `lambda * (1 - alpha)`.
    pub fn gamma(&self) -> f64 {
        self.lambda * (1.0 - self.alpha)
    }
}

/// Perturbed sequences `samples[k]`, their noises and (once evaluated) costs.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub samples: Vec<Vec<f64>>,
    pub noises: Vec<Vec<f64>>,
    pub costs: Vec<f64>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, sample: Vec<f64>, noise: Vec<f64>) {
        self.samples.push(sample);
        self.noises.push(noise);
        self.costs.push(f64::INFINITY);
    }

    pub fn empty() -> Self {
        Self { samples: Vec::new(), noises: Vec::new(), costs: Vec::new() }
    }

    /// Clamp every sample into the control bounds (noises are left untouched).
    pub fn clamp(&mut self, bounds: &ControlBounds) {
        for v in &mut self.samples {
            clamp_flat(v, bounds);
        }
    }

    pub fn finite_count(&self) -> usize {
        self.costs.iter().filter(|c| c.is_finite()).count()
    }

    /// Index of the lowest finite cost, ties broken by index.
    pub fn best(&self) -> Option<usize> {
        elite_indices(&self.costs, 1).first().copied()
    }
}

pub fn clamp_flat(v: &mut [f64], bounds: &ControlBounds) {
    for (j, x) in v.iter_mut().enumerate() {
        let (lo, hi) = bounds.flat(j);
        *x = x.clamp(lo, hi);
    }
}

/// One Gaussian draw around `mean` with diagonal `covariance`: returns `(mean + e, e)`.
pub fn draw_around(mean: &[f64], covariance: &[f64], rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let noise: Vec<f64> = covariance
        .iter()
        .map(|&c| {
            let z: f64 = StandardNormal.sample(rng);
            z * c.sqrt()
        })
        .collect();
    let sample = mean.iter().zip(&noise).map(|(m, e)| m + e).collect();
    (sample, noise)
}

/// `k` i.i.d. Gaussian perturbations of the proposal mean.
pub fn sample(dist: &SamplingDistribution, k: usize, rng: &mut Rng) -> Result<SampleBatch> {
    if k == 0 {
        return Err(invalid("sample count must be at least 1"));
    }
    if dist.covariance.iter().any(|&c| !(c > 0.0)) {
        return Err(invalid("covariance entries must be positive"));
    }
    let mut batch = SampleBatch::empty();
    for _ in 0..k {
        let (v, e) = draw_around(&dist.mean, &dist.covariance, rng);
        batch.push(v, e);
    }
    Ok(batch)
}

/// One sequence drawn coordinate-wise uniformly within the control bounds.
pub fn draw_uniform(dim: usize, bounds: &ControlBounds, rng: &mut Rng) -> Vec<f64> {
    (0..dim)
        .map(|j| {
            let (lo, hi) = bounds.flat(j);
            if hi > lo {
                rng.gen_range(lo..=hi)
            } else {
                lo
            }
        })
        .collect()
}

/// Normalised exponential weights with the minimum-cost baseline shift.
/// Infinite costs receive weight zero.
pub fn weights(costs: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let rho = costs
        .iter()
        .copied()
        .filter(|c| c.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !rho.is_finite() {
        return Err(Error::AllInfeasible);
    }
    let mut w: Vec<f64> = costs
        .iter()
        .map(|&s| if s.is_finite() { (-(s - rho) / lambda).exp() } else { 0.0 })
        .collect();
    let eta: f64 = w.iter().sum();
    for x in &mut w {
        *x /= eta;
    }
    Ok(w)
}

/// `gamma * U'^T Sigma^-1 (E_k + U' - U_k)` for a diagonal `Sigma`.
pub fn control_cost_term(u_prev: &[f64], sigma: &[f64], noise: &[f64], u_sampled: &[f64], gamma: f64) -> f64 {
    if gamma == 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for j in 0..u_prev.len() {
        acc += u_prev[j] / sigma[j] * (noise[j] + u_prev[j] - u_sampled[j]);
    }
    gamma * acc
}

/// Weighted average of the batch samples.
pub fn update_mean(batch: &SampleBatch, weights: &[f64]) -> Vec<f64> {
    assert_eq!(batch.len(), weights.len());
    let dim = batch.samples.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; dim];
    for (v, &w) in batch.samples.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (m, x) in mean.iter_mut().zip(v) {
            *m += w * x;
        }
    }
    mean
}

/// Hard-constraint penalty: `0` if satisfied, `+inf` otherwise.
#[inline]
pub fn penalty(satisfied: bool) -> f64 {
    if satisfied {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Indices of the `m` lowest finite costs, ordered by `(cost, index)`.
pub fn elite_indices(costs: &[f64], m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..costs.len()).filter(|&k| costs[k].is_finite()).collect();
    idx.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(a.cmp(&b)));
    idx.truncate(m);
    idx
}

/// Cross-entropy refit: mean and per-coordinate variance of the `m_elite`
/// lowest-cost samples, variance floored at `sigma_floor`. Falls back to all
/// finite samples when fewer than `m_elite` are finite.
pub fn cem_update(batch: &SampleBatch, m_elite: usize, sigma_floor: f64) -> Result<SamplingDistribution> {
    if m_elite < 2 || m_elite > batch.len() {
        return Err(invalid(format!("m_elite = {m_elite} must lie in [2, {}]", batch.len())));
    }
    let elite = elite_indices(&batch.costs, m_elite);
    if elite.len() < 2 {
        return Err(Error::AllInfeasible);
    }
    let n = elite.len() as f64;
    let dim = batch.samples[elite[0]].len();
    let mut mean = vec![0.0; dim];
    for &k in &elite {
        for (m, x) in mean.iter_mut().zip(&batch.samples[k]) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; dim];
    for &k in &elite {
        for ((s, x), m) in var.iter_mut().zip(&batch.samples[k]).zip(&mean) {
            *s += (x - m) * (x - m);
        }
    }
    for s in &mut var {
        *s = (*s / n).max(sigma_floor);
    }
    SamplingDistribution::new(mean, var, sigma_floor)
}

/// Settings for [`optimize`].
#[derive(Debug, Clone, Copy)]
pub struct AisConfig {
    pub samples: usize,
    pub rounds: usize,
    pub elite_fraction: f64,
    pub sigma_floor: f64,
    /// Fraction of the previous proposal kept at each CEM refit (0 = none).
    pub smoothing: f64,
    pub cost: CostParams,
}

impl AisConfig {
    pub fn m_elite(&self) -> usize {
        elite_count(self.samples, self.elite_fraction)
    }
}

/// `ceil(fraction * k)` clipped to `[2, k]`.
pub fn elite_count(k: usize, fraction: f64) -> usize {
    ((fraction * k as f64).ceil() as usize).clamp(2.min(k), k)
}

#[derive(Debug, Clone)]
pub struct AisOutcome {
    pub mean: Vec<f64>,
    pub proposal: SamplingDistribution,
    pub best_cost: f64,
    pub finite_fraction: f64,
}

/// Plain MPPI with cross-entropy adaptive importance sampling between rounds:
/// every round samples the running proposal; all but the last refit it by
/// CEM; the last round produces the exponentially weighted mean. Costs are
/// evaluated on bound-clamped samples. When a round is entirely infeasible
/// the proposal (and, in the last round, the mean) is left unchanged.
pub fn optimize<F>(
    initial: &SamplingDistribution,
    bounds: &ControlBounds,
    config: &AisConfig,
    rng: &mut Rng,
    cost: F,
) -> Result<AisOutcome>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    config.cost.validate()?;
    if config.rounds == 0 {
        return Err(invalid("at least one round is required"));
    }
    let mut proposal = initial.clone();
    let mut mean = initial.mean.clone();
    let mut best_cost = f64::INFINITY;
    let mut finite_fraction = 0.0;
    let gamma = config.cost.gamma();
    for round in 0..config.rounds {
        let mut batch = sample(&proposal, config.samples, rng)?;
        batch.clamp(bounds);
        let running = proposal.mean.clone();
        batch.costs = batch
            .samples
            .par_iter()
            .zip(batch.noises.par_iter())
            .map(|(v, e)| cost(v) + control_cost_term(&running, &proposal.covariance, e, v, gamma))
            .collect();
        best_cost = batch.costs.iter().copied().fold(best_cost, f64::min);
        finite_fraction = batch.finite_count() as f64 / batch.len() as f64;
        if round + 1 < config.rounds {
            match cem_update(&batch, config.m_elite(), config.sigma_floor) {
                Ok(next) => proposal = proposal.smoothed_toward(&next, config.smoothing),
                Err(Error::AllInfeasible) => {}
                Err(e) => return Err(e),
            }
        } else {
            match weights(&batch.costs, config.cost.lambda) {
                Ok(w) => mean = update_mean(&batch, &w),
                Err(Error::AllInfeasible) => mean = proposal.mean.clone(),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(AisOutcome { mean, proposal, best_cost, finite_fraction })
}

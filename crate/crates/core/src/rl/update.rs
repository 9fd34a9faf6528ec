use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::env::{RolloutBatch, SampledDataEnv, StepRecord};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Vector};
use crate::policy::ControllerParams;

const CHUNK: usize = 64;

/// Adaptive-moment gradient ascent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, dim: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    /// Move `theta` along `grad` (ascent).
    pub fn step(&mut self, theta: &mut Vector, grad: &Vector) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - self.beta2.powi(self.t.min(i32::MAX as u64) as i32);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            theta[i] += self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// `r − mean(r)`, with the mean taken about the first reward so that equal
/// rewards give exactly zero.
pub fn centered_advantages(rewards: &[f64]) -> Vec<f64> {
    let Some(&r0) = rewards.first() else { return Vec::new() };
    let shift = rewards.iter().map(|r| r - r0).sum::<f64>() / rewards.len() as f64;
    rewards.iter().map(|r| (r - r0) - shift).collect()
}

/// Centered advantages divided by their standard deviation.
pub fn standardized_advantages(rewards: &[f64]) -> Vec<f64> {
    let adv = centered_advantages(rewards);
    let n = adv.len() as f64;
    let std = (adv.iter().map(|a| a * a).sum::<f64>() / n).sqrt();
    if std > 0.0 {
        adv.iter().map(|a| a / (std + 1e-8)).collect()
    } else {
        adv
    }
}

fn check_sigma(sigma: &Vector) -> Result<Vector> {
    if sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::DegeneratePolicy);
    }
    Ok(sigma.map(|s| 1.0 / (s * s)))
}

/// Mean gradient and per-component standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub mean: Vector,
    pub stderr: Vector,
}

/// Score-function estimate of the gradient of expected reward,
/// `mean_k A_k (∂û_θ/∂θ)ᵀ Σ⁻¹ (u_k − û_θ(x_k, v_k))`.
pub fn reinforce_gradient(
    env: &SampledDataEnv,
    batch: &RolloutBatch,
    theta: &ControllerParams,
    advantages: &[f64],
) -> Result<GradientEstimate> {
    let inv_var = check_sigma(&env.sigma_w)?;
    let steps: Vec<&StepRecord> = batch.steps().collect();
    if steps.len() != advantages.len() {
        return Err(Error::Dimension("one advantage per step required".into()));
    }
    if steps.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let k = theta.len();
    let parts: Vec<Result<(Vector, Vector)>> = (0..steps.len())
        .step_by(CHUNK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let mut sum = Vector::zeros(k);
            let mut sq = Vector::zeros(k);
            for i in start..(start + CHUNK).min(steps.len()) {
                let s = steps[i];
                let mean = env.controller.control(theta, &s.x, &s.v)?;
                let cot = (&s.u - mean).component_mul(&inv_var) * advantages[i];
                let g = env.controller.control_vjp(theta, &s.x, &s.v, &cot)?;
                sq += g.component_mul(&g);
                sum += g;
            }
            Ok((sum, sq))
        })
        .collect();
    let mut sum = Vector::zeros(k);
    let mut sq = Vector::zeros(k);
    for p in parts {
        let (a, b) = p?;
        sum += a;
        sq += b;
    }
    let n = steps.len() as f64;
    let mean = sum / n;
    let stderr = if steps.len() > 1 {
        Vector::from_fn(k, |i, _| ((sq[i] / n - mean[i] * mean[i]).max(0.0) * n / (n - 1.0) / n).sqrt())
    } else {
        Vector::zeros(k)
    };
    Ok(GradientEstimate { mean, stderr })
}

/// One REINFORCE step with the average-reward baseline.
pub fn reinforce_update(
    env: &SampledDataEnv,
    batch: &RolloutBatch,
    theta: &ControllerParams,
    adam: &mut Adam,
) -> Result<ControllerParams> {
    let rewards: Vec<f64> = batch.steps().map(StepRecord::reward).collect();
    let adv = centered_advantages(&rewards);
    let grad = reinforce_gradient(env, batch, theta, &adv)?.mean;
    let mut flat = theta.to_flat();
    adam.step(&mut flat, &grad);
    Ok(ControllerParams::from_flat(theta.theta1.len(), &flat))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoSettings {
    pub clip_epsilon: f64,
    pub inner_epochs: usize,
    pub minibatch: usize,
}

impl Default for PpoSettings {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            inner_epochs: 4,
            minibatch: 256,
        }
    }
}

fn log_ratio(u: &Vector, new_mean: &Vector, old_mean: &Vector, inv_var: &Vector) -> f64 {
    let mut acc = 0.0;
    for i in 0..u.len() {
        let a = u[i] - new_mean[i];
        let b = u[i] - old_mean[i];
        acc += -0.5 * (a * a - b * b) * inv_var[i];
    }
    acc
}

/// Clipped surrogate `mean_k min(r_k Â_k, clip(r_k, 1−ε, 1+ε) Â_k)` and its
/// gradient at `theta`, over the given steps.
pub fn surrogate(
    env: &SampledDataEnv,
    steps: &[&StepRecord],
    advantages: &[f64],
    theta: &ControllerParams,
    clip_epsilon: f64,
) -> Result<(f64, Vector)> {
    let inv_var = check_sigma(&env.sigma_w)?;
    let k = theta.len();
    let parts: Vec<Result<(f64, Vector)>> = (0..steps.len())
        .step_by(CHUNK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let mut value = 0.0;
            let mut grad = Vector::zeros(k);
            for i in start..(start + CHUNK).min(steps.len()) {
                let s = steps[i];
                let a = advantages[i];
                let mean = env.controller.control(theta, &s.x, &s.v)?;
                let ratio = log_ratio(&s.u, &mean, &s.u_mean, &inv_var).exp();
                let clipped = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon);
                value += (ratio * a).min(clipped * a);
                let active = if a >= 0.0 { ratio < 1.0 + clip_epsilon } else { ratio > 1.0 - clip_epsilon };
                if active {
                    let cot = (&s.u - mean).component_mul(&inv_var) * (ratio * a);
                    grad += env.controller.control_vjp(theta, &s.x, &s.v, &cot)?;
                }
            }
            Ok((value, grad))
        })
        .collect();
    let mut value = 0.0;
    let mut grad = Vector::zeros(k);
    for p in parts {
        let (v, g) = p?;
        value += v;
        grad += g;
    }
    let n = steps.len().max(1) as f64;
    Ok((value / n, grad / n))
}

/// PPO: `inner_epochs` shuffled passes of minibatch ascent on the clipped
/// surrogate, advantages standardized over the whole batch.
pub fn ppo_update(
    env: &SampledDataEnv,
    batch: &RolloutBatch,
    theta: &ControllerParams,
    adam: &mut Adam,
    settings: &PpoSettings,
    rng: &mut Rng,
) -> Result<ControllerParams> {
    check_sigma(&env.sigma_w)?;
    let steps: Vec<&StepRecord> = batch.steps().collect();
    let rewards: Vec<f64> = steps.iter().map(|s| s.reward()).collect();
    let adv = standardized_advantages(&rewards);
    let k1 = theta.theta1.len();
    let mut flat = theta.to_flat();
    let mut current = theta.clone();
    let mut order: Vec<usize> = (0..steps.len()).collect();
    for _ in 0..settings.inner_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(settings.minibatch.max(1)) {
            let mb: Vec<&StepRecord> = chunk.iter().map(|&i| steps[i]).collect();
            let mb_adv: Vec<f64> = chunk.iter().map(|&i| adv[i]).collect();
            let (_, grad) = surrogate(env, &mb, &mb_adv, &current, settings.clip_epsilon)?;
            adam.step(&mut flat, &grad);
            current = ControllerParams::from_flat(k1, &flat);
        }
    }
    Ok(current)
}

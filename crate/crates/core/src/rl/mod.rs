//! Sampled-data environment and the policy-gradient trainers.

mod env;
mod update;

pub use env::{Episode, RolloutBatch, SampledDataEnv, StepRecord, STATE_NORM_CAP};
pub use update::{
    centered_advantages, ppo_update, reinforce_gradient, reinforce_update, standardized_advantages, surrogate, Adam,
    GradientEstimate, PpoSettings,
};

use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::policy::{ControllerParams, ParamBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Reinforce,
    Ppo,
}

/// Step-size schedule over the epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Linear decay from the base rate to zero at the last epoch.
    Linear,
}

impl LrSchedule {
    pub fn rate(&self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Linear => base * (1.0 - epoch as f64 / epochs.max(1) as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub epochs: usize,
    pub rollouts_per_epoch: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    #[serde(default)]
    pub ppo: PpoSettings,
    #[serde(default)]
    pub param_box: Option<ParamBox>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rollouts_per_epoch == 0 {
            return Err(Error::Config("rollouts_per_epoch must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.algorithm == Algorithm::Ppo {
            let eps = self.ppo.clip_epsilon;
            if !(eps > 0.0 && eps < 1.0) {
                return Err(Error::Config(format!("clip_epsilon must lie in (0, 1), got {eps}")));
            }
            if self.ppo.inner_epochs == 0 || self.ppo.minibatch == 0 {
                return Err(Error::Config("ppo inner_epochs and minibatch must be positive".into()));
            }
        }
        if let Some(b) = self.param_box {
            if !(b.lower < b.upper) {
                return Err(Error::Config("param_box needs lower < upper".into()));
            }
        }
        Ok(())
    }
}

/// Per-epoch summary of the per-step rewards `−ℓ̄` collected that epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub steps: usize,
    pub truncated: usize,
    pub wall_time_s: f64,
}

impl EpochStats {
    fn from_batch(epoch: usize, batch: &RolloutBatch, wall_time_s: f64) -> Self {
        let rewards: Vec<f64> = batch.steps().map(StepRecord::reward).collect();
        let n = rewards.len().max(1) as f64;
        let mean = rewards.iter().sum::<f64>() / n;
        let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        Self {
            epoch,
            mean_reward: mean,
            std_reward: var.sqrt(),
            steps: rewards.len(),
            truncated: batch.truncated(),
            wall_time_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub theta: ControllerParams,
    pub curve: Vec<EpochStats>,
}

/// Mean of the last `window` epochs' mean rewards.
pub fn final_mean_reward(curve: &[EpochStats], window: usize) -> f64 {
    let tail = &curve[curve.len().saturating_sub(window.max(1))..];
    tail.iter().map(|s| s.mean_reward).sum::<f64>() / tail.len().max(1) as f64
}

/// Options that affect what is reported, not what is computed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainHooks {
    /// Report zero wall time so that outputs are reproducible byte for byte.
    pub suppress_timing: bool,
}

/// Epoch loop. `on_epoch` sees every epoch's statistics and the parameters
/// after that epoch's update; returning an error stops training. Errors are
/// raised only after all completed epochs have been reported.
pub fn train<F>(
    env: &SampledDataEnv,
    config: &TrainConfig,
    initial: ControllerParams,
    hooks: TrainHooks,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochStats, &ControllerParams) -> Result<()>,
{
    config.validate()?;
    let root = Rng::new(config.seed);
    let mut theta = initial;
    let mut adam = Adam::new(config.learning_rate, theta.len());
    let mut curve = Vec::with_capacity(config.epochs);
    let start = Instant::now();
    for epoch in 0..config.epochs {
        let epoch_rng = root.derive(epoch as u64);
        adam.lr = config.lr_schedule.rate(config.learning_rate, epoch, config.epochs);
        let batch = env.collect(&theta, config.rollouts_per_epoch, &epoch_rng)?;
        if batch.is_empty() {
            return Err(Error::NonFinite(format!("epoch {epoch} produced no transitions")));
        }
        theta = match config.algorithm {
            Algorithm::Reinforce => reinforce_update(env, &batch, &theta, &mut adam)?,
            Algorithm::Ppo => {
                let mut shuffle = epoch_rng.derive(u64::MAX);
                ppo_update(env, &batch, &theta, &mut adam, &config.ppo, &mut shuffle)?
            }
        };
        if let Some(b) = config.param_box {
            b.project(&mut theta);
        }
        if !theta.is_finite() {
            return Err(Error::NonFinite(format!("parameters became non-finite at epoch {epoch}")));
        }
        let wall = if hooks.suppress_timing { 0.0 } else { start.elapsed().as_secs_f64() };
        let stats = EpochStats::from_batch(epoch, &batch, wall);
        on_epoch(&stats, &theta)?;
        curve.push(stats);
    }
    Ok(TrainOutcome { theta, curve })
}

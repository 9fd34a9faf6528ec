//! Experiment configuration files.
//!
//! A config is a TOML document (conventionally with a `.cfg` extension):
//! top-level keys plus `[system]`, `[nominal]`, `[parameterization]` and the
//! optional `[train]`, `[tracking]` and `[convexity]` sections. Tagged
//! sections pick their variant with a `kind` key. See `configs/` for
//! complete examples.

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::dynamics::{
    ControlAffineSystem, DoublePendulum, DoublePendulumParams, Quadrotor14, QuadrotorParams, ScalarAffine,
    ScaleParameters,
};
use crate::numerics::{Rng, Vector};
use crate::objective::DEFAULT_SAMPLES;
use crate::policy::{
    make_rbf, Basis, LearnedController, LinearParameterization, MlpParameterization, NominalController, ParamBox,
    Parameterization,
};
use crate::rl::{Algorithm, LrSchedule, PpoSettings, SampledDataEnv, TrainConfig};
use crate::tracking::TrajectoryKind;

/// Independent random streams carved out of the experiment seed. Training
/// epochs use the low stream ids, so these sit far above them.
pub const STREAM_BASIS: u64 = 1 << 48;
pub const STREAM_INIT: u64 = (1 << 48) + 1;
pub const STREAM_GRAM: u64 = (1 << 48) + 2;
pub const STREAM_EVAL: u64 = (1 << 48) + 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub system: SystemKind,
    pub nominal: NominalKind,
    pub parameterization: ParamKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracking: Option<TrackingSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convexity: Option<ConvexitySection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemKind {
    DoublePendulum {
        #[serde(default)]
        params: DoublePendulumParams,
    },
    #[serde(rename = "quadrotor_14d")]
    Quadrotor {
        #[serde(default)]
        params: QuadrotorParams,
    },
    /// `ẏ = gain·u + offset` on `[−1, 1]`.
    ScalarAffine { gain: f64, offset: f64 },
}

impl SystemKind {
    pub fn name(&self) -> &'static str {
        match self {
            SystemKind::DoublePendulum { .. } => "double_pendulum",
            SystemKind::Quadrotor { .. } => "quadrotor_14d",
            SystemKind::ScalarAffine { .. } => "scalar_affine",
        }
    }

    /// The system with every physical parameter multiplied by `factor`.
    pub fn build_scaled(&self, factor: f64) -> crate::Result<Arc<dyn ControlAffineSystem>> {
        Ok(match self {
            SystemKind::DoublePendulum { params } => Arc::new(DoublePendulum::new(params.scaled(factor)?)?),
            SystemKind::Quadrotor { params } => Arc::new(Quadrotor14::new(params.scaled(factor)?)?),
            SystemKind::ScalarAffine { gain, offset } => Arc::new(ScalarAffine::new(gain * factor, offset * factor)?),
        })
    }

    pub fn build(&self) -> crate::Result<Arc<dyn ControlAffineSystem>> {
        self.build_scaled(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NominalKind {
    /// Model-based controller from the plant with scaled parameters.
    Scaled { factor: f64 },
    /// No model: `β_m = 0`, `α_m = I`.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamKind {
    /// Gaussian bumps centered uniformly at random over the domain.
    Rbf {
        count: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        width: Option<f64>,
        #[serde(default)]
        normalized: bool,
        /// Append a copy of this feature, making the basis dependent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        duplicate: Option<usize>,
    },
    Mlp {
        hidden: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        output_scale: Option<Vec<f64>>,
    },
    Constant,
}

/// Exploration noise: one standard deviation for every input, or one each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Noise {
    Uniform(f64),
    PerInput(Vec<f64>),
}

impl Noise {
    pub fn to_vector(&self, inputs: usize) -> anyhow::Result<Vector> {
        match self {
            Noise::Uniform(s) => Ok(Vector::from_element(inputs, *s)),
            Noise::PerInput(v) if v.len() == inputs => Ok(Vector::from_vec(v.clone())),
            Noise::PerInput(v) => bail!("sigma_w has {} entries, the system has {inputs} inputs", v.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub algorithm: Algorithm,
    pub epochs: usize,
    pub rollouts_per_epoch: usize,
    pub dt: f64,
    pub horizon: usize,
    pub sigma_w: Noise,
    pub learning_rate: f64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    #[serde(default)]
    pub ppo: PpoSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_box: Option<ParamBox>,
    /// Write an intermediate checkpoint every this many epochs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingSection {
    #[serde(default)]
    pub trajectory: TrajectoryKind,
    /// Initial offset of every output from the reference.
    #[serde(default = "default_offset")]
    pub offset: f64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_tracking_dt")]
    pub dt: f64,
}

impl Default for TrackingSection {
    fn default() -> Self {
        Self {
            trajectory: TrajectoryKind::default(),
            offset: default_offset(),
            duration: default_duration(),
            dt: default_tracking_dt(),
        }
    }
}

fn default_offset() -> f64 {
    0.3
}
fn default_duration() -> f64 {
    10.0
}
fn default_tracking_dt() -> f64 {
    0.005
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvexitySection {
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Independent samples for reporting `L(0)` and `L(θ*)`.
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
}

impl Default for ConvexitySection {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            eval_samples: default_eval_samples(),
        }
    }
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}
fn default_eval_samples() -> usize {
    20_000
}

/// 64-bit FNV-1a, used to derive a seed from the config text.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Everything a command needs, built from a config and a resolved seed.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub plant: Arc<dyn ControlAffineSystem>,
    pub controller: LearnedController,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn to_text(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if let NominalKind::Scaled { factor } = self.nominal {
            if !(factor > 0.0) || !factor.is_finite() {
                bail!("nominal.factor must be positive, got {factor}");
            }
        }
        match &self.parameterization {
            ParamKind::Rbf { count, width, duplicate, .. } => {
                if *count == 0 {
                    bail!("parameterization.count must be positive");
                }
                if let Some(w) = width {
                    if !(*w > 0.0) {
                        bail!("parameterization.width must be positive, got {w}");
                    }
                }
                if let Some(d) = duplicate {
                    if d >= count {
                        bail!("parameterization.duplicate = {d} is not below count = {count}");
                    }
                }
            }
            ParamKind::Mlp { hidden, .. } if hidden.is_empty() || hidden.contains(&0) => {
                bail!("parameterization.hidden needs positive widths, got {hidden:?}")
            }
            _ => {}
        }
        if let Some(t) = &self.train {
            if !(t.dt > 0.0) || t.horizon == 0 {
                bail!("train.dt and train.horizon must be positive");
            }
            self.train_config(0).map(|c| c.validate())??;
        }
        if let Some(t) = &self.tracking {
            if !(t.duration > 0.0) || !(t.dt > 0.0) {
                bail!("tracking.duration and tracking.dt must be positive");
            }
        }
        Ok(())
    }

    /// `--seed`, else the config's `seed`, else a hash of `text`.
    pub fn resolve_seed(&self, cli: Option<u64>, text: &str) -> u64 {
        cli.or(self.seed).unwrap_or_else(|| fnv1a(text.as_bytes()))
    }

    pub fn train_config(&self, seed: u64) -> anyhow::Result<TrainConfig> {
        let t = self.train.as_ref().context("config has no [train] section")?;
        Ok(TrainConfig {
            algorithm: t.algorithm,
            epochs: t.epochs,
            rollouts_per_epoch: t.rollouts_per_epoch,
            learning_rate: t.learning_rate,
            lr_schedule: t.lr_schedule,
            ppo: t.ppo,
            param_box: t.param_box,
            seed,
        })
    }

    pub fn build_parameterization(&self, plant: &dyn ControlAffineSystem, seed: u64) -> anyhow::Result<Parameterization> {
        let mut rng = Rng::new(seed).derive(STREAM_BASIS);
        Ok(match &self.parameterization {
            ParamKind::Rbf {
                count,
                width,
                normalized,
                duplicate,
            } => {
                let mut p = make_rbf(*count, plant, *width, *normalized, &mut rng)?;
                if let Some(d) = duplicate {
                    p = p.with_duplicated_feature(*d)?;
                }
                Parameterization::Linear(p)
            }
            ParamKind::Mlp { hidden, output_scale } => {
                Parameterization::Mlp(MlpParameterization::new(plant, hidden, output_scale.clone())?)
            }
            ParamKind::Constant => Parameterization::Linear(LinearParameterization::new(
                plant.input_dim(),
                plant.angle_indices().to_vec(),
                Basis::Constant,
            )?),
        })
    }

    pub fn nominal(&self) -> anyhow::Result<NominalController> {
        Ok(match self.nominal {
            NominalKind::Scaled { factor } => NominalController::Model(self.system.build_scaled(factor)?),
            NominalKind::Zero => NominalController::Zero {
                inputs: self.system.build()?.input_dim(),
            },
        })
    }

    pub fn experiment(&self, seed: u64) -> anyhow::Result<Experiment> {
        let plant = self.system.build()?;
        let param = self.build_parameterization(plant.as_ref(), seed)?;
        self.experiment_with(seed, param)
    }

    /// As [`ExperimentConfig::experiment`] with a given parameterization,
    /// e.g. one restored from a checkpoint.
    pub fn experiment_with(&self, seed: u64, param: Parameterization) -> anyhow::Result<Experiment> {
        let plant = self.system.build()?;
        if param.inputs() != plant.input_dim() {
            bail!(
                "parameterization has {} inputs but system {} has {}",
                param.inputs(),
                self.system.name(),
                plant.input_dim()
            );
        }
        let controller = LearnedController::new(self.nominal()?, param)?;
        Ok(Experiment {
            config: self.clone(),
            seed,
            plant,
            controller,
        })
    }
}

impl Experiment {
    pub fn env(&self) -> anyhow::Result<SampledDataEnv> {
        let t = self.config.train.as_ref().context("config has no [train] section")?;
        let sigma = t.sigma_w.to_vector(self.plant.input_dim())?;
        Ok(SampledDataEnv::new(self.plant.clone(), self.controller.clone(), t.dt, t.horizon, sigma)?)
    }
}

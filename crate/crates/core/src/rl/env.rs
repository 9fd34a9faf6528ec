use rayon::prelude::*;
use std::sync::Arc;

use crate::dynamics::{sample_state, ControlAffineSystem};
use crate::error::{Error, Result};
use crate::fbl::{reference_model, ReferenceModel};
use crate::numerics::{integrate_rk4, is_finite, substeps_for, Rng, Vector, DEFAULT_INNER_STEP};
use crate::policy::{ControllerParams, LearnedController};

/// States beyond this norm end the episode as diverged.
pub const STATE_NORM_CAP: f64 = 1e6;

/// One logged transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub x: Vector,
    pub xi: Vector,
    pub v: Vector,
    /// Mean of the behaviour policy, `û_θ(x, v)`.
    pub u_mean: Vector,
    pub w: Vector,
    pub u: Vector,
    pub xi_next: Vector,
    pub lbar: f64,
}

impl StepRecord {
    pub fn reward(&self) -> f64 {
        -self.lbar
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub steps: Vec<StepRecord>,
    /// Set when integration diverged or the nominal model hit a singularity
    /// before the horizon was reached.
    pub truncated: bool,
    /// Seed of the generator the episode was drawn from.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutBatch {
    pub episodes: Vec<Episode>,
}

impl RolloutBatch {
    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.episodes.iter().flat_map(|e| e.steps.iter())
    }

    pub fn len(&self) -> usize {
        self.episodes.iter().map(|e| e.steps.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn truncated(&self) -> usize {
        self.episodes.iter().filter(|e| e.truncated).count()
    }
}

/// The plant sampled at `dt` under zero-order hold, driven by a noisy
/// learned controller, scored against the discretized reference model.
#[derive(Clone)]
pub struct SampledDataEnv {
    pub plant: Arc<dyn ControlAffineSystem>,
    pub controller: LearnedController,
    pub reference: ReferenceModel,
    pub horizon: usize,
    pub sigma_w: Vector,
    substeps: usize,
}

impl std::fmt::Debug for SampledDataEnv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SampledDataEnv")
            .field("plant", &self.plant.name())
            .field("dt", &self.reference.dt)
            .field("horizon", &self.horizon)
            .field("sigma_w", &self.sigma_w.as_slice())
            .finish()
    }
}

impl SampledDataEnv {
    pub fn new(
        plant: Arc<dyn ControlAffineSystem>,
        controller: LearnedController,
        dt: f64,
        horizon: usize,
        sigma_w: Vector,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least one step".into()));
        }
        let q = plant.input_dim();
        if controller.inputs() != q || sigma_w.len() != q {
            return Err(Error::Dimension(format!(
                "plant has {q} inputs, controller {}, noise scale {}",
                controller.inputs(),
                sigma_w.len()
            )));
        }
        if sigma_w.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParameter("noise scale must be finite and nonnegative".into()));
        }
        let reference = reference_model(plant.relative_degree(), dt)?;
        Ok(Self {
            plant,
            controller,
            reference,
            horizon,
            sigma_w,
            substeps: substeps_for(dt, DEFAULT_INNER_STEP),
        })
    }

    pub fn dt(&self) -> f64 {
        self.reference.dt
    }

    pub fn inputs(&self) -> usize {
        self.sigma_w.len()
    }

    /// `‖B̄v − (ξ_{k+1} − Āξ_k)‖²`.
    pub fn lbar(&self, xi: &Vector, xi_next: &Vector, v: &Vector) -> f64 {
        self.reference.one_step_residual(xi, xi_next, v).norm_squared()
    }

    /// One episode from `x₀ ∼ X`.
    pub fn rollout(&self, theta: &ControllerParams, rng: &mut Rng) -> Result<Episode> {
        let x0 = sample_state(self.plant.as_ref(), rng);
        self.rollout_from(theta, x0, rng)
    }

    pub fn rollout_from(&self, theta: &ControllerParams, x0: Vector, rng: &mut Rng) -> Result<Episode> {
        let q = self.inputs();
        let plant = self.plant.as_ref();
        let mut steps = Vec::with_capacity(self.horizon);
        let mut x = x0;
        let mut xi = plant.output_chain(&x);
        let mut truncated = false;
        for _ in 0..self.horizon {
            let v = rng.unit_ball(q);
            let w = rng.normal_vector(q).component_mul(&self.sigma_w);
            let u_mean = match self.controller.control(theta, &x, &v) {
                Ok(u) => u,
                Err(Error::DecouplingSingularity { .. } | Error::ThrustSingularity { .. } | Error::Singular(_)) => {
                    truncated = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            let u = &u_mean + &w;
            let x_next = match integrate_rk4(|x, u| plant.vector_field(x, u), &x, &u, self.dt(), self.substeps) {
                Ok(x) if x.norm() <= STATE_NORM_CAP => x,
                Ok(_) | Err(Error::IntegrationDiverged { .. }) => {
                    truncated = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            let xi_next = plant.output_chain(&x_next);
            if !is_finite(&xi_next) {
                truncated = true;
                break;
            }
            let lbar = self.lbar(&xi, &xi_next, &v);
            steps.push(StepRecord {
                x,
                xi,
                v,
                u_mean,
                w,
                u,
                xi_next: xi_next.clone(),
                lbar,
            });
            x = x_next;
            xi = xi_next;
        }
        Ok(Episode {
            steps,
            truncated,
            seed: rng.seed(),
        })
    }

    /// `count` episodes, episode `i` drawn from `rng.derive(i)`. Collected in
    /// parallel, returned in episode order.
    pub fn collect(&self, theta: &ControllerParams, count: usize, rng: &Rng) -> Result<RolloutBatch> {
        let episodes: Result<Vec<Episode>> = (0..count)
            .into_par_iter()
            .map(|i| self.rollout(theta, &mut rng.derive(i as u64)))
            .collect();
        Ok(RolloutBatch { episodes: episodes? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DoubleIntegrator, DoublePendulum, DoublePendulumParams};
    use crate::policy::{Basis, LinearParameterization, NominalController, Parameterization};

    fn exact_env(plant: Arc<dyn ControlAffineSystem>, dt: f64, horizon: usize) -> SampledDataEnv {
        let q = plant.input_dim();
        let param = LinearParameterization::new(q, vec![], Basis::Constant).unwrap();
        let ctrl = LearnedController::new(NominalController::Model(plant.clone()), Parameterization::Linear(param)).unwrap();
        SampledDataEnv::new(plant, ctrl, dt, horizon, Vector::zeros(q)).unwrap()
    }

    #[test]
    fn integrator_chain_is_matched_exactly() {
        let plant: Arc<dyn ControlAffineSystem> = Arc::new(DoubleIntegrator::new(2).unwrap());
        let env = exact_env(plant, 0.05, 40);
        let theta = env.controller.param.zero_params();
        let ep = env.rollout(&theta, &mut Rng::new(3)).unwrap();
        assert_eq!(ep.steps.len(), 40);
        assert!(!ep.truncated);
        for s in &ep.steps {
            assert!(s.lbar < 1e-12, "{}", s.lbar);
        }
    }

    #[test]
    fn lbar_recomputes_bit_exactly() {
        let plant: Arc<dyn ControlAffineSystem> = Arc::new(DoublePendulum::new(DoublePendulumParams::default()).unwrap());
        let mut env = exact_env(plant, 0.005, 50);
        env.sigma_w = Vector::from_element(2, 0.1);
        let theta = env.controller.param.zero_params();
        let batch = env.collect(&theta, 4, &Rng::new(1)).unwrap();
        for s in batch.steps() {
            assert!(s.lbar >= 0.0);
            assert_eq!(s.lbar.to_bits(), env.lbar(&s.xi, &s.xi_next, &s.v).to_bits());
            assert_eq!(s.u, &s.u_mean + &s.w);
        }
    }

    #[test]
    fn halving_dt_shrinks_discretization_error() {
        let plant: Arc<dyn ControlAffineSystem> = Arc::new(DoublePendulum::new(DoublePendulumParams::default()).unwrap());
        let mean_lbar = |dt: f64| {
            let env = exact_env(plant.clone(), dt, 50);
            let theta = env.controller.param.zero_params();
            let batch = env.collect(&theta, 20, &Rng::new(5)).unwrap();
            batch.steps().map(|s| s.lbar).sum::<f64>() / batch.len() as f64
        };
        let coarse = mean_lbar(0.005);
        let fine = mean_lbar(0.0025);
        assert!(coarse >= 8.0 * fine, "{coarse} vs {fine}");
    }

    #[test]
    fn same_seed_same_batch() {
        let plant: Arc<dyn ControlAffineSystem> = Arc::new(DoublePendulum::new(DoublePendulumParams::default()).unwrap());
        let mut env = exact_env(plant, 0.005, 20);
        env.sigma_w = Vector::from_element(2, 0.1);
        let theta = env.controller.param.zero_params();
        let a = env.collect(&theta, 6, &Rng::new(9)).unwrap();
        let b = env.collect(&theta, 6, &Rng::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_configuration() {
        let plant: Arc<dyn ControlAffineSystem> = Arc::new(DoubleIntegrator::new(1).unwrap());
        let param = LinearParameterization::new(1, vec![], Basis::Constant).unwrap();
        let ctrl = LearnedController::new(NominalController::Zero { inputs: 1 }, Parameterization::Linear(param)).unwrap();
        assert!(SampledDataEnv::new(plant.clone(), ctrl.clone(), 0.1, 0, Vector::zeros(1)).is_err());
        assert!(SampledDataEnv::new(plant.clone(), ctrl.clone(), 0.1, 5, Vector::zeros(2)).is_err());
        assert!(SampledDataEnv::new(plant, ctrl, 0.0, 5, Vector::zeros(1)).is_err());
    }
}

//! The learned controller
//! `û_θ(x, v) = [β_m(x) + β_θ₁(x)] + [α_m(x) + α_θ₂(x)] v`.
//!
//! `(β_m, α_m)` come from a nominal model (or are identically zero) and the
//! corrections `(β_θ₁, α_θ₂)` from one of two parameterizations: a linear
//! basis expansion or a tanh feed-forward network.

mod linear;
mod mlp;

pub use linear::{make_rbf, Basis, LinearParameterization};
pub use mlp::MlpParameterization;

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::dynamics::ControlAffineSystem;
use crate::error::{Error, Result};
use crate::fbl::decoupling_terms;
use crate::numerics::{inverse, Matrix, Rng, Vector};

/// Replace each angle coordinate with `(sin, cos)` in place; other
/// coordinates pass through unchanged.
pub fn encode_state(x: &Vector, angle_indices: &[usize]) -> Vector {
    let mut out = Vec::with_capacity(x.len() + angle_indices.len());
    for (i, &xi) in x.iter().enumerate() {
        if angle_indices.contains(&i) {
            out.push(xi.sin());
            out.push(xi.cos());
        } else {
            out.push(xi);
        }
    }
    Vector::from_vec(out)
}

/// Parameters `θ = (θ₁, θ₂)` of the correction terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
}

impl ControllerParams {
    pub fn zeros(k1: usize, k2: usize) -> Self {
        Self {
            theta1: vec![0.0; k1],
            theta2: vec![0.0; k2],
        }
    }

    pub fn len(&self) -> usize {
        self.theta1.len() + self.theta2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vector {
        Vector::from_iterator(self.len(), self.theta1.iter().chain(&self.theta2).copied())
    }

    pub fn from_flat(k1: usize, flat: &Vector) -> Self {
        Self {
            theta1: flat.as_slice()[..k1].to_vec(),
            theta2: flat.as_slice()[k1..].to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta1.iter().chain(&self.theta2).all(|v| v.is_finite())
    }
}

/// Optional box constraint on θ with Euclidean projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lower: f64,
    pub upper: f64,
}

impl ParamBox {
    pub fn project(&self, theta: &mut ControllerParams) {
        for v in theta.theta1.iter_mut().chain(theta.theta2.iter_mut()) {
            *v = v.clamp(self.lower, self.upper);
        }
    }
}

/// The model-based part `(β_m, α_m)`.
#[derive(Clone)]
pub enum NominalController {
    /// No model: `β_m ≡ 0`, `α_m ≡ 0`.
    Zero { inputs: usize },
    /// Exact linearizing controller of a model: `β_m = −A_m⁻¹b_m`,
    /// `α_m = A_m⁻¹`.
    Model(Arc<dyn ControlAffineSystem>),
}

impl std::fmt::Debug for NominalController {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Zero { inputs } => f.debug_struct("Zero").field("inputs", inputs).finish(),
            Self::Model(m) => f.debug_tuple("Model").field(&m.name()).finish(),
        }
    }
}

impl NominalController {
    pub fn inputs(&self) -> usize {
        match self {
            Self::Zero { inputs } => *inputs,
            Self::Model(m) => m.input_dim(),
        }
    }

    pub fn terms(&self, x: &Vector) -> Result<(Vector, Matrix)> {
        match self {
            Self::Zero { inputs } => Ok((Vector::zeros(*inputs), Matrix::zeros(*inputs, *inputs))),
            Self::Model(model) => {
                let t = decoupling_terms(model.as_ref(), x)?;
                let alpha = inverse(&t.a)?;
                let beta = -(&alpha * &t.b);
                Ok((beta, alpha))
            }
        }
    }
}

/// Correction-term parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Parameterization {
    Linear(LinearParameterization),
    Mlp(MlpParameterization),
}

impl Parameterization {
    pub fn inputs(&self) -> usize {
        match self {
            Self::Linear(p) => p.inputs(),
            Self::Mlp(p) => p.inputs(),
        }
    }

    pub fn k1(&self) -> usize {
        match self {
            Self::Linear(p) => p.k1(),
            Self::Mlp(p) => p.k1(),
        }
    }

    pub fn k2(&self) -> usize {
        match self {
            Self::Linear(p) => p.k2(),
            Self::Mlp(p) => p.k2(),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Self::Linear(_))
    }

    pub fn zero_params(&self) -> ControllerParams {
        ControllerParams::zeros(self.k1(), self.k2())
    }

    /// Initial parameters for training. Linear corrections start at zero;
    /// networks get random hidden layers and a zero output layer, so in both
    /// cases training starts exactly at the nominal controller.
    pub fn initial_params(&self, rng: &mut Rng) -> ControllerParams {
        match self {
            Self::Linear(p) => ControllerParams::zeros(p.k1(), p.k2()),
            Self::Mlp(p) => p.init_params(rng),
        }
    }

    fn check(&self, theta: &ControllerParams) -> Result<()> {
        if theta.theta1.len() != self.k1() || theta.theta2.len() != self.k2() {
            return Err(Error::Dimension(format!(
                "parameters have lengths ({}, {}), parameterization expects ({}, {})",
                theta.theta1.len(),
                theta.theta2.len(),
                self.k1(),
                self.k2()
            )));
        }
        Ok(())
    }

    /// `(β_θ₁(x), α_θ₂(x))`.
    pub fn correction(&self, theta: &ControllerParams, x: &Vector) -> Result<(Vector, Matrix)> {
        self.check(theta)?;
        Ok(match self {
            Self::Linear(p) => p.correction(theta, x),
            Self::Mlp(p) => p.correction(theta, x),
        })
    }

    /// `∂û_θ/∂θ` as a `q × (K₁+K₂)` matrix.
    pub fn control_jacobian(&self, theta: &ControllerParams, x: &Vector, v: &Vector) -> Result<Matrix> {
        self.check(theta)?;
        Ok(match self {
            Self::Linear(p) => p.control_jacobian(x, v),
            Self::Mlp(p) => {
                let q = p.inputs();
                let mut jac = Matrix::zeros(q, theta.len());
                for i in 0..q {
                    let mut cot = Vector::zeros(q);
                    cot[i] = 1.0;
                    jac.set_row(i, &p.control_vjp(theta, x, v, &cot).transpose());
                }
                jac
            }
        })
    }

    /// `(∂û_θ/∂θ)ᵀ c`, flattened in `(θ₁, θ₂)` order.
    pub fn control_vjp(&self, theta: &ControllerParams, x: &Vector, v: &Vector, cotangent: &Vector) -> Result<Vector> {
        self.check(theta)?;
        Ok(match self {
            Self::Linear(p) => p.control_vjp(x, v, cotangent),
            Self::Mlp(p) => p.control_vjp(theta, x, v, cotangent),
        })
    }
}

/// Nominal controller plus a correction parameterization.
#[derive(Debug, Clone)]
pub struct LearnedController {
    pub nominal: NominalController,
    pub param: Parameterization,
}

impl LearnedController {
    pub fn new(nominal: NominalController, param: Parameterization) -> Result<Self> {
        if nominal.inputs() != param.inputs() {
            return Err(Error::Dimension(format!(
                "nominal controller has {} inputs, parameterization {}",
                nominal.inputs(),
                param.inputs()
            )));
        }
        Ok(Self { nominal, param })
    }

    pub fn inputs(&self) -> usize {
        self.param.inputs()
    }

    /// Total feedforward and gain, `(β_m + β_θ₁, α_m + α_θ₂)`.
    pub fn gains(&self, theta: &ControllerParams, x: &Vector) -> Result<(Vector, Matrix)> {
        let (beta_m, alpha_m) = self.nominal.terms(x)?;
        let (beta, alpha) = self.param.correction(theta, x)?;
        Ok((beta_m + beta, alpha_m + alpha))
    }

    pub fn control(&self, theta: &ControllerParams, x: &Vector, v: &Vector) -> Result<Vector> {
        let (beta, alpha) = self.gains(theta, x)?;
        Ok(beta + alpha * v)
    }

    pub fn control_jacobian(&self, theta: &ControllerParams, x: &Vector, v: &Vector) -> Result<Matrix> {
        self.param.control_jacobian(theta, x, v)
    }

    pub fn control_vjp(&self, theta: &ControllerParams, x: &Vector, v: &Vector, cotangent: &Vector) -> Result<Vector> {
        self.param.control_vjp(theta, x, v, cotangent)
    }
}

pub fn learned_control(
    nominal: &NominalController,
    param: &Parameterization,
    theta: &ControllerParams,
    x: &Vector,
    v: &Vector,
) -> Result<Vector> {
    let (beta_m, alpha_m) = nominal.terms(x)?;
    let (beta, alpha) = param.correction(theta, x)?;
    Ok(beta_m + beta + (alpha_m + alpha) * v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DoublePendulum, DoublePendulumParams, ScaleParameters};
    use crate::numerics::{finite_diff_jacobian, Rng};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn pendulum_controller(count: usize, seed: u64) -> (Arc<DoublePendulum>, LearnedController) {
        let plant = Arc::new(DoublePendulum::new(DoublePendulumParams::default()).unwrap());
        let model = DoublePendulum::new(DoublePendulumParams::default().scaled(0.5).unwrap()).unwrap();
        let mut rng = Rng::new(seed);
        let param = make_rbf(count, plant.as_ref(), None, false, &mut rng).unwrap();
        let ctrl = LearnedController::new(NominalController::Model(Arc::new(model)), Parameterization::Linear(param)).unwrap();
        (plant, ctrl)
    }

    #[test]
    fn encode_angles() {
        let z = encode_state(&Vector::from_vec(vec![0.0, 3.0]), &[0]);
        assert_eq!(z, Vector::from_vec(vec![0.0, 1.0, 3.0]));
        let z = encode_state(&Vector::from_vec(vec![FRAC_PI_2]), &[0]);
        assert!((z[0] - 1.0).abs() < 1e-16 && z[1].abs() < 1e-16);
        let x = Vector::from_vec(vec![0.3, -1.2, 7.0]);
        assert_eq!(encode_state(&x, &[]), x);
    }

    #[test]
    fn zero_theta_gives_nominal() {
        let (plant, ctrl) = pendulum_controller(20, 1);
        let mut rng = Rng::new(2);
        let theta = ctrl.param.zero_params();
        for _ in 0..20 {
            let x = plant.domain().sample(&mut rng);
            let v = rng.unit_ball(2);
            let (bm, am) = ctrl.nominal.terms(&x).unwrap();
            assert_eq!(ctrl.control(&theta, &x, &v).unwrap(), bm + am * &v);
        }
    }

    #[test]
    fn zero_model_zero_theta_gives_zero() {
        let plant = DoublePendulum::new(DoublePendulumParams::default()).unwrap();
        let param = make_rbf(5, &plant, None, false, &mut Rng::new(3)).unwrap();
        let ctrl = LearnedController::new(NominalController::Zero { inputs: 2 }, Parameterization::Linear(param)).unwrap();
        let u = ctrl.control(&ctrl.param.zero_params(), &Vector::from_vec(vec![0.1, 0.2, 0.3, 0.4]), &Vector::from_vec(vec![0.5, 0.1])).unwrap();
        assert_eq!(u, Vector::zeros(2));
    }

    #[test]
    fn rbf_dimensions() {
        let plant = DoublePendulum::new(DoublePendulumParams::default()).unwrap();
        let p = make_rbf(150, &plant, None, false, &mut Rng::new(0)).unwrap();
        assert_eq!((p.k1(), p.k2()), (300, 600));
    }

    #[test]
    fn rbf_jacobian_is_theta_independent_and_matches_fd() {
        let (plant, ctrl) = pendulum_controller(2, 4);
        // 2 centers: K1 = 4, K2 = 8 -> 12 parameters.
        let mut rng = Rng::new(5);
        let x = plant.domain().sample(&mut rng);
        let v = rng.unit_ball(2);
        let t0 = ctrl.param.zero_params();
        let t1 = ControllerParams::from_flat(4, &rng.normal_vector(12));
        let j0 = ctrl.control_jacobian(&t0, &x, &v).unwrap();
        let j1 = ctrl.control_jacobian(&t1, &x, &v).unwrap();
        assert_eq!(j0, j1);
        let fd = finite_diff_jacobian(|th| ctrl.control(&ControllerParams::from_flat(4, th), &x, &v).unwrap(), &t1.to_flat(), 1e-5).unwrap();
        assert!((fd - j0).abs().max() < 1e-5);
    }

    #[test]
    fn mlp_jacobian_matches_fd() {
        let plant = DoublePendulum::new(DoublePendulumParams::default()).unwrap();
        let mlp = MlpParameterization::new(&plant, &[8, 8], None).unwrap();
        let mut rng = Rng::new(6);
        let param = Parameterization::Mlp(mlp);
        let mut theta = param.initial_params(&mut rng);
        // Move off the zero output layer so every block of the Jacobian is exercised.
        for v in theta.theta2.iter_mut() {
            *v = 0.3 * rng.standard_normal();
        }
        let n = theta.theta1.len();
        for i in n - 10..n {
            theta.theta1[i] = 0.3 * rng.standard_normal();
        }
        let ctrl = LearnedController::new(NominalController::Zero { inputs: 2 }, param).unwrap();
        let x = plant.domain().sample(&mut rng);
        let v = rng.unit_ball(2);
        let jac = ctrl.control_jacobian(&theta, &x, &v).unwrap();
        let k1 = ctrl.param.k1();
        let fd = finite_diff_jacobian(|th| ctrl.control(&ControllerParams::from_flat(k1, th), &x, &v).unwrap(), &theta.to_flat(), 1e-6).unwrap();
        let scale = jac.abs().max().max(1.0);
        assert!((fd - jac).abs().max() < 1e-6 * scale);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rbf_control_is_affine_in_theta(seed in 0u64..1000, a in -2.0f64..3.0) {
            let (plant, ctrl) = pendulum_controller(3, 9);
            let mut rng = Rng::new(seed);
            let k = ctrl.param.k1() + ctrl.param.k2();
            let k1 = ctrl.param.k1();
            let ta = rng.normal_vector(k);
            let tb = rng.normal_vector(k);
            let x = plant.domain().sample(&mut rng);
            let v = rng.unit_ball(2);
            let mix = &ta * a + &tb * (1.0 - a);
            let u = |t: &Vector| ctrl.control(&ControllerParams::from_flat(k1, t), &x, &v).unwrap();
            let lhs = u(&mix);
            let rhs = u(&ta) * a + u(&tb) * (1.0 - a);
            prop_assert!((lhs - &rhs).norm() <= 1e-12 * rhs.norm().max(1.0));
        }

        #[test]
        fn encoding_preserves_non_angles(vals in proptest::collection::vec(-10.0f64..10.0, 5)) {
            let x = Vector::from_vec(vals.clone());
            let z = encode_state(&x, &[1, 3]);
            prop_assert_eq!(z.len(), 7);
            prop_assert_eq!(z[0].to_bits(), vals[0].to_bits());
            prop_assert_eq!(z[3].to_bits(), vals[2].to_bits());
            prop_assert_eq!(z[6].to_bits(), vals[4].to_bits());
        }
    }
}

//! Model-based feedback linearization and the integrator-chain reference
//! model the linearized plant is matched to.

use crate::dynamics::ControlAffineSystem;
use crate::error::{Error, Result};
use crate::numerics::{block_diag, condition_number, expm_nilpotent, solve, zoh_input_matrix, Matrix, Vector};

/// Largest condition number of `A(x)` accepted before reporting a
/// singularity.
pub const CONDITION_CAP: f64 = 1e6;

/// `y^(γ) = b(x) + A(x) u`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecouplingTerms {
    /// Drift term.
    pub b: Vector,
    /// Decoupling matrix.
    pub a: Matrix,
}

pub fn decoupling_terms(system: &dyn ControlAffineSystem, x: &Vector) -> Result<DecouplingTerms> {
    let (b, a) = system.io_terms(x)?;
    let condition = condition_number(&a);
    if !(condition <= CONDITION_CAP) {
        return Err(Error::DecouplingSingularity {
            state: x.iter().copied().collect(),
            condition,
        });
    }
    Ok(DecouplingTerms { b, a })
}

/// `u = A(x)⁻¹(v − b(x))`.
pub fn exact_linearizing_control(system: &dyn ControlAffineSystem, x: &Vector, v: &Vector) -> Result<Vector> {
    let terms = decoupling_terms(system, x)?;
    if v.len() != terms.b.len() {
        return Err(Error::Dimension(format!("virtual input has {} entries, system has {} outputs", v.len(), terms.b.len())));
    }
    solve(&terms.a, &(v - &terms.b))
}

/// ξ(x), the linearized coordinates.
pub fn linear_state(system: &dyn ControlAffineSystem, x: &Vector) -> Vector {
    system.output_chain(x)
}

/// Block integrator-chain model `ξ̇ = Aξ + Bv` and its zero-order-hold
/// discretization `ξ_{k+1} = Āξ_k + B̄v_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceModel {
    pub gamma: Vec<usize>,
    pub a: Matrix,
    pub b: Matrix,
    pub dt: f64,
    pub a_bar: Matrix,
    pub b_bar: Matrix,
}

impl ReferenceModel {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    /// Offsets of each output block inside ξ.
    pub fn block_offsets(&self) -> Vec<usize> {
        self.gamma
            .iter()
            .scan(0, |acc, &g| {
                let start = *acc;
                *acc += g;
                Some(start)
            })
            .collect()
    }

    /// `B̄v − (ξ_{k+1} − Āξ_k)`.
    pub fn one_step_residual(&self, xi: &Vector, xi_next: &Vector, v: &Vector) -> Vector {
        &self.b_bar * v - (xi_next - &self.a_bar * xi)
    }
}

pub fn reference_model(gamma: &[usize], dt: f64) -> Result<ReferenceModel> {
    if gamma.is_empty() || gamma.contains(&0) {
        return Err(Error::InvalidParameter(format!("relative degrees must be >= 1, got {gamma:?}")));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("sampling interval must be positive, got {dt}")));
    }
    let blocks: Vec<Matrix> = gamma
        .iter()
        .map(|&g| Matrix::from_fn(g, g, |i, j| if j == i + 1 { 1.0 } else { 0.0 }))
        .collect();
    let a = block_diag(&blocks);
    let n: usize = gamma.iter().sum();
    let mut b = Matrix::zeros(n, gamma.len());
    let mut row = 0;
    for (j, &g) in gamma.iter().enumerate() {
        row += g;
        b[(row - 1, j)] = 1.0;
    }
    let a_bar = expm_nilpotent(&a, dt)?;
    let b_bar = zoh_input_matrix(&a, &b, dt)?;
    Ok(ReferenceModel {
        gamma: gamma.to_vec(),
        a,
        b,
        dt,
        a_bar,
        b_bar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DoubleIntegrator, DoublePendulum, DoublePendulumParams, Quadrotor14, QuadrotorParams};
    use crate::numerics::{integrate_rk4, nilpotency_index, rank, Rng};

    #[test]
    fn double_integrator_terms() {
        let sys = DoubleIntegrator::new(2).unwrap();
        let x = Vector::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
        let t = decoupling_terms(&sys, &x).unwrap();
        assert_eq!(t.b, Vector::zeros(2));
        assert_eq!(t.a, Matrix::identity(2, 2));
        let v = Vector::from_vec(vec![0.5, -0.7]);
        assert_eq!(exact_linearizing_control(&sys, &x, &v).unwrap(), v);
    }

    #[test]
    fn round_trip_recovers_v() {
        let systems: Vec<Box<dyn ControlAffineSystem>> = vec![
            Box::new(DoublePendulum::new(DoublePendulumParams::default()).unwrap()),
            Box::new(Quadrotor14::new(QuadrotorParams::default()).unwrap()),
        ];
        let mut rng = Rng::new(8);
        for sys in &systems {
            for _ in 0..100 {
                let x = sys.domain().sample(&mut rng);
                let v = rng.unit_ball(sys.input_dim());
                let u = exact_linearizing_control(sys.as_ref(), &x, &v).unwrap();
                let t = decoupling_terms(sys.as_ref(), &x).unwrap();
                assert!((&t.b + &t.a * u - &v).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn pendulum_terms_match_finite_differences() {
        // Simulate briefly under constant u and difference the velocities.
        let sys = DoublePendulum::new(DoublePendulumParams::default()).unwrap();
        let mut rng = Rng::new(13);
        let h = 1e-4;
        for _ in 0..20 {
            let x = sys.domain().sample(&mut rng);
            let u = Vector::from_fn(2, |_, _| rng.uniform(-2.0, 2.0));
            let f = |x: &Vector, u: &Vector| sys.vector_field(x, u);
            let fwd = integrate_rk4(f, &x, &u, h, 1).unwrap();
            let bwd = integrate_rk4(|x, u| -sys.vector_field(x, u), &x, &u, h, 1).unwrap();
            let acc = Vector::from_vec(vec![(fwd[2] - bwd[2]) / (2.0 * h), (fwd[3] - bwd[3]) / (2.0 * h)]);
            let t = decoupling_terms(&sys, &x).unwrap();
            let expect = &t.b + &t.a * &u;
            assert!((acc - &expect).norm() <= 1e-3 * expect.norm().max(1.0));
        }
    }

    #[test]
    fn reference_model_scalar() {
        let r = reference_model(&[1], 0.1).unwrap();
        assert_eq!(r.a, Matrix::zeros(1, 1));
        assert_eq!(r.b, Matrix::identity(1, 1));
        assert_eq!(r.a_bar, Matrix::identity(1, 1));
        assert!((r.b_bar[(0, 0)] - 0.1).abs() < 1e-16);
    }

    #[test]
    fn reference_model_two_blocks() {
        let r = reference_model(&[2, 2], 0.05).unwrap();
        let blk = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(r.a, block_diag(&[blk.clone(), blk]));
        let ab = Matrix::from_row_slice(2, 2, &[1.0, 0.05, 0.0, 1.0]);
        assert_eq!(r.a_bar, block_diag(&[ab.clone(), ab]));
        let expect = Matrix::from_row_slice(4, 2, &[0.00125, 0.0, 0.05, 0.0, 0.0, 0.00125, 0.0, 0.05]);
        assert!((&r.b_bar - expect).norm() < 1e-16);
        assert_eq!(nilpotency_index(&r.a).unwrap(), 2);
    }

    #[test]
    fn quadrotor_reference_is_controllable() {
        let r = reference_model(&[4, 4, 4, 2], 0.05).unwrap();
        assert_eq!(r.a.shape(), (14, 14));
        assert_eq!(r.b.shape(), (14, 4));
        let mut ctrb = Matrix::zeros(14, 14 * 4);
        let mut blk = r.b.clone();
        for k in 0..14 {
            ctrb.view_mut((0, 4 * k), (14, 4)).copy_from(&blk);
            blk = &r.a * blk;
        }
        assert_eq!(rank(&ctrb, 1e-12), 14);
        assert_eq!(nilpotency_index(&r.a).unwrap(), 4);
    }

    #[test]
    fn pendulum_linear_state_order() {
        let sys = DoublePendulum::new(DoublePendulumParams::default()).unwrap();
        let x = Vector::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(linear_state(&sys, &x), Vector::from_vec(vec![0.1, 0.3, 0.2, 0.4]));
    }

    #[test]
    fn quadrotor_chain_starts_with_outputs() {
        let sys = Quadrotor14::new(QuadrotorParams::default()).unwrap();
        let mut rng = Rng::new(1);
        let x = sys.domain().sample(&mut rng);
        let xi = linear_state(&sys, &x);
        let y = sys.output(&x);
        assert_eq!([xi[0], xi[4], xi[8], xi[12]], [y[0], y[1], y[2], y[3]]);
    }

    #[test]
    fn invalid_reference_inputs() {
        assert!(reference_model(&[0, 2], 0.1).is_err());
        assert!(reference_model(&[2], 0.0).is_err());
    }
}

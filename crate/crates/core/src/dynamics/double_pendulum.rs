//! Fully actuated double pendulum.
//!
//! Two-link planar manipulator with point masses at the link ends. State is
//! `[θ₁, θ₂, ω₁, ω₂]`, where θ₁ is measured from the downward vertical and θ₂
//! is the elbow angle relative to link 1. Joint torques are the inputs and the
//! joint angles are the outputs, so the relative degree is (2, 2).

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::{check_positive, ControlAffineSystem, ScaleParameters, StateBox};
use crate::error::{Error, Result};
use crate::numerics::{inverse, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoublePendulumParams {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    pub gravity: f64,
}

impl Default for DoublePendulumParams {
    fn default() -> Self {
        Self {
            m1: 1.0,
            m2: 1.0,
            l1: 1.0,
            l2: 1.0,
            gravity: 9.81,
        }
    }
}

impl DoublePendulumParams {
    pub fn validate(&self) -> Result<()> {
        check_positive("m1", self.m1)?;
        check_positive("m2", self.m2)?;
        check_positive("l1", self.l1)?;
        check_positive("l2", self.l2)?;
        check_positive("gravity", self.gravity)
    }
}

impl ScaleParameters for DoublePendulumParams {
    fn scaled(&self, factor: f64) -> Result<Self> {
        check_positive("scale factor", factor)?;
        Ok(Self {
            m1: self.m1 * factor,
            m2: self.m2 * factor,
            l1: self.l1 * factor,
            l2: self.l2 * factor,
            gravity: self.gravity,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DoublePendulum {
    params: DoublePendulumParams,
    domain: StateBox,
}

const GAMMA: [usize; 2] = [2, 2];
const ANGLES: [usize; 2] = [0, 1];

impl DoublePendulum {
    pub fn new(params: DoublePendulumParams) -> Result<Self> {
        params.validate()?;
        let domain = StateBox::new(vec![-PI, -PI, -2.0, -2.0], vec![PI, PI, 2.0, 2.0])?;
        Ok(Self { params, domain })
    }

    pub fn with_domain(mut self, domain: StateBox) -> Result<Self> {
        if domain.dim() != 4 {
            return Err(Error::Dimension(format!("double pendulum domain must be 4-D, got {}", domain.dim())));
        }
        self.domain = domain;
        Ok(self)
    }

    pub fn params(&self) -> &DoublePendulumParams {
        &self.params
    }

    pub fn mass_matrix(&self, x: &Vector) -> Matrix {
        let DoublePendulumParams { m1, m2, l1, l2, .. } = self.params;
        let c2 = x[1].cos();
        let m11 = (m1 + m2) * l1 * l1 + m2 * l2 * l2 + 2.0 * m2 * l1 * l2 * c2;
        let m12 = m2 * l2 * l2 + m2 * l1 * l2 * c2;
        let m22 = m2 * l2 * l2;
        Matrix::from_row_slice(2, 2, &[m11, m12, m12, m22])
    }

    /// Christoffel-form Coriolis matrix, so that `Ṁ − 2C` is skew.
    pub fn coriolis_matrix(&self, x: &Vector) -> Matrix {
        let DoublePendulumParams { m2, l1, l2, .. } = self.params;
        let h = -m2 * l1 * l2 * x[1].sin();
        let (w1, w2) = (x[2], x[3]);
        Matrix::from_row_slice(2, 2, &[h * w2, h * (w1 + w2), -h * w1, 0.0])
    }

    pub fn gravity_vector(&self, x: &Vector) -> Vector {
        let DoublePendulumParams { m1, m2, l1, l2, gravity } = self.params;
        let s12 = (x[0] + x[1]).sin();
        Vector::from_vec(vec![
            (m1 + m2) * gravity * l1 * x[0].sin() + m2 * gravity * l2 * s12,
            m2 * gravity * l2 * s12,
        ])
    }

    /// Time derivative of the mass matrix along the motion.
    pub fn mass_matrix_rate(&self, x: &Vector) -> Matrix {
        let DoublePendulumParams { m2, l1, l2, .. } = self.params;
        let d = -m2 * l1 * l2 * x[1].sin() * x[3];
        Matrix::from_row_slice(2, 2, &[2.0 * d, d, d, 0.0])
    }

    pub fn energy(&self, x: &Vector) -> f64 {
        let DoublePendulumParams { m1, m2, l1, l2, gravity } = self.params;
        let w = Vector::from_vec(vec![x[2], x[3]]);
        let kinetic = 0.5 * (w.transpose() * self.mass_matrix(x) * &w)[(0, 0)];
        let potential = -(m1 + m2) * gravity * l1 * x[0].cos() - m2 * gravity * l2 * (x[0] + x[1]).cos();
        kinetic + potential
    }

    fn bias(&self, x: &Vector) -> Vector {
        let w = Vector::from_vec(vec![x[2], x[3]]);
        self.coriolis_matrix(x) * w + self.gravity_vector(x)
    }
}

impl ControlAffineSystem for DoublePendulum {
    fn name(&self) -> &str {
        "double_pendulum"
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn relative_degree(&self) -> &[usize] {
        &GAMMA
    }

    fn angle_indices(&self) -> &[usize] {
        &ANGLES
    }

    fn domain(&self) -> &StateBox {
        &self.domain
    }

    fn drift(&self, x: &Vector) -> Vector {
        // det M > 0 for positive parameters, so the inverse always exists.
        let minv = self.mass_matrix(x).try_inverse().expect("mass matrix is positive definite");
        let acc = -(minv * self.bias(x));
        Vector::from_vec(vec![x[2], x[3], acc[0], acc[1]])
    }

    fn input_matrix(&self, x: &Vector) -> Matrix {
        let minv = self.mass_matrix(x).try_inverse().expect("mass matrix is positive definite");
        let mut g = Matrix::zeros(4, 2);
        g.view_mut((2, 0), (2, 2)).copy_from(&minv);
        g
    }

    fn output(&self, x: &Vector) -> Vector {
        Vector::from_vec(vec![x[0], x[1]])
    }

    fn io_terms(&self, x: &Vector) -> Result<(Vector, Matrix)> {
        let minv = inverse(&self.mass_matrix(x))?;
        let b = -(&minv * self.bias(x));
        Ok((b, minv))
    }

    fn output_chain(&self, x: &Vector) -> Vector {
        Vector::from_vec(vec![x[0], x[2], x[1], x[3]])
    }

    fn state_from_output_chain(&self, xi: &Vector) -> Result<Vector> {
        if xi.len() != 4 {
            return Err(Error::Dimension(format!("expected 4 output-chain entries, got {}", xi.len())));
        }
        Ok(Vector::from_vec(vec![xi[0], xi[2], xi[1], xi[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{integrate_rk4, Rng};

    fn pendulum() -> DoublePendulum {
        DoublePendulum::new(DoublePendulumParams::default()).unwrap()
    }

    #[test]
    fn hanging_rest_is_equilibrium() {
        let p = pendulum();
        let xdot = p.vector_field(&Vector::zeros(4), &Vector::zeros(2));
        assert_eq!(xdot, Vector::zeros(4));
    }

    #[test]
    fn free_swing_conserves_energy() {
        let p = pendulum();
        let mut x = Vector::from_vec(vec![0.1, 0.0, 0.0, 0.0]);
        let e0 = p.energy(&x);
        let u = Vector::zeros(2);
        for _ in 0..1000 {
            x = integrate_rk4(|x, u| p.vector_field(x, u), &x, &u, 1e-3, 1).unwrap();
        }
        let drift = ((p.energy(&x) - e0) / e0).abs();
        assert!(drift < 1e-6, "relative energy drift {drift}");
    }

    #[test]
    fn mass_matrix_spd_and_passivity() {
        let p = pendulum();
        let mut rng = Rng::new(2);
        for _ in 0..200 {
            let x = p.domain().sample(&mut rng);
            let m = p.mass_matrix(&x);
            assert_eq!(m[(0, 1)], m[(1, 0)]);
            assert!(m.clone().symmetric_eigenvalues().min() > 0.0);
            let s = p.mass_matrix_rate(&x) - p.coriolis_matrix(&x) * 2.0;
            assert!((&s + s.transpose()).norm() < 1e-10);
        }
    }

    #[test]
    fn decoupling_is_inverse_mass_matrix() {
        let p = pendulum();
        let mut rng = Rng::new(4);
        for _ in 0..50 {
            let x = p.domain().sample(&mut rng);
            let (b, a) = p.io_terms(&x).unwrap();
            let m = p.mass_matrix(&x);
            assert!((&a * &m - Matrix::identity(2, 2)).norm() < 1e-12);
            assert!((&a - a.transpose()).norm() < 1e-12);
            assert!(a.clone().symmetric_eigenvalues().min() > 0.0);
            // M b + Cω + G = 0
            let w = Vector::from_vec(vec![x[2], x[3]]);
            let res = &m * &b + p.coriolis_matrix(&x) * w + p.gravity_vector(&x);
            assert!(res.norm() < 1e-10);
        }
    }

    #[test]
    fn scaling_matches_protocol() {
        let half = DoublePendulumParams::default().scaled(0.5).unwrap();
        assert_eq!((half.m1, half.m2, half.l1, half.l2, half.gravity), (0.5, 0.5, 0.5, 0.5, 9.81));
        assert_eq!(DoublePendulumParams::default().scaled(1.0).unwrap(), DoublePendulumParams::default());
    }
}

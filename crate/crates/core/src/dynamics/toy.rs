//! Small systems with closed-form linearizing controllers, used for sanity
//! checks and the scalar certification example.

use super::{ControlAffineSystem, StateBox};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

/// `q` decoupled double integrators, state `(y₁, ẏ₁, y₂, ẏ₂, …)`.
#[derive(Debug, Clone)]
pub struct DoubleIntegrator {
    gamma: Vec<usize>,
    domain: StateBox,
}

impl DoubleIntegrator {
    pub fn new(q: usize) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidParameter("need at least one channel".into()));
        }
        Ok(Self {
            gamma: vec![2; q],
            domain: StateBox::new(vec![-1.0; 2 * q], vec![1.0; 2 * q])?,
        })
    }
}

impl ControlAffineSystem for DoubleIntegrator {
    fn name(&self) -> &str {
        "double_integrator"
    }

    fn state_dim(&self) -> usize {
        2 * self.gamma.len()
    }

    fn input_dim(&self) -> usize {
        self.gamma.len()
    }

    fn relative_degree(&self) -> &[usize] {
        &self.gamma
    }

    fn domain(&self) -> &StateBox {
        &self.domain
    }

    fn drift(&self, x: &Vector) -> Vector {
        Vector::from_fn(x.len(), |i, _| if i % 2 == 0 { x[i + 1] } else { 0.0 })
    }

    fn input_matrix(&self, _x: &Vector) -> Matrix {
        let q = self.gamma.len();
        Matrix::from_fn(2 * q, q, |i, j| if i == 2 * j + 1 { 1.0 } else { 0.0 })
    }

    fn output(&self, x: &Vector) -> Vector {
        Vector::from_fn(self.gamma.len(), |j, _| x[2 * j])
    }

    fn io_terms(&self, _x: &Vector) -> Result<(Vector, Matrix)> {
        let q = self.gamma.len();
        Ok((Vector::zeros(q), Matrix::identity(q, q)))
    }

    fn output_chain(&self, x: &Vector) -> Vector {
        x.clone()
    }

    fn state_from_output_chain(&self, xi: &Vector) -> Result<Vector> {
        Ok(xi.clone())
    }
}

/// Scalar plant `ẏ = gain·u + offset`, relative degree one.
#[derive(Debug, Clone)]
pub struct ScalarAffine {
    gain: f64,
    offset: f64,
    domain: StateBox,
}

const SCALAR_GAMMA: [usize; 1] = [1];

impl ScalarAffine {
    pub fn new(gain: f64, offset: f64) -> Result<Self> {
        if gain == 0.0 || !gain.is_finite() || !offset.is_finite() {
            return Err(Error::InvalidParameter(format!("scalar plant needs finite nonzero gain, got {gain}")));
        }
        Ok(Self {
            gain,
            offset,
            domain: StateBox::new(vec![-1.0], vec![1.0])?,
        })
    }
}

impl ControlAffineSystem for ScalarAffine {
    fn name(&self) -> &str {
        "scalar_affine"
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn relative_degree(&self) -> &[usize] {
        &SCALAR_GAMMA
    }

    fn domain(&self) -> &StateBox {
        &self.domain
    }

    fn drift(&self, _x: &Vector) -> Vector {
        Vector::from_element(1, self.offset)
    }

    fn input_matrix(&self, _x: &Vector) -> Matrix {
        Matrix::from_element(1, 1, self.gain)
    }

    fn output(&self, x: &Vector) -> Vector {
        x.clone()
    }

    fn io_terms(&self, _x: &Vector) -> Result<(Vector, Matrix)> {
        Ok((Vector::from_element(1, self.offset), Matrix::from_element(1, 1, self.gain)))
    }

    fn output_chain(&self, x: &Vector) -> Vector {
        x.clone()
    }

    fn state_from_output_chain(&self, xi: &Vector) -> Result<Vector> {
        Ok(xi.clone())
    }
}

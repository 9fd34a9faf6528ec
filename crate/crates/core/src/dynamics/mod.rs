//! Control-affine plants `ẋ = f(x) + g(x)u`, `y = h(x)`.

mod double_pendulum;
mod quadrotor;
mod toy;

pub use double_pendulum::{DoublePendulum, DoublePendulumParams};
pub use quadrotor::{Quadrotor14, QuadrotorParams};
pub use toy::{DoubleIntegrator, ScalarAffine};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng, Vector};

/// Axis-aligned box in state space; the support of the state distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl StateBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::InvalidParameter("box needs finite lower <= upper".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> Vector {
        Vector::from_iterator(self.dim(), self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)))
    }

    pub fn half_widths(&self) -> Vector {
        Vector::from_iterator(self.dim(), self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (u - l)))
    }

    pub fn contains(&self, x: &Vector) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    /// Uniform sample from the box.
    pub fn sample(&self, rng: &mut Rng) -> Vector {
        Vector::from_iterator(
            self.dim(),
            self.lower.iter().zip(&self.upper).map(|(&l, &u)| if l == u { l } else { rng.uniform(l, u) }),
        )
    }
}

/// A square control-affine system with known vector relative degree.
///
/// Implementors supply the input-output terms `y^(γ) = b(x) + A(x)u`
/// analytically, together with the chain of output derivatives ξ(x) in the
/// interleaved order `(y₁, ẏ₁, …, y₁^(γ₁−1), y₂, …)`.
pub trait ControlAffineSystem: Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn relative_degree(&self) -> &[usize];
    fn angle_indices(&self) -> &[usize] {
        &[]
    }
    fn domain(&self) -> &StateBox;

    fn drift(&self, x: &Vector) -> Vector;
    fn input_matrix(&self, x: &Vector) -> Matrix;
    fn output(&self, x: &Vector) -> Vector;

    /// `(b(x), A(x))`, unchecked for conditioning.
    fn io_terms(&self, x: &Vector) -> Result<(Vector, Matrix)>;

    /// ξ(x): outputs and their derivatives up to order γ_j − 1.
    fn output_chain(&self, x: &Vector) -> Vector;

    /// A plant state whose output chain starts at `xi` (exactly where the
    /// state determines it, at rest elsewhere).
    fn state_from_output_chain(&self, xi: &Vector) -> Result<Vector>;

    fn vector_field(&self, x: &Vector, u: &Vector) -> Vector {
        self.drift(x) + self.input_matrix(x) * u
    }
}

/// Uniform draw from the system's domain D.
pub fn sample_state(system: &dyn ControlAffineSystem, rng: &mut Rng) -> Vector {
    system.domain().sample(rng)
}

/// Physical parameter records that can be rescaled to build mismatched
/// nominal models. Masses, lengths and inertias scale; gravity does not.
pub trait ScaleParameters: Sized {
    fn scaled(&self, factor: f64) -> Result<Self>;
}

pub fn scale_parameters<P: ScaleParameters>(params: &P, factor: f64) -> Result<P> {
    params.scaled(factor)
}

pub(crate) fn check_positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {value}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_box_returns_corner() {
        let b = StateBox::new(vec![1.0, -2.0], vec![1.0, -2.0]).unwrap();
        let mut rng = Rng::new(3);
        assert_eq!(b.sample(&mut rng), Vector::from_vec(vec![1.0, -2.0]));
    }

    #[test]
    fn uniform_moments() {
        let b = StateBox::new(vec![-1.0, 0.0, 2.0], vec![1.0, 4.0, 2.5]).unwrap();
        let mut rng = Rng::new(11);
        let n = 10_000;
        let mut sum = Vector::zeros(3);
        for _ in 0..n {
            let x = b.sample(&mut rng);
            assert!(b.contains(&x));
            sum += x;
        }
        let mean = sum / n as f64;
        let center = b.center();
        for i in 0..3 {
            let width = b.upper[i] - b.lower[i];
            let sigma = width / 12f64.sqrt() / (n as f64).sqrt();
            assert!((mean[i] - center[i]).abs() < 3.0 * sigma, "coordinate {i}");
        }
    }

    #[test]
    fn invalid_box_rejected() {
        assert!(StateBox::new(vec![1.0], vec![0.0]).is_err());
        assert!(StateBox::new(vec![1.0], vec![2.0, 3.0]).is_err());
    }
}

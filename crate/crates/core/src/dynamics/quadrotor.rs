//! 14-state quadrotor with the thrust channel dynamically extended by two
//! integrators.
//!
//! State layout: `(x, y, z, ψ, θ, φ, ẋ, ẏ, ż, p, q, r, ξ, ζ)` where ψ is yaw,
//! θ pitch, φ roll, `(p, q, r)` are the Euler-angle rates, ζ is the collective
//! thrust and ξ = ζ̇. Inputs are `(ζ̈, τ_ψ, τ_θ, τ_φ)`; the rotational channels
//! are modelled as decoupled double integrators scaled by the principal
//! inertias. Outputs are `(x, y, z, ψ)` with vector relative degree
//! (4, 4, 4, 2).

use serde::{Deserialize, Serialize};

use super::{check_positive, ControlAffineSystem, ScaleParameters, StateBox};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

pub const X: usize = 0;
pub const YAW: usize = 3;
pub const PITCH: usize = 4;
pub const ROLL: usize = 5;
pub const VX: usize = 6;
pub const YAW_RATE: usize = 9;
pub const THRUST_RATE: usize = 12;
pub const THRUST: usize = 13;

/// Minimum thrust, as a fraction of hover thrust, at which the decoupling
/// matrix is still treated as invertible.
pub const THRUST_FLOOR_RATIO: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadrotorParams {
    pub mass: f64,
    pub inertia_xx: f64,
    pub inertia_yy: f64,
    pub inertia_zz: f64,
    pub gravity: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self {
            mass: 0.5,
            inertia_xx: 2.3e-3,
            inertia_yy: 2.3e-3,
            inertia_zz: 4e-3,
            gravity: 9.81,
        }
    }
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<()> {
        check_positive("mass", self.mass)?;
        check_positive("inertia_xx", self.inertia_xx)?;
        check_positive("inertia_yy", self.inertia_yy)?;
        check_positive("inertia_zz", self.inertia_zz)?;
        check_positive("gravity", self.gravity)
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }
}

impl ScaleParameters for QuadrotorParams {
    fn scaled(&self, factor: f64) -> Result<Self> {
        check_positive("scale factor", factor)?;
        Ok(Self {
            mass: self.mass * factor,
            inertia_xx: self.inertia_xx * factor,
            inertia_yy: self.inertia_yy * factor,
            inertia_zz: self.inertia_zz * factor,
            gravity: self.gravity,
        })
    }
}

/// Truncated Taylor jet `(f, f', f'')` along a line in angle space.
#[derive(Debug, Clone, Copy)]
struct Jet {
    v: f64,
    d1: f64,
    d2: f64,
}

impl Jet {
    fn line(value: f64, rate: f64) -> Self {
        Self { v: value, d1: rate, d2: 0.0 }
    }

    fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        Self {
            v: s,
            d1: c * self.d1,
            d2: -s * self.d1 * self.d1 + c * self.d2,
        }
    }

    fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        Self {
            v: c,
            d1: -s * self.d1,
            d2: -c * self.d1 * self.d1 - s * self.d2,
        }
    }

    fn mul(self, o: Self) -> Self {
        Self {
            v: self.v * o.v,
            d1: self.d1 * o.v + self.v * o.d1,
            d2: self.d2 * o.v + 2.0 * self.d1 * o.d1 + self.v * o.d2,
        }
    }

    fn add(self, o: Self) -> Self {
        Self {
            v: self.v + o.v,
            d1: self.d1 + o.d1,
            d2: self.d2 + o.d2,
        }
    }

    fn sub(self, o: Self) -> Self {
        Self {
            v: self.v - o.v,
            d1: self.d1 - o.d1,
            d2: self.d2 - o.d2,
        }
    }
}

/// Body z-axis in the world frame, `R_z(ψ) R_y(θ) R_x(φ) e₃`, differentiated
/// along `(ψ, θ, φ) + s·rates`.
fn thrust_axis(angles: [f64; 3], rates: [f64; 3]) -> [Jet; 3] {
    let yaw = Jet::line(angles[0], rates[0]);
    let pitch = Jet::line(angles[1], rates[1]);
    let roll = Jet::line(angles[2], rates[2]);
    let (sy, cy) = (yaw.sin(), yaw.cos());
    let (sp, cp) = (pitch.sin(), pitch.cos());
    let (sr, cr) = (roll.sin(), roll.cos());
    [
        cy.mul(sp).mul(cr).add(sy.mul(sr)),
        sy.mul(sp).mul(cr).sub(cy.mul(sr)),
        cp.mul(cr),
    ]
}

/// Partial derivatives of the thrust axis with respect to (ψ, θ, φ); column j
/// is `∂r/∂a_j`.
fn thrust_axis_partials(angles: [f64; 3]) -> [[f64; 3]; 3] {
    let mut cols = [[0.0; 3]; 3];
    for (j, col) in cols.iter_mut().enumerate() {
        let mut dir = [0.0; 3];
        dir[j] = 1.0;
        let r = thrust_axis(angles, dir);
        *col = [r[0].d1, r[1].d1, r[2].d1];
    }
    cols
}

#[derive(Debug, Clone)]
pub struct Quadrotor14 {
    params: QuadrotorParams,
    domain: StateBox,
}

const GAMMA: [usize; 4] = [4, 4, 4, 2];
const ANGLES: [usize; 3] = [YAW, PITCH, ROLL];

impl Quadrotor14 {
    pub fn new(params: QuadrotorParams) -> Result<Self> {
        params.validate()?;
        let mg = params.hover_thrust();
        let lower = vec![-2.0, -2.0, -2.0, -0.5, -0.5, -0.5, -1.0, -1.0, -1.0, -0.5, -0.5, -0.5, -1.0, 0.5 * mg];
        let upper = vec![2.0, 2.0, 2.0, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 1.0, 1.5 * mg];
        let domain = StateBox::new(lower, upper)?;
        Ok(Self { params, domain })
    }

    pub fn with_domain(mut self, domain: StateBox) -> Result<Self> {
        if domain.dim() != 14 {
            return Err(Error::Dimension(format!("quadrotor domain must be 14-D, got {}", domain.dim())));
        }
        self.domain = domain;
        Ok(self)
    }

    pub fn params(&self) -> &QuadrotorParams {
        &self.params
    }

    pub fn thrust_floor(&self) -> f64 {
        THRUST_FLOOR_RATIO * self.params.hover_thrust()
    }

    /// Hover at the origin with the given yaw.
    pub fn hover_state(&self, yaw: f64) -> Vector {
        let mut x = Vector::zeros(14);
        x[YAW] = yaw;
        x[THRUST] = self.params.hover_thrust();
        x
    }

    fn angles(x: &Vector) -> [f64; 3] {
        [x[YAW], x[PITCH], x[ROLL]]
    }

    fn rates(x: &Vector) -> [f64; 3] {
        [x[YAW_RATE], x[YAW_RATE + 1], x[YAW_RATE + 2]]
    }

    fn inverse_inertias(&self) -> [f64; 3] {
        [1.0 / self.params.inertia_zz, 1.0 / self.params.inertia_yy, 1.0 / self.params.inertia_xx]
    }
}

impl ControlAffineSystem for Quadrotor14 {
    fn name(&self) -> &str {
        "quadrotor_14d"
    }

    fn state_dim(&self) -> usize {
        14
    }

    fn input_dim(&self) -> usize {
        4
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
        let m = self.params.mass;
        let r = thrust_axis(Self::angles(x), [0.0; 3]);
        let thrust = x[THRUST];
        let mut f = Vector::zeros(14);
        for i in 0..6 {
            f[i] = x[VX + i];
        }
        for i in 0..3 {
            f[VX + i] = thrust / m * r[i].v;
        }
        f[VX + 2] -= self.params.gravity;
        f[THRUST] = x[THRUST_RATE];
        f
    }

    fn input_matrix(&self, _x: &Vector) -> Matrix {
        let inv = self.inverse_inertias();
        let mut g = Matrix::zeros(14, 4);
        g[(THRUST_RATE, 0)] = 1.0;
        for j in 0..3 {
            g[(YAW_RATE + j, 1 + j)] = inv[j];
        }
        g
    }

    fn output(&self, x: &Vector) -> Vector {
        Vector::from_vec(vec![x[X], x[X + 1], x[X + 2], x[YAW]])
    }

    fn io_terms(&self, x: &Vector) -> Result<(Vector, Matrix)> {
        let floor = self.thrust_floor();
        let thrust = x[THRUST];
        if !(thrust >= floor) {
            return Err(Error::ThrustSingularity { thrust, floor });
        }
        let m = self.params.mass;
        let angles = Self::angles(x);
        let r = thrust_axis(angles, Self::rates(x));
        let partials = thrust_axis_partials(angles);
        let inv = self.inverse_inertias();
        let thrust_rate = x[THRUST_RATE];

        let mut b = Vector::zeros(4);
        let mut a = Matrix::zeros(4, 4);
        for i in 0..3 {
            b[i] = 2.0 * thrust_rate / m * r[i].d1 + thrust / m * r[i].d2;
            a[(i, 0)] = r[i].v / m;
            for j in 0..3 {
                a[(i, 1 + j)] = thrust / m * partials[j][i] * inv[j];
            }
        }
        a[(3, 1)] = inv[0];
        Ok((b, a))
    }

    fn output_chain(&self, x: &Vector) -> Vector {
        let m = self.params.mass;
        let r = thrust_axis(Self::angles(x), Self::rates(x));
        let mut xi = Vector::zeros(14);
        for i in 0..3 {
            xi[4 * i] = x[X + i];
            xi[4 * i + 1] = x[VX + i];
            xi[4 * i + 2] = x[THRUST] / m * r[i].v;
            xi[4 * i + 3] = x[THRUST_RATE] / m * r[i].v + x[THRUST] / m * r[i].d1;
        }
        xi[10] -= self.params.gravity;
        xi[12] = x[YAW];
        xi[13] = x[YAW_RATE];
        xi
    }

    fn state_from_output_chain(&self, xi: &Vector) -> Result<Vector> {
        if xi.len() != 14 {
            return Err(Error::Dimension(format!("expected 14 output-chain entries, got {}", xi.len())));
        }
        let m = self.params.mass;
        let mut x = Vector::zeros(14);
        let mut force = [0.0; 3];
        let mut jerk = [0.0; 3];
        for i in 0..3 {
            x[X + i] = xi[4 * i];
            x[VX + i] = xi[4 * i + 1];
            force[i] = m * xi[4 * i + 2];
            jerk[i] = xi[4 * i + 3];
        }
        force[2] += self.params.hover_thrust();
        let yaw = xi[12];
        x[YAW] = yaw;
        x[YAW_RATE] = xi[13];

        let thrust = (force[0] * force[0] + force[1] * force[1] + force[2] * force[2]).sqrt();
        if thrust < self.thrust_floor() {
            return Err(Error::ThrustSingularity {
                thrust,
                floor: self.thrust_floor(),
            });
        }
        let dir = [force[0] / thrust, force[1] / thrust, force[2] / thrust];
        // Undo the yaw rotation: R_z(-ψ) r = (sθ cφ, -sφ, cθ cφ).
        let (sy, cy) = yaw.sin_cos();
        let a = cy * dir[0] + sy * dir[1];
        let b = -sy * dir[0] + cy * dir[1];
        let c = dir[2];
        let roll = (-b).clamp(-1.0, 1.0).asin();
        let pitch = a.atan2(c);
        x[PITCH] = pitch;
        x[ROLL] = roll;
        x[THRUST] = thrust;

        // jerk = (ξ/m) r + (ζ/m) ṙ with ṙ ⟂ r.
        let thrust_rate = m * (jerk[0] * dir[0] + jerk[1] * dir[1] + jerk[2] * dir[2]);
        x[THRUST_RATE] = thrust_rate;
        let partials = thrust_axis_partials([yaw, pitch, roll]);
        let mut rhs = [0.0; 3];
        for i in 0..3 {
            rhs[i] = (m * jerk[i] - thrust_rate * dir[i]) / thrust - partials[0][i] * xi[13];
        }
        let jac = Matrix::from_fn(3, 2, |i, j| partials[1 + j][i]);
        let rates = (jac.transpose() * &jac)
            .lu()
            .solve(&(jac.transpose() * Vector::from_row_slice(&rhs)))
            .ok_or_else(|| Error::Singular("attitude rate recovery".into()))?;
        x[YAW_RATE + 1] = rates[0];
        x[YAW_RATE + 2] = rates[1];
        Ok(x)
    }
}

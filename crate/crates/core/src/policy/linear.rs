//! Linear-in-parameters corrections
//! `β_θ₁(x) = Σ_k θ¹_k β_k(x)`, `α_θ₂(x) = Σ_k θ²_k α_k(x)`.
//!
//! Each scalar feature `φ_c(x)` generates `q` drift basis functions `φ_c e_j`
//! and `q²` gain basis functions `φ_c E_ij`. Parameter layout is
//! feature-major: `θ₁[c·q + j]`, `θ₂[c·q² + i·q + j]`.

use serde::{Deserialize, Serialize};

use super::{encode_state, ControllerParams};
use crate::dynamics::{sample_state, ControlAffineSystem};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Basis {
    /// Gaussian bumps `exp(−‖z − c‖² / (2 w²))` on the encoded state,
    /// optionally divided by their sum.
    Gaussian {
        centers: Vec<Vec<f64>>,
        width: f64,
        #[serde(default)]
        normalized: bool,
    },
    /// The single constant feature `φ ≡ 1`.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParameterization {
    inputs: usize,
    angle_indices: Vec<usize>,
    basis: Basis,
}

impl LinearParameterization {
    pub fn new(inputs: usize, angle_indices: Vec<usize>, basis: Basis) -> Result<Self> {
        if inputs == 0 {
            return Err(Error::InvalidParameter("parameterization needs at least one input".into()));
        }
        if let Basis::Gaussian { centers, width, .. } = &basis {
            if centers.is_empty() {
                return Err(Error::InvalidParameter("need at least one center".into()));
            }
            if !(*width > 0.0) || !width.is_finite() {
                return Err(Error::InvalidParameter(format!("width must be positive, got {width}")));
            }
            let dim = centers[0].len();
            if centers.iter().any(|c| c.len() != dim) {
                return Err(Error::Dimension("centers have differing dimensions".into()));
            }
        }
        Ok(Self {
            inputs,
            angle_indices,
            basis,
        })
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn feature_count(&self) -> usize {
        match &self.basis {
            Basis::Gaussian { centers, .. } => centers.len(),
            Basis::Constant => 1,
        }
    }

    pub fn k1(&self) -> usize {
        self.feature_count() * self.inputs
    }

    pub fn k2(&self) -> usize {
        self.feature_count() * self.inputs * self.inputs
    }

    /// Copy with feature `index` appended again, producing a linearly
    /// dependent basis.
    pub fn with_duplicated_feature(&self, index: usize) -> Result<Self> {
        let mut out = self.clone();
        match &mut out.basis {
            Basis::Gaussian { centers, .. } => {
                let c = centers
                    .get(index)
                    .cloned()
                    .ok_or_else(|| Error::InvalidParameter(format!("no feature {index}")))?;
                centers.push(c);
            }
            Basis::Constant => return Err(Error::InvalidParameter("constant basis cannot be duplicated".into())),
        }
        Ok(out)
    }

    /// Reorder features; parameter blocks move with them.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut out = self.clone();
        if let Basis::Gaussian { centers, .. } = &mut out.basis {
            if perm.len() != centers.len() {
                return Err(Error::Dimension("permutation length mismatch".into()));
            }
            let old = centers.clone();
            *centers = perm.iter().map(|&i| old[i].clone()).collect();
        }
        Ok(out)
    }

    pub fn features(&self, x: &Vector) -> Vec<f64> {
        match &self.basis {
            Basis::Constant => vec![1.0],
            Basis::Gaussian {
                centers,
                width,
                normalized,
            } => {
                let z = encode_state(x, &self.angle_indices);
                let inv = 1.0 / (2.0 * width * width);
                let d2: Vec<f64> = centers
                    .iter()
                    .map(|c| c.iter().zip(z.iter()).map(|(a, b)| (a - b) * (a - b)).sum())
                    .collect();
                if *normalized {
                    // Shift by the nearest center so the sum never underflows.
                    let near = d2.iter().copied().fold(f64::INFINITY, f64::min);
                    let phi: Vec<f64> = d2.iter().map(|d| (-(d - near) * inv).exp()).collect();
                    let total: f64 = phi.iter().sum();
                    phi.iter().map(|p| p / total).collect()
                } else {
                    d2.iter().map(|d| (-d * inv).exp()).collect()
                }
            }
        }
    }

    pub fn correction(&self, theta: &ControllerParams, x: &Vector) -> (Vector, Matrix) {
        let q = self.inputs;
        let phi = self.features(x);
        let mut beta = Vector::zeros(q);
        let mut alpha = Matrix::zeros(q, q);
        for (c, &p) in phi.iter().enumerate() {
            let t1 = &theta.theta1[c * q..(c + 1) * q];
            for j in 0..q {
                beta[j] += p * t1[j];
            }
            let t2 = &theta.theta2[c * q * q..(c + 1) * q * q];
            for i in 0..q {
                for j in 0..q {
                    alpha[(i, j)] += p * t2[i * q + j];
                }
            }
        }
        (beta, alpha)
    }

    pub fn control_jacobian(&self, x: &Vector, v: &Vector) -> Matrix {
        let q = self.inputs;
        let phi = self.features(x);
        let k1 = self.k1();
        let mut jac = Matrix::zeros(q, k1 + self.k2());
        for (c, &p) in phi.iter().enumerate() {
            for j in 0..q {
                jac[(j, c * q + j)] = p;
            }
            for i in 0..q {
                for j in 0..q {
                    jac[(i, k1 + c * q * q + i * q + j)] = p * v[j];
                }
            }
        }
        jac
    }

    pub fn control_vjp(&self, x: &Vector, v: &Vector, cot: &Vector) -> Vector {
        let q = self.inputs;
        let phi = self.features(x);
        let k1 = self.k1();
        let mut g = Vector::zeros(k1 + self.k2());
        for (c, &p) in phi.iter().enumerate() {
            for j in 0..q {
                g[c * q + j] = p * cot[j];
            }
            for i in 0..q {
                let pc = p * cot[i];
                for j in 0..q {
                    g[k1 + c * q * q + i * q + j] = pc * v[j];
                }
            }
        }
        g
    }
}

/// Gaussian basis with `count` centers drawn uniformly from the encoded
/// domain. `width` defaults to half the mean nearest-neighbour distance
/// between centers.
pub fn make_rbf(
    count: usize,
    system: &dyn ControlAffineSystem,
    width: Option<f64>,
    normalized: bool,
    rng: &mut Rng,
) -> Result<LinearParameterization> {
    if count == 0 {
        return Err(Error::InvalidParameter("need at least one basis function".into()));
    }
    let angles = system.angle_indices().to_vec();
    let centers: Vec<Vec<f64>> = (0..count)
        .map(|_| encode_state(&sample_state(system, rng), &angles).iter().copied().collect())
        .collect();
    let width = match width {
        Some(w) => w,
        None => default_width(&centers),
    };
    LinearParameterization::new(system.input_dim(), angles, Basis::Gaussian {
            centers,
            width,
            normalized,
        },
    )
}

fn default_width(centers: &[Vec<f64>]) -> f64 {
    if centers.len() < 2 {
        return 1.0;
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let total: f64 = centers
        .iter()
        .enumerate()
        .map(|(i, c)| {
            centers
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, o)| dist(c, o))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    let mean = total / centers.len() as f64;
    if mean > 0.0 {
        0.5 * mean
    } else {
        1.0
    }
}

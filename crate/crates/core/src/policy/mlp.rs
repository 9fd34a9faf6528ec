//! tanh feed-forward network producing both corrections from one head.
//!
//! The network maps the normalized encoded state to `q + q²` outputs: the
//! first `q` are `β_θ₁`, the rest are `α_θ₂` row-major. Each input channel `i`
//! has a fixed output scale `s_i` so that channels with very different
//! physical units (thrust versus torque) are learned at comparable rates:
//! `β_i = s_i·o_i`, `α_ij = s_i·o_{q+iq+j}`.
//!
//! Parameter split: θ₂ holds the output-layer rows feeding `α`; θ₁ holds
//! everything else (hidden layers and the `β` rows of the output layer).

use serde::{Deserialize, Serialize};

use super::{encode_state, ControllerParams};
use crate::dynamics::ControlAffineSystem;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParameterization {
    inputs: usize,
    angle_indices: Vec<usize>,
    input_shift: Vec<f64>,
    input_scale: Vec<f64>,
    hidden: Vec<usize>,
    output_scale: Vec<f64>,
}

/// Offsets of one dense layer inside θ₁.
#[derive(Debug, Clone, Copy)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
}

impl MlpParameterization {
    /// Inputs are normalized to the system's domain box (angles excepted,
    /// their sin/cos are already bounded).
    pub fn new(system: &dyn ControlAffineSystem, hidden: &[usize], output_scale: Option<Vec<f64>>) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::InvalidParameter(format!("hidden widths must be positive, got {hidden:?}")));
        }
        let q = system.input_dim();
        let output_scale = output_scale.unwrap_or_else(|| vec![1.0; q]);
        if output_scale.len() != q || output_scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidParameter(format!("output scale must have {q} positive entries")));
        }
        let angles = system.angle_indices().to_vec();
        let center = system.domain().center();
        let half = system.domain().half_widths();
        let mut input_shift = Vec::new();
        let mut input_scale = Vec::new();
        for i in 0..system.state_dim() {
            if angles.contains(&i) {
                input_shift.extend([0.0, 0.0]);
                input_scale.extend([1.0, 1.0]);
            } else {
                input_shift.push(center[i]);
                input_scale.push(if half[i] > 0.0 { 1.0 / half[i] } else { 1.0 });
            }
        }
        Ok(Self {
            inputs: q,
            angle_indices: angles,
            input_shift,
            input_scale,
            hidden: hidden.to_vec(),
            output_scale,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    fn input_dim(&self) -> usize {
        self.input_shift.len()
    }

    fn outputs(&self) -> usize {
        self.inputs + self.inputs * self.inputs
    }

    fn last_width(&self) -> usize {
        *self.hidden.last().expect("validated non-empty")
    }

    fn hidden_layers(&self) -> Vec<Layer> {
        let mut layers = Vec::with_capacity(self.hidden.len());
        let mut fan_in = self.input_dim();
        let mut offset = 0;
        for &w in &self.hidden {
            layers.push(Layer {
                fan_in,
                fan_out: w,
                offset,
            });
            offset += w * fan_in + w;
            fan_in = w;
        }
        layers
    }

    fn hidden_param_count(&self) -> usize {
        self.hidden_layers().iter().map(|l| l.fan_out * l.fan_in + l.fan_out).sum()
    }

    pub fn k1(&self) -> usize {
        self.hidden_param_count() + self.inputs * self.last_width() + self.inputs
    }

    pub fn k2(&self) -> usize {
        let qq = self.inputs * self.inputs;
        qq * self.last_width() + qq
    }

    /// Uniform `±1/√fan_in` hidden layers, zero output layer.
    pub fn init_params(&self, rng: &mut Rng) -> ControllerParams {
        let mut theta = ControllerParams::zeros(self.k1(), self.k2());
        for layer in self.hidden_layers() {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            let n = layer.fan_out * layer.fan_in + layer.fan_out;
            for v in &mut theta.theta1[layer.offset..layer.offset + n] {
                *v = rng.uniform(-bound, bound);
            }
        }
        theta
    }

    fn normalized_input(&self, x: &Vector) -> Vec<f64> {
        let z = encode_state(x, &self.angle_indices);
        z.iter()
            .zip(self.input_shift.iter().zip(&self.input_scale))
            .map(|(v, (s, k))| (v - s) * k)
            .collect()
    }

    /// Activations of every hidden layer (input first) and the raw outputs.
    fn forward(&self, theta: &ControllerParams, x: &Vector) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut acts = vec![self.normalized_input(x)];
        for layer in self.hidden_layers() {
            let input = acts.last().expect("non-empty");
            let w = &theta.theta1[layer.offset..layer.offset + layer.fan_out * layer.fan_in];
            let b = &theta.theta1[layer.offset + layer.fan_out * layer.fan_in..layer.offset + layer.fan_out * layer.fan_in + layer.fan_out];
            let out: Vec<f64> = (0..layer.fan_out)
                .map(|r| {
                    let row = &w[r * layer.fan_in..(r + 1) * layer.fan_in];
                    (b[r] + row.iter().zip(input).map(|(a, c)| a * c).sum::<f64>()).tanh()
                })
                .collect();
            acts.push(out);
        }
        let h = acts.last().expect("non-empty");
        let width = self.last_width();
        let out: Vec<f64> = (0..self.outputs()).map(|r| self.output_bias(theta, r) + dot(self.output_row(theta, r), h)).collect();
        debug_assert_eq!(h.len(), width);
        (acts, out)
    }

    fn output_row<'a>(&self, theta: &'a ControllerParams, row: usize) -> &'a [f64] {
        let width = self.last_width();
        let q = self.inputs;
        if row < q {
            let base = self.hidden_param_count() + row * width;
            &theta.theta1[base..base + width]
        } else {
            let base = (row - q) * width;
            &theta.theta2[base..base + width]
        }
    }

    fn output_bias(&self, theta: &ControllerParams, row: usize) -> f64 {
        let width = self.last_width();
        let q = self.inputs;
        if row < q {
            theta.theta1[self.hidden_param_count() + q * width + row]
        } else {
            theta.theta2[q * q * width + (row - q)]
        }
    }

    pub fn correction(&self, theta: &ControllerParams, x: &Vector) -> (Vector, Matrix) {
        let q = self.inputs;
        let (_, out) = self.forward(theta, x);
        let beta = Vector::from_fn(q, |i, _| self.output_scale[i] * out[i]);
        let alpha = Matrix::from_fn(q, q, |i, j| self.output_scale[i] * out[q + i * q + j]);
        (beta, alpha)
    }

    /// Reverse-mode `(∂û/∂θ)ᵀ c`.
    pub fn control_vjp(&self, theta: &ControllerParams, x: &Vector, v: &Vector, cot: &Vector) -> Vector {
        let q = self.inputs;
        let width = self.last_width();
        let hidden_count = self.hidden_param_count();
        let k1 = self.k1();
        let (acts, _) = self.forward(theta, x);
        let mut grad = Vector::zeros(k1 + self.k2());

        // Gradient with respect to the raw network outputs.
        let mut g_out = vec![0.0; self.outputs()];
        for i in 0..q {
            let gi = self.output_scale[i] * cot[i];
            g_out[i] = gi;
            for j in 0..q {
                g_out[q + i * q + j] = gi * v[j];
            }
        }

        let h = acts.last().expect("non-empty");
        let mut delta = vec![0.0; width];
        for (r, &g) in g_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let (w_base, b_idx) = if r < q {
                (hidden_count + r * width, hidden_count + q * width + r)
            } else {
                (k1 + (r - q) * width, k1 + q * q * width + (r - q))
            };
            for c in 0..width {
                grad[w_base + c] = g * h[c];
            }
            grad[b_idx] = g;
            let row = self.output_row(theta, r);
            for c in 0..width {
                delta[c] += row[c] * g;
            }
        }

        let layers = self.hidden_layers();
        for (li, layer) in layers.iter().enumerate().rev() {
            let out = &acts[li + 1];
            let input = &acts[li];
            let pre: Vec<f64> = delta.iter().zip(out).map(|(d, a)| d * (1.0 - a * a)).collect();
            let w_off = layer.offset;
            let b_off = layer.offset + layer.fan_out * layer.fan_in;
            let mut next = vec![0.0; layer.fan_in];
            for r in 0..layer.fan_out {
                let p = pre[r];
                if p == 0.0 {
                    continue;
                }
                let row = &theta.theta1[w_off + r * layer.fan_in..w_off + (r + 1) * layer.fan_in];
                for c in 0..layer.fan_in {
                    grad[w_off + r * layer.fan_in + c] = p * input[c];
                    next[c] += row[c] * p;
                }
                grad[b_off + r] = p;
            }
            delta = next;
        }
        grad
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

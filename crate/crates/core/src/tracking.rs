//! Reference trajectories, LQR tracking on the linearized coordinates, and
//! closed-loop error metrics.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, TAU};

use crate::dynamics::ControlAffineSystem;
use crate::error::{Error, Result};
use crate::fbl::ReferenceModel;
use crate::numerics::{integrate_rk4, lqr_gain, substeps_for, Matrix, Vector, DEFAULT_INNER_STEP};

/// State norm beyond which a tracking run is declared diverged.
pub const DIVERGENCE_CAP: f64 = 1e3;

/// Scalar reference signal with closed-form derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Signal {
    Constant { value: f64 },
    Ramp { offset: f64, slope: f64 },
    /// `offset + amplitude·sin(2π f t + phase)`.
    Sine { amplitude: f64, frequency_hz: f64, phase: f64, offset: f64 },
    /// `offset ± amplitude`, positive on the first half period.
    Square { amplitude: f64, period: f64, offset: f64 },
}

impl Signal {
    /// `n`-th time derivative at `t`.
    pub fn derivative(&self, n: usize, t: f64) -> f64 {
        match *self {
            Signal::Constant { value } => {
                if n == 0 {
                    value
                } else {
                    0.0
                }
            }
            Signal::Ramp { offset, slope } => match n {
                0 => offset + slope * t,
                1 => slope,
                _ => 0.0,
            },
            Signal::Sine {
                amplitude,
                frequency_hz,
                phase,
                offset,
            } => {
                let w = TAU * frequency_hz;
                let base = amplitude * w.powi(n as i32) * (w * t + phase + n as f64 * FRAC_PI_2).sin();
                if n == 0 {
                    base + offset
                } else {
                    base
                }
            }
            Signal::Square {
                amplitude,
                period,
                offset,
            } => {
                if n > 0 {
                    return 0.0;
                }
                let half = (t / (0.5 * period)).floor() as i64;
                if half.rem_euclid(2) == 0 {
                    offset + amplitude
                } else {
                    offset - amplitude
                }
            }
        }
    }
}

/// Named trajectory families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrajectoryKind {
    /// Every output follows the same sinusoid, shifted by a quarter period
    /// per channel.
    Sinusoid { amplitude: f64, frequency_hz: f64 },
    /// `x = a sin ωt`, `y = b sin 2ωt`, fixed height, oscillating yaw.
    FigureEight {
        a: f64,
        b: f64,
        frequency_hz: f64,
        height: f64,
        yaw_amplitude: f64,
    },
    /// Helix `(R cos ωt, R sin ωt, c t)` with oscillating yaw.
    Corkscrew {
        radius: f64,
        frequency_hz: f64,
        climb_rate: f64,
        yaw_amplitude: f64,
    },
    /// Set-points alternating between `±amplitude` every half period.
    SquareWave { amplitude: f64, period: f64 },
}

impl Default for TrajectoryKind {
    fn default() -> Self {
        TrajectoryKind::Sinusoid {
            amplitude: 0.5,
            frequency_hz: 0.5,
        }
    }
}

/// `t ↦ (ξ_r(t), v_r(t))` for a block relative degree `gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub gamma: Vec<usize>,
    pub channels: Vec<Signal>,
}

impl ReferenceTrajectory {
    pub fn new(gamma: Vec<usize>, channels: Vec<Signal>) -> Result<Self> {
        if gamma.len() != channels.len() || gamma.contains(&0) {
            return Err(Error::Dimension(format!("{} signals for relative degrees {gamma:?}", channels.len())));
        }
        Ok(Self { gamma, channels })
    }

    /// Reference outputs and their derivatives up to order γ_j − 1, in the
    /// interleaved chain order.
    pub fn chain(&self, t: f64) -> Vector {
        let n: usize = self.gamma.iter().sum();
        let mut xi = Vector::zeros(n);
        let mut row = 0;
        for (sig, &g) in self.channels.iter().zip(&self.gamma) {
            for d in 0..g {
                xi[row] = sig.derivative(d, t);
                row += 1;
            }
        }
        xi
    }

    /// Feed-forward `v_r(t)`: the γ_j-th derivative of each output.
    pub fn feedforward(&self, t: f64) -> Vector {
        Vector::from_iterator(self.channels.len(), self.channels.iter().zip(&self.gamma).map(|(s, &g)| s.derivative(g, t)))
    }

    pub fn outputs(&self, t: f64) -> Vector {
        Vector::from_iterator(self.channels.len(), self.channels.iter().map(|s| s.derivative(0, t)))
    }
}

pub fn reference(kind: &TrajectoryKind, gamma: &[usize]) -> Result<ReferenceTrajectory> {
    let q = gamma.len();
    let channels = match *kind {
        TrajectoryKind::Sinusoid {
            amplitude,
            frequency_hz,
        } => {
            check_positive_params(&[("frequency_hz", frequency_hz)])?;
            (0..q)
                .map(|j| Signal::Sine {
                    amplitude,
                    frequency_hz,
                    phase: j as f64 * FRAC_PI_2,
                    offset: 0.0,
                })
                .collect()
        }
        TrajectoryKind::SquareWave { amplitude, period } => {
            check_positive_params(&[("period", period)])?;
            (0..q)
                .map(|_| Signal::Square {
                    amplitude,
                    period,
                    offset: 0.0,
                })
                .collect()
        }
        TrajectoryKind::FigureEight {
            a,
            b,
            frequency_hz,
            height,
            yaw_amplitude,
        } => {
            require_quadrotor(gamma, "figure-eight")?;
            check_positive_params(&[("frequency_hz", frequency_hz)])?;
            vec![
                sine(a, frequency_hz, 0.0),
                sine(b, 2.0 * frequency_hz, 0.0),
                Signal::Constant { value: height },
                sine(yaw_amplitude, frequency_hz, 0.0),
            ]
        }
        TrajectoryKind::Corkscrew {
            radius,
            frequency_hz,
            climb_rate,
            yaw_amplitude,
        } => {
            require_quadrotor(gamma, "corkscrew")?;
            check_positive_params(&[("frequency_hz", frequency_hz)])?;
            vec![
                Signal::Sine {
                    amplitude: radius,
                    frequency_hz,
                    phase: FRAC_PI_2,
                    offset: 0.0,
                },
                sine(radius, frequency_hz, 0.0),
                Signal::Ramp {
                    offset: 0.0,
                    slope: climb_rate,
                },
                sine(yaw_amplitude, frequency_hz, 0.0),
            ]
        }
    };
    ReferenceTrajectory::new(gamma.to_vec(), channels)
}

fn sine(amplitude: f64, frequency_hz: f64, phase: f64) -> Signal {
    Signal::Sine {
        amplitude,
        frequency_hz,
        phase,
        offset: 0.0,
    }
}

fn require_quadrotor(gamma: &[usize], kind: &str) -> Result<()> {
    if gamma.len() != 4 || gamma[..3].iter().any(|&g| g < 2) {
        return Err(Error::InvalidParameter(format!(
            "{kind} needs three position outputs and a yaw output, got relative degrees {gamma:?}"
        )));
    }
    Ok(())
}

fn check_positive_params(items: &[(&str, f64)]) -> Result<()> {
    for (name, v) in items {
        if !(*v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(())
}

/// LQR gain on the reference model with `Q = 10·I`, `R = I`.
pub fn tracking_gain(reference: &ReferenceModel) -> Result<Matrix> {
    let n = reference.dim();
    let q = reference.inputs();
    lqr_gain(&reference.a, &reference.b, &(Matrix::identity(n, n) * 10.0), &Matrix::identity(q, q))
}

/// Plant state whose outputs start `offset` away from the reference, with
/// the higher derivatives on the reference.
pub fn initial_state(plant: &dyn ControlAffineSystem, traj: &ReferenceTrajectory, offset: f64) -> Result<Vector> {
    let mut xi = traj.chain(0.0);
    let mut row = 0;
    for &g in &traj.gamma {
        xi[row] += offset;
        row += g;
    }
    plant.state_from_output_chain(&xi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    pub dt: f64,
    pub times: Vec<f64>,
    pub outputs: Vec<Vec<f64>>,
    pub references: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub total_l2_error: f64,
    pub rms_error: Vec<f64>,
    pub diverged: bool,
    pub diverged_at: Option<f64>,
}

impl TrackingReport {
    pub fn errors(&self) -> Vec<Vec<f64>> {
        self.outputs
            .iter()
            .zip(&self.references)
            .map(|(y, r)| y.iter().zip(r).map(|(a, b)| a - b).collect())
            .collect()
    }

    /// `(√(Σ_k ‖e_k‖² dt), per-channel RMS)` from the stored trajectories.
    pub fn recompute_metrics(&self) -> (f64, Vec<f64>) {
        let errors = self.errors();
        let channels = errors.first().map_or(0, Vec::len);
        let mut sq = vec![0.0; channels];
        let mut total = 0.0;
        for e in &errors {
            for (j, v) in e.iter().enumerate() {
                sq[j] += v * v;
                total += v * v;
            }
        }
        let n = errors.len().max(1) as f64;
        ((total * self.dt).sqrt(), sq.iter().map(|s| (s / n).sqrt()).collect())
    }
}

/// Closed loop `v_k = v_r(t_k) + K(ξ_r(t_k) − ξ_k)`, `u_k = controller(x_k, v_k)`
/// held over each interval.
pub fn track<C>(
    plant: &dyn ControlAffineSystem,
    controller: C,
    traj: &ReferenceTrajectory,
    gain: &Matrix,
    x0: &Vector,
    duration: f64,
    dt: f64,
) -> Result<TrackingReport>
where
    C: Fn(&Vector, &Vector) -> Result<Vector>,
{
    if !(duration > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("duration and dt must be positive (got {duration}, {dt})")));
    }
    if traj.gamma != plant.relative_degree() {
        return Err(Error::Dimension("trajectory and plant relative degrees differ".into()));
    }
    let steps = (duration / dt).round().max(1.0) as usize;
    let substeps = substeps_for(dt, DEFAULT_INNER_STEP);
    let mut report = TrackingReport {
        dt,
        times: Vec::with_capacity(steps),
        outputs: Vec::with_capacity(steps),
        references: Vec::with_capacity(steps),
        inputs: Vec::with_capacity(steps),
        total_l2_error: 0.0,
        rms_error: vec![],
        diverged: false,
        diverged_at: None,
    };
    let mut x = x0.clone();
    for k in 0..steps {
        let t = k as f64 * dt;
        if !(x.norm() <= DIVERGENCE_CAP) {
            report.diverged = true;
            report.diverged_at = Some(t);
            break;
        }
        let xi = plant.output_chain(&x);
        let v = traj.feedforward(t) + gain * (traj.chain(t) - xi);
        let u = match controller(&x, &v) {
            Ok(u) => u,
            Err(Error::DecouplingSingularity { .. } | Error::ThrustSingularity { .. } | Error::Singular(_)) => {
                report.diverged = true;
                report.diverged_at = Some(t);
                break;
            }
            Err(e) => return Err(e),
        };
        report.times.push(t);
        report.outputs.push(plant.output(&x).iter().copied().collect());
        report.references.push(traj.outputs(t).iter().copied().collect());
        report.inputs.push(u.iter().copied().collect());
        match integrate_rk4(|x, u| plant.vector_field(x, u), &x, &u, dt, substeps) {
            Ok(next) => x = next,
            Err(Error::IntegrationDiverged { time }) => {
                report.diverged = true;
                report.diverged_at = Some(t + time);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let (total, rms) = report.recompute_metrics();
    report.total_l2_error = total;
    report.rms_error = rms;
    Ok(report)
}

/// Period of the periodic trajectory families, if any.
pub fn period(kind: &TrajectoryKind) -> Option<f64> {
    match *kind {
        TrajectoryKind::Sinusoid { frequency_hz, .. } | TrajectoryKind::FigureEight { frequency_hz, .. } => {
            Some(1.0 / frequency_hz)
        }
        TrajectoryKind::SquareWave { period, .. } => Some(period),
        TrajectoryKind::Corkscrew { .. } => None,
    }
}

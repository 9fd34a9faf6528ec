//! The expected linearization error `L(θ) = E ‖v − W_θ(x, v)‖²`, its Monte
//! Carlo estimate, and the exact quadratic form `θᵀWθ + θᵀF + d` it takes for
//! linear-in-parameters corrections.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{sample_state, ControlAffineSystem};
use crate::error::{Error, Result};
use crate::fbl::decoupling_terms;
use crate::numerics::{Matrix, Rng, Vector};
use crate::policy::{ControllerParams, LearnedController};

/// Samples per accumulation block. Partial sums are formed per block and
/// reduced in block order, so results do not depend on the thread count.
const BLOCK: usize = 512;

/// Default Monte Carlo budget for certification.
pub const DEFAULT_SAMPLES: usize = 100_000;

/// A frozen set of `(x, v)` draws, `x` uniform on the domain and `v` uniform
/// on the unit ball.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub states: Vec<Vector>,
    pub virtual_inputs: Vec<Vector>,
}

impl SampleSet {
    pub fn draw(system: &dyn ControlAffineSystem, n: usize, rng: &mut Rng) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("need at least one sample".into()));
        }
        let q = system.input_dim();
        let mut states = Vec::with_capacity(n);
        let mut virtual_inputs = Vec::with_capacity(n);
        for _ in 0..n {
            states.push(sample_state(system, rng));
            virtual_inputs.push(rng.unit_ball(q));
        }
        Ok(Self { states, virtual_inputs })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Sub-set with the given indices, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            states: indices.iter().map(|&i| self.states[i].clone()).collect(),
            virtual_inputs: indices.iter().map(|&i| self.virtual_inputs[i].clone()).collect(),
        }
    }

    fn blocks(&self) -> Vec<(usize, usize)> {
        (0..self.len()).step_by(BLOCK).map(|s| (s, (s + BLOCK).min(self.len()))).collect()
    }
}

/// `ℓ(x, v, θ) = ‖v − (b_p(x) + A_p(x) û_θ(x, v))‖²` with the plant's true
/// decoupling terms.
pub fn pointwise_loss(
    plant: &dyn ControlAffineSystem,
    controller: &LearnedController,
    theta: &ControllerParams,
    x: &Vector,
    v: &Vector,
) -> Result<f64> {
    let t = decoupling_terms(plant, x)?;
    let u = controller.control(theta, x, v)?;
    Ok((v - (&t.b + &t.a * u)).norm_squared())
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            stderr: (var / n).sqrt(),
        }
    }
}

/// Per-sample losses on a fixed sample set, in sample order.
pub fn losses_on_samples(
    plant: &dyn ControlAffineSystem,
    controller: &LearnedController,
    theta: &ControllerParams,
    samples: &SampleSet,
) -> Result<Vec<f64>> {
    let parts: Vec<Result<Vec<f64>>> = samples
        .blocks()
        .into_par_iter()
        .map(|(s, e)| {
            (s..e)
                .map(|i| pointwise_loss(plant, controller, theta, &samples.states[i], &samples.virtual_inputs[i]))
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(samples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn loss_on_samples(
    plant: &dyn ControlAffineSystem,
    controller: &LearnedController,
    theta: &ControllerParams,
    samples: &SampleSet,
) -> Result<Estimate> {
    Ok(Estimate::from_values(&losses_on_samples(plant, controller, theta, samples)?))
}

/// Monte Carlo estimate of `L(θ)` on fresh draws.
pub fn estimate_l(
    plant: &dyn ControlAffineSystem,
    controller: &LearnedController,
    theta: &ControllerParams,
    n_samples: usize,
    rng: &mut Rng,
) -> Result<Estimate> {
    let samples = SampleSet::draw(plant, n_samples, rng)?;
    loss_on_samples(plant, controller, theta, &samples)
}

/// `L(θ) = θᵀWθ + θᵀF + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub w: Matrix,
    pub f: Vector,
    pub d: f64,
    pub samples: usize,
}

const QF_MAGIC: &[u8; 8] = b"FBLQF\x00\x01\x00";

impl QuadraticForm {
    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn evaluate(&self, theta: &Vector) -> f64 {
        theta.dot(&(&self.w * theta)) + theta.dot(&self.f) + self.d
    }

    /// Little-endian binary: magic, `k` and sample count as `u64`, then `W`
    /// row-major, `F`, `d` as `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let k = self.dim();
        let mut out = Vec::with_capacity(24 + 8 * (k * k + k + 1));
        out.extend_from_slice(QF_MAGIC);
        out.extend_from_slice(&(k as u64).to_le_bytes());
        out.extend_from_slice(&(self.samples as u64).to_le_bytes());
        for i in 0..k {
            for j in 0..k {
                out.extend_from_slice(&self.w[(i, j)].to_le_bytes());
            }
        }
        for v in self.f.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.d.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Schema(format!("quadratic form: {m}"));
        if bytes.len() < 24 || &bytes[..8] != QF_MAGIC {
            return Err(bad("unrecognized header"));
        }
        let word = |i: usize| -> [u8; 8] { bytes[i..i + 8].try_into().expect("eight bytes") };
        let k = u64::from_le_bytes(word(8)) as usize;
        let samples = u64::from_le_bytes(word(16)) as usize;
        let expect = k
            .checked_mul(k)
            .and_then(|kk| kk.checked_add(k + 1))
            .and_then(|n| n.checked_mul(8))
            .and_then(|n| n.checked_add(24))
            .ok_or_else(|| bad("size overflow"))?;
        if bytes.len() != expect {
            return Err(bad(&format!("expected {expect} bytes, found {}", bytes.len())));
        }
        let f64_at = |i: usize| f64::from_le_bytes(word(24 + 8 * i));
        let w = Matrix::from_fn(k, k, |i, j| f64_at(i * k + j));
        let f = Vector::from_fn(k, |i, _| f64_at(k * k + i));
        let d = f64_at(k * k + k);
        Ok(Self { w, f, d, samples })
    }
}

/// Quadratic form on a fixed sample set. With `c = v − W̄` and
/// `Ŵ = A_p ∂û/∂θ`: `W = E[ŴᵀŴ]`, `F = −2 E[Ŵᵀc]`, `d = E[cᵀc]`.
pub fn quadratic_form_on_samples(
    plant: &dyn ControlAffineSystem,
    controller: &LearnedController,
    samples: &SampleSet,
) -> Result<QuadraticForm> {
    if !controller.param.is_linear() {
        return Err(Error::NotLinear);
    }
    if samples.is_empty() {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let zero = controller.param.zero_params();
    let k = zero.len();
    let q = controller.inputs();

    let parts: Vec<Result<(Matrix, Vector, f64)>> = samples
        .blocks()
        .into_par_iter()
        .map(|(s, e)| {
            let rows = (e - s) * q;
            let mut z = Matrix::zeros(rows, k);
            let mut c = Vector::zeros(rows);
            for (r, i) in (s..e).enumerate() {
                let x = &samples.states[i];
                let v = &samples.virtual_inputs[i];
                let t = decoupling_terms(plant, x)?;
                let u0 = controller.control(&zero, x, v)?;
                let jac = controller.control_jacobian(&zero, x, v)?;
                let what = &t.a * jac;
                let ci = v - (&t.b + &t.a * u0);
                z.view_mut((r * q, 0), (q, k)).copy_from(&what);
                c.rows_mut(r * q, q).copy_from(&ci);
            }
            let zt = z.transpose();
            let w = &zt * &z;
            let f = &zt * &c;
            Ok((w, f, c.norm_squared()))
        })
        .collect();

    let mut w = Matrix::zeros(k, k);
    let mut f = Vector::zeros(k);
    let mut d = 0.0;
    for p in parts {
        let (pw, pf, pd) = p?;
        w += pw;
        f += pf;
        d += pd;
    }
    let n = samples.len() as f64;
    w /= n;
    w = (&w + w.transpose()) * 0.5;
    f *= -2.0 / n;
    d /= n;
    Ok(QuadraticForm {
        w,
        f,
        d,
        samples: samples.len(),
    })
}

pub fn quadratic_form(
    plant: &dyn ControlAffineSystem,
    controller: &LearnedController,
    n_samples: usize,
    rng: &mut Rng,
) -> Result<QuadraticForm> {
    let samples = SampleSet::draw(plant, n_samples, rng)?;
    quadratic_form_on_samples(plant, controller, &samples)
}

/// Outcome of the positive-definiteness check on `W`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexityCertificate {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub strongly_convex: bool,
}

/// Relative eigenvalue threshold for strong convexity.
pub const STRONG_CONVEXITY_RATIO: f64 = 1e-8;

pub fn certify_strong_convexity(qf: &QuadraticForm) -> ConvexityCertificate {
    let sym = (&qf.w + qf.w.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ConvexityCertificate {
        min_eigenvalue: min,
        max_eigenvalue: max,
        strongly_convex: max > 0.0 && min > STRONG_CONVEXITY_RATIO * max,
    }
}

/// `θ* = −½ W⁻¹F`.
pub fn closed_form_optimum(qf: &QuadraticForm) -> Result<Vector> {
    let cert = certify_strong_convexity(qf);
    if !cert.strongly_convex {
        return Err(Error::NotStronglyConvex {
            min_eig: cert.min_eigenvalue,
            max_eig: cert.max_eigenvalue,
        });
    }
    let sym = (&qf.w + qf.w.transpose()) * 0.5;
    let chol = sym.cholesky().ok_or_else(|| Error::Singular("W is not positive definite".into()))?;
    Ok(chol.solve(&qf.f) * -0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DoublePendulum, DoublePendulumParams, ScalarAffine, ScaleParameters};
    use crate::policy::{make_rbf, Basis, LinearParameterization, MlpParameterization, NominalController, Parameterization};
    use proptest::prelude::*;
    use crate::numerics::Rng;
    use std::sync::Arc;

    fn toy() -> (ScalarAffine, LearnedController) {
        let plant = ScalarAffine::new(1.0, 1.0).unwrap();
        let param = LinearParameterization::new(1, vec![], Basis::Constant).unwrap();
        let ctrl = LearnedController::new(NominalController::Zero { inputs: 1 }, Parameterization::Linear(param)).unwrap();
        (plant, ctrl)
    }

    fn pendulum(count: usize, seed: u64) -> (DoublePendulum, LearnedController) {
        let plant = DoublePendulum::new(DoublePendulumParams::default()).unwrap();
        let model = DoublePendulum::new(DoublePendulumParams::default().scaled(0.5).unwrap()).unwrap();
        let param = make_rbf(count, &plant, None, false, &mut Rng::new(seed)).unwrap();
        let ctrl = LearnedController::new(NominalController::Model(Arc::new(model)), Parameterization::Linear(param)).unwrap();
        (plant, ctrl)
    }

    fn params(v: &[f64]) -> ControllerParams {
        ControllerParams {
            theta1: vec![v[0]],
            theta2: vec![v[1]],
        }
    }

    #[test]
    fn toy_loss_at_zero_input() {
        let (plant, ctrl) = toy();
        let l = pointwise_loss(&plant, &ctrl, &params(&[0.0, 0.0]), &Vector::from_vec(vec![0.2]), &Vector::zeros(1)).unwrap();
        assert_eq!(l, 1.0);
    }

    #[test]
    fn toy_quadratic_form_matches_population_values() {
        let (plant, ctrl) = toy();
        let qf = quadratic_form(&plant, &ctrl, 200_000, &mut Rng::new(5)).unwrap();
        assert!((qf.w[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(qf.w[(0, 1)].abs() < 5e-3);
        assert!((qf.w[(1, 1)] - 1.0 / 3.0).abs() < 5e-3);
        assert!((qf.f[0] - 2.0).abs() < 1e-2);
        assert!((qf.f[1] + 2.0 / 3.0).abs() < 1e-2);
        assert!((qf.d - 4.0 / 3.0).abs() < 1e-2);
    }

    #[test]
    fn toy_optimum_matches_grid_search() {
        let (plant, ctrl) = toy();
        let samples = SampleSet::draw(&plant, 2000, &mut Rng::new(9)).unwrap();
        let qf = quadratic_form_on_samples(&plant, &ctrl, &samples).unwrap();
        let star = closed_form_optimum(&qf).unwrap();

        // Coarse-to-fine grid search directly on the sample-average loss.
        let loss = |a: f64, b: f64| loss_on_samples(&plant, &ctrl, &params(&[a, b]), &samples).unwrap().mean;
        let (mut ca, mut cb, mut span) = (0.0, 0.0, 4.0);
        for _ in 0..30 {
            let mut best = (f64::INFINITY, ca, cb);
            for i in -10..=10 {
                for j in -10..=10 {
                    let a = ca + span * i as f64 / 10.0;
                    let b = cb + span * j as f64 / 10.0;
                    let l = loss(a, b);
                    if l < best.0 {
                        best = (l, a, b);
                    }
                }
            }
            (ca, cb) = (best.1, best.2);
            span *= 0.3;
        }
        assert!((star[0] - ca).abs() < 1e-6, "{} vs {ca}", star[0]);
        assert!((star[1] - cb).abs() < 1e-6, "{} vs {cb}", star[1]);
        // The plant ẏ = u + 1 is realized exactly by û = −1 + v.
        assert!((star[0] + 1.0).abs() < 1e-9 && (star[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exact_controller_has_zero_loss() {
        let (plant, ctrl) = toy();
        let est = estimate_l(&plant, &ctrl, &params(&[-1.0, 1.0]), 1000, &mut Rng::new(2)).unwrap();
        assert!(est.mean < 1e-18);
        assert!(est.stderr < 1e-18);
    }

    #[test]
    fn half_sample_means_average_to_full_mean() {
        let (plant, ctrl) = pendulum(10, 1);
        let samples = SampleSet::draw(&plant, 1000, &mut Rng::new(3)).unwrap();
        let theta = ctrl.param.zero_params();
        let all = losses_on_samples(&plant, &ctrl, &theta, &samples).unwrap();
        let first: f64 = all[..500].iter().sum::<f64>() / 500.0;
        let second: f64 = all[500..].iter().sum::<f64>() / 500.0;
        let full = loss_on_samples(&plant, &ctrl, &theta, &samples).unwrap().mean;
        assert!(((first + second) / 2.0 - full).abs() <= 1e-14 * full.max(1.0));
    }

    #[test]
    fn stderr_scales_inverse_sqrt() {
        let (plant, ctrl) = pendulum(5, 1);
        let theta = ctrl.param.zero_params();
        let e3 = estimate_l(&plant, &ctrl, &theta, 1_000, &mut Rng::new(10)).unwrap();
        let e4 = estimate_l(&plant, &ctrl, &theta, 10_000, &mut Rng::new(11)).unwrap();
        let e5 = estimate_l(&plant, &ctrl, &theta, 100_000, &mut Rng::new(12)).unwrap();
        let r1 = e3.stderr / e4.stderr / 10f64.sqrt();
        let r2 = e4.stderr / e5.stderr / 10f64.sqrt();
        assert!((r1 - 1.0).abs() < 0.2, "{r1}");
        assert!((r2 - 1.0).abs() < 0.2, "{r2}");
    }

    #[test]
    fn reconstruction_identity_on_shared_samples() {
        let (plant, ctrl) = pendulum(8, 4);
        let samples = SampleSet::draw(&plant, 3000, &mut Rng::new(6)).unwrap();
        let qf = quadratic_form_on_samples(&plant, &ctrl, &samples).unwrap();
        let mut rng = Rng::new(7);
        let k1 = ctrl.param.k1();
        for _ in 0..10 {
            let flat = Vector::from_fn(qf.dim(), |_, _| rng.uniform(-2.0, 2.0));
            let direct = loss_on_samples(&plant, &ctrl, &ControllerParams::from_flat(k1, &flat), &samples).unwrap().mean;
            let quad = qf.evaluate(&flat);
            assert!((direct - quad).abs() <= 1e-9 * direct.max(1.0), "{direct} vs {quad}");
        }
    }

    #[test]
    fn duplicated_basis_is_singular() {
        let (plant, ctrl) = pendulum(6, 8);
        let Parameterization::Linear(p) = &ctrl.param else { unreachable!() };
        let dup = LearnedController::new(ctrl.nominal.clone(), Parameterization::Linear(p.with_duplicated_feature(1).unwrap())).unwrap();
        let samples = SampleSet::draw(&plant, 2000, &mut Rng::new(1)).unwrap();
        let good = certify_strong_convexity(&quadratic_form_on_samples(&plant, &ctrl, &samples).unwrap());
        let bad_qf = quadratic_form_on_samples(&plant, &dup, &samples).unwrap();
        let bad = certify_strong_convexity(&bad_qf);
        assert!(good.strongly_convex);
        assert!(!bad.strongly_convex);
        assert!(bad.min_eigenvalue < 1e-8 * bad.max_eigenvalue);
        assert!(matches!(closed_form_optimum(&bad_qf), Err(Error::NotStronglyConvex { .. })));
    }

    #[test]
    fn identity_form() {
        let qf = QuadraticForm {
            w: Matrix::identity(3, 3),
            f: Vector::zeros(3),
            d: 0.0,
            samples: 1,
        };
        let cert = certify_strong_convexity(&qf);
        assert_eq!(cert.min_eigenvalue, 1.0);
        assert!(cert.strongly_convex);
        assert_eq!(closed_form_optimum(&qf).unwrap(), Vector::zeros(3));
    }

    #[test]
    fn mlp_rejected() {
        let plant = DoublePendulum::new(DoublePendulumParams::default()).unwrap();
        let p = MlpParameterization::new(&plant, &[4], None).unwrap();
        let ctrl = LearnedController::new(NominalController::Zero { inputs: 2 }, Parameterization::Mlp(p)).unwrap();
        assert!(matches!(quadratic_form(&plant, &ctrl, 10, &mut Rng::new(1)), Err(Error::NotLinear)));
    }

    #[test]
    fn optimum_permutes_with_basis() {
        let (plant, ctrl) = pendulum(5, 2);
        let Parameterization::Linear(p) = &ctrl.param else { unreachable!() };
        let perm = [3, 0, 4, 2, 1];
        let permuted = LearnedController::new(ctrl.nominal.clone(), Parameterization::Linear(p.permuted(&perm).unwrap())).unwrap();
        let samples = SampleSet::draw(&plant, 2000, &mut Rng::new(3)).unwrap();
        let a = closed_form_optimum(&quadratic_form_on_samples(&plant, &ctrl, &samples).unwrap()).unwrap();
        let b = closed_form_optimum(&quadratic_form_on_samples(&plant, &permuted, &samples).unwrap()).unwrap();
        let (q, k1) = (2, 10);
        for (new, &old) in perm.iter().enumerate() {
            for j in 0..q {
                assert!((b[new * q + j] - a[old * q + j]).abs() < 1e-8 * a.amax().max(1.0));
            }
            for j in 0..q * q {
                assert!((b[k1 + new * q * q + j] - a[k1 + old * q * q + j]).abs() < 1e-8 * a.amax().max(1.0));
            }
        }
    }

    #[test]
    fn bytes_round_trip() {
        let (plant, ctrl) = pendulum(3, 2);
        let qf = quadratic_form(&plant, &ctrl, 100, &mut Rng::new(1)).unwrap();
        let back = QuadraticForm::from_bytes(&qf.to_bytes()).unwrap();
        assert_eq!(qf, back);
        assert!(QuadraticForm::from_bytes(&qf.to_bytes()[..30]).is_err());
    }

    #[test]
    fn optimum_beats_probes() {
        let (plant, ctrl) = pendulum(6, 3);
        let samples = SampleSet::draw(&plant, 2000, &mut Rng::new(4)).unwrap();
        let qf = quadratic_form_on_samples(&plant, &ctrl, &samples).unwrap();
        let star = closed_form_optimum(&qf).unwrap();
        let best = qf.evaluate(&star);
        let mut rng = Rng::new(5);
        for _ in 0..100 {
            let probe = &star + Vector::from_fn(qf.dim(), |_, _| rng.uniform(-1.0, 1.0));
            assert!(best <= qf.evaluate(&probe));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn midpoint_convexity(seed in 0u64..1000) {
            let (plant, ctrl) = pendulum(4, 1);
            let samples = SampleSet::draw(&plant, 300, &mut Rng::new(17)).unwrap();
            let mut rng = Rng::new(seed);
            let k = ctrl.param.k1() + ctrl.param.k2();
            let k1 = ctrl.param.k1();
            let a = Vector::from_fn(k, |_, _| rng.uniform(-3.0, 3.0));
            let b = Vector::from_fn(k, |_, _| rng.uniform(-3.0, 3.0));
            let m = (&a + &b) * 0.5;
            let l = |t: &Vector| loss_on_samples(&plant, &ctrl, &ControllerParams::from_flat(k1, t), &samples).unwrap().mean;
            let (la, lb, lm) = (l(&a), l(&b), l(&m));
            prop_assert!(lm <= 0.5 * la + 0.5 * lb + 1e-9 * (la + lb));
        }

        #[test]
        fn losses_nonnegative(seed in 0u64..1000) {
            let (plant, ctrl) = pendulum(4, 1);
            let mut rng = Rng::new(seed);
            let x = plant.domain().sample(&mut rng);
            let v = rng.unit_ball(2);
            let flat = Vector::from_fn(ctrl.param.k1() + ctrl.param.k2(), |_, _| rng.uniform(-5.0, 5.0));
            let theta = ControllerParams::from_flat(ctrl.param.k1(), &flat);
            prop_assert!(pointwise_loss(&plant, &ctrl, &theta, &x, &v).unwrap() >= 0.0);
        }
    }
}

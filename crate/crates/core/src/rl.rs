//! Policy evaluation with TDC: the Mountain Car and inverted pendulum
//! environments under their random evaluation policies, coupled Fourier
//! features, and the NEU (norm of the expected TD update) metric.
//!
//! Environment constants follow the OpenAI Gym implementations. Both
//! environments emit costs, not rewards.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matproc::Vector;

pub const MOUNTAIN_CAR_POSITION: (f64, f64) = (-1.2, 0.6);
pub const MOUNTAIN_CAR_SPEED: f64 = 0.07;
pub const MOUNTAIN_CAR_GOAL: f64 = 0.5;
const MOUNTAIN_CAR_FORCE: f64 = 0.001;
const MOUNTAIN_CAR_GRAVITY: f64 = 0.0025;
/// Reset interval for the car position.
pub const MOUNTAIN_CAR_START: (f64, f64) = (-0.6, 0.4);

pub const PENDULUM_MAX_SPEED: f64 = 8.0;
pub const PENDULUM_MAX_TORQUE: f64 = 2.0;
const PENDULUM_DT: f64 = 0.05;
const PENDULUM_G: f64 = 10.0;
const PENDULUM_MASS: f64 = 1.0;
const PENDULUM_LENGTH: f64 = 1.0;

pub const DEFAULT_DISCOUNT: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    MountainCar,
    InvertedPendulum,
}

/// Pendulum cost: `θ² + 0.1θ̇² + 0.001u²` (`Squared`, the Gym form) or the
/// linear-rate variant `θ² + 0.1θ̇ + 0.001u²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PendulumCost {
    #[default]
    Squared,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    /// Episode step cap.
    pub max_steps: usize,
    pub zeta: f64,
    pub pendulum_cost: PendulumCost,
}

impl EnvSpec {
    pub fn mountain_car(max_steps: usize) -> Self {
        EnvSpec {
            kind: EnvKind::MountainCar,
            max_steps,
            zeta: DEFAULT_DISCOUNT,
            pendulum_cost: PendulumCost::Squared,
        }
    }

    pub fn inverted_pendulum(max_steps: usize) -> Self {
        EnvSpec {
            kind: EnvKind::InvertedPendulum,
            max_steps,
            zeta: DEFAULT_DISCOUNT,
            pendulum_cost: PendulumCost::Squared,
        }
    }

    /// Box bounding the observation vector.
    pub fn observation_bounds(&self) -> Vec<(f64, f64)> {
        match self.kind {
            EnvKind::MountainCar => vec![MOUNTAIN_CAR_POSITION, (-MOUNTAIN_CAR_SPEED, MOUNTAIN_CAR_SPEED)],
            EnvKind::InvertedPendulum => vec![(-1.0, 1.0), (-1.0, 1.0), (-PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED)],
        }
    }

    /// Observation: `(position, velocity)` or `(cos θ, sin θ, θ̇)`.
    pub fn observe(&self, state: &EnvState) -> Vec<f64> {
        match self.kind {
            EnvKind::MountainCar => vec![state.0[0], state.0[1]],
            EnvKind::InvertedPendulum => vec![state.0[0].cos(), state.0[0].sin(), state.0[1]],
        }
    }
}

/// Physical state: `(position, velocity)` or `(θ, θ̇)` with `θ = 0` upright.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState(pub [f64; 2]);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    /// Mountain Car push: 0 left, 1 none, 2 right.
    Push(u8),
    Torque(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub cost: f64,
    pub done: bool,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Maps an angle to `[−π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

pub fn env_reset<R: Rng + ?Sized>(spec: &EnvSpec, rng: &mut R) -> EnvState {
    match spec.kind {
        EnvKind::MountainCar => EnvState([uniform(rng, MOUNTAIN_CAR_START.0, MOUNTAIN_CAR_START.1), 0.0]),
        EnvKind::InvertedPendulum => {
            let theta = uniform(rng, -PI, PI);
            EnvState([theta, uniform(rng, -1.0, 1.0)])
        }
    }
}

pub fn env_step(spec: &EnvSpec, state: &EnvState, action: Action) -> Result<StepOutcome> {
    match (spec.kind, action) {
        (EnvKind::MountainCar, Action::Push(a)) if a <= 2 => {
            let [pos, vel] = state.0;
            if pos >= MOUNTAIN_CAR_GOAL {
                return Ok(StepOutcome {
                    state: *state,
                    cost: 0.0,
                    done: true,
                });
            }
            let vel = (vel + (f64::from(a) - 1.0) * MOUNTAIN_CAR_FORCE - MOUNTAIN_CAR_GRAVITY * (3.0 * pos).cos())
                .clamp(-MOUNTAIN_CAR_SPEED, MOUNTAIN_CAR_SPEED);
            let pos = (pos + vel).clamp(MOUNTAIN_CAR_POSITION.0, MOUNTAIN_CAR_POSITION.1);
            let vel = if pos == MOUNTAIN_CAR_POSITION.0 && vel < 0.0 {
                0.0
            } else {
                vel
            };
            let done = pos >= MOUNTAIN_CAR_GOAL;
            Ok(StepOutcome {
                state: EnvState([pos, vel]),
                cost: if done { 0.0 } else { 1.0 },
                done,
            })
        }
        (EnvKind::InvertedPendulum, Action::Torque(u)) if u.abs() <= PENDULUM_MAX_TORQUE => {
            let [theta, rate] = state.0;
            let angle = wrap_angle(theta);
            let rate_term = match spec.pendulum_cost {
                PendulumCost::Squared => rate * rate,
                PendulumCost::Linear => rate,
            };
            let cost = angle * angle + 0.1 * rate_term + 0.001 * u * u;
            let accel = 3.0 * PENDULUM_G / (2.0 * PENDULUM_LENGTH) * theta.sin()
                + 3.0 / (PENDULUM_MASS * PENDULUM_LENGTH * PENDULUM_LENGTH) * u;
            let rate = (rate + accel * PENDULUM_DT).clamp(-PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED);
            let theta = wrap_angle(theta + rate * PENDULUM_DT);
            Ok(StepOutcome {
                state: EnvState([theta, rate]),
                cost,
                done: false,
            })
        }
        (_, a) => Err(Error::InvalidAction(format!("{a:?} is not valid for {:?}", spec.kind))),
    }
}

/// Mountain Car: full push left or right with equal odds; pendulum: torque
/// uniform on `[−2, 2]`.
pub fn random_policy<R: Rng + ?Sized>(spec: &EnvSpec, rng: &mut R) -> Action {
    match spec.kind {
        EnvKind::MountainCar => Action::Push(if rng.random::<f64>() < 0.5 { 0 } else { 2 }),
        EnvKind::InvertedPendulum => Action::Torque(uniform(rng, -PENDULUM_MAX_TORQUE, PENDULUM_MAX_TORQUE)),
    }
}

/// Coupled Fourier basis `φ_j(x) = cos(π c_j·x̄)` over all coefficient
/// vectors `c_j ∈ {0..order}^d`, with `x̄` the state rescaled to `[0, 1]^d`.
/// Coefficients are enumerated lexicographically, first coordinate most
/// significant.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierBasis {
    pub order: u32,
    pub bounds: Vec<(f64, f64)>,
    pub coefficients: Vec<Vec<u32>>,
}

impl FourierBasis {
    pub fn new(order: u32, bounds: Vec<(f64, f64)>) -> Self {
        let d = bounds.len();
        let base = order as usize + 1;
        let count = base.pow(d as u32);
        let coefficients = (0..count)
            .map(|mut idx| {
                let mut c = vec![0u32; d];
                for slot in c.iter_mut().rev() {
                    *slot = (idx % base) as u32;
                    idx /= base;
                }
                c
            })
            .collect();
        FourierBasis {
            order,
            bounds,
            coefficients,
        }
    }

    pub fn for_env(spec: &EnvSpec, order: u32) -> Self {
        FourierBasis::new(order, spec.observation_bounds())
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Rescales to `[0, 1]^d`, clamping out-of-box inputs.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.bounds)
            .map(|(v, (lo, hi))| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect()
    }

    pub fn features_into(&self, x: &[f64], out: &mut [f64]) {
        let xn = self.normalize(x);
        for (o, c) in out.iter_mut().zip(&self.coefficients) {
            let dot: f64 = c.iter().zip(&xn).map(|(ci, xi)| f64::from(*ci) * xi).sum();
            *o = (PI * dot).cos();
        }
    }

    pub fn features(&self, x: &[f64]) -> Vector {
        let mut out = vec![0.0; self.len()];
        self.features_into(x, &mut out);
        Vector::from_vec(out)
    }
}

/// Value weights `U` (slow) and auxiliary weights `V` (fast).
#[derive(Debug, Clone, PartialEq)]
pub struct TdcWeights {
    pub u: Vector,
    pub v: Vector,
}

impl TdcWeights {
    pub fn zeros(n: usize) -> Self {
        TdcWeights {
            u: Vector::zeros(n),
            v: Vector::zeros(n),
        }
    }

    /// `(U, V)` stacked into one vector.
    pub fn stacked(&self) -> Vector {
        let n = self.u.len();
        let mut out = Vector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&self.u);
        out.rows_mut(n, n).copy_from(&self.v);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }
}

/// TD error `c + ζφ'ᵀU − φᵀU`.
pub fn td_error(u: &Vector, phi: &[f64], phi_next: &[f64], cost: f64, zeta: f64) -> f64 {
    let mut next = 0.0;
    let mut cur = 0.0;
    for i in 0..u.len() {
        next += phi_next[i] * u[i];
        cur += phi[i] * u[i];
    }
    cost + zeta * next - cur
}

/// One TDC update:
///
/// ```text
/// U' = U + ε^α (φ − ζφ') φᵀV
/// V' = V + ε^β (δ − φᵀV) φ
/// ```
///
/// with `δ` computed from the pre-update `U`.
pub fn tdc_step(
    w: &mut TdcWeights,
    phi: &[f64],
    phi_next: &[f64],
    cost: f64,
    zeta: f64,
    eps_alpha: f64,
    eps_beta: f64,
) -> Result<()> {
    let n = w.u.len();
    if w.v.len() != n || phi.len() != n || phi_next.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "weights ({}, {}) and features ({}, {})",
            n,
            w.v.len(),
            phi.len(),
            phi_next.len()
        )));
    }
    let delta = td_error(&w.u, phi, phi_next, cost, zeta);
    let phi_v: f64 = phi.iter().zip(w.v.iter()).map(|(a, b)| a * b).sum();
    let gain_u = eps_alpha * phi_v;
    let gain_v = eps_beta * (delta - phi_v);
    for i in 0..n {
        w.u[i] += gain_u * (phi[i] - zeta * phi_next[i]);
        w.v[i] += gain_v * phi[i];
    }
    Ok(())
}

/// Running mean of `δφ` over pooled transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuAccumulator {
    sum: Vec<f64>,
    count: usize,
}

impl NeuAccumulator {
    pub fn new(n: usize) -> Self {
        NeuAccumulator {
            sum: vec![0.0; n],
            count: 0,
        }
    }

    pub fn add(&mut self, u: &Vector, phi: &[f64], phi_next: &[f64], cost: f64, zeta: f64) {
        let delta = td_error(u, phi, phi_next, cost, zeta);
        for (s, p) in self.sum.iter_mut().zip(phi) {
            *s += delta * p;
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// `‖mean δφ‖²`; zero when nothing was added.
    pub fn value(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let n = self.count as f64;
        self.sum.iter().map(|s| (s / n) * (s / n)).sum()
    }
}

/// Runs one episode under the random policy, calling `visit(φ, φ', cost)`
/// for every transition. `φ' = 0` on entering the goal; the episode is
/// cut at `spec.max_steps` without bootstrapping past the cut.
pub fn run_episode<R, F>(spec: &EnvSpec, basis: &FourierBasis, rng: &mut R, mut visit: F) -> Result<usize>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64], &[f64], f64) -> Result<()>,
{
    let n = basis.len();
    let mut state = env_reset(spec, rng);
    let mut phi = vec![0.0; n];
    let mut phi_next = vec![0.0; n];
    basis.features_into(&spec.observe(&state), &mut phi);
    for t in 0..spec.max_steps {
        let action = random_policy(spec, rng);
        let out = env_step(spec, &state, action)?;
        if out.done {
            phi_next.iter_mut().for_each(|p| *p = 0.0);
        } else {
            basis.features_into(&spec.observe(&out.state), &mut phi_next);
        }
        visit(&phi, &phi_next, out.cost)?;
        if out.done {
            return Ok(t + 1);
        }
        state = out.state;
        std::mem::swap(&mut phi, &mut phi_next);
    }
    Ok(spec.max_steps)
}

/// NEU of frozen weights over `n_test_episodes` random-policy episodes.
pub fn neu<R: Rng + ?Sized>(
    weights: &TdcWeights,
    spec: &EnvSpec,
    basis: &FourierBasis,
    n_test_episodes: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_test_episodes == 0 {
        return Err(Error::InvalidArgument("need at least one test episode".into()));
    }
    let mut acc = NeuAccumulator::new(basis.len());
    for _ in 0..n_test_episodes {
        run_episode(spec, basis, rng, |phi, phi_next, cost| {
            acc.add(&weights.u, phi, phi_next, cost, spec.zeta);
            Ok(())
        })?;
    }
    Ok(acc.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream_rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, RngCore};

    /// Always returns the midpoint of the unit interval.
    struct MidRng;
    impl RngCore for MidRng {
        fn next_u32(&mut self) -> u32 {
            1 << 31
        }
        fn next_u64(&mut self) -> u64 {
            1 << 63
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            dst.fill(0);
        }
    }

    #[test]
    fn midpoint_resets() {
        let s = env_reset(&EnvSpec::mountain_car(200), &mut MidRng);
        assert_relative_eq!(s.0[0], -0.1, epsilon = 1e-15);
        assert_eq!(s.0[1], 0.0);
        let s = env_reset(&EnvSpec::inverted_pendulum(50), &mut MidRng);
        assert_eq!(s.0, [0.0, 0.0]);
    }

    #[test]
    fn resets_stay_in_range() {
        let mut rng = stream_rng(1, 0);
        let mc = EnvSpec::mountain_car(200);
        let pd = EnvSpec::inverted_pendulum(50);
        let (mut lo, mut hi) = (f64::MAX, f64::MIN);
        for _ in 0..10_000 {
            let s = env_reset(&mc, &mut rng);
            lo = lo.min(s.0[0]);
            hi = hi.max(s.0[0]);
            assert_eq!(s.0[1], 0.0);
            let p = env_reset(&pd, &mut rng);
            assert!((-PI..=PI).contains(&p.0[0]) && (-1.0..=1.0).contains(&p.0[1]));
        }
        assert!(lo >= -0.6 && hi <= 0.4 && lo < -0.59 && hi > 0.39);
    }

    #[test]
    fn mountain_car_steps() {
        let spec = EnvSpec::mountain_car(200);
        let out = env_step(&spec, &EnvState([0.5, 0.0]), Action::Push(1)).unwrap();
        assert!(out.done);
        assert_eq!(out.cost, 0.0);

        let out = env_step(&spec, &EnvState([-0.5, 0.0]), Action::Push(2)).unwrap();
        // 0.001 − 0.0025·cos(−1.5) at 40 digits
        let v = 0.0008231569958307427;
        assert_relative_eq!(out.state.0[1], v, max_relative = 1e-14);
        assert_relative_eq!(out.state.0[0], -0.5 + v, max_relative = 1e-15);
        assert_eq!(out.cost, 1.0);
        assert!(!out.done);

        // left wall stops the car
        let out = env_step(&spec, &EnvState([-1.19, -0.07]), Action::Push(0)).unwrap();
        assert_eq!(out.state.0, [-1.2, 0.0]);
        // reaching the goal costs nothing
        let out = env_step(&spec, &EnvState([0.49, 0.07]), Action::Push(2)).unwrap();
        assert!(out.done && out.cost == 0.0);
        assert!(matches!(
            env_step(&spec, &EnvState([0.0, 0.0]), Action::Push(3)),
            Err(Error::InvalidAction(_))
        ));
        assert!(env_step(&spec, &EnvState([0.0, 0.0]), Action::Torque(0.0)).is_err());
    }

    #[test]
    fn pendulum_steps() {
        let spec = EnvSpec::inverted_pendulum(50);
        let out = env_step(&spec, &EnvState([0.0, 0.0]), Action::Torque(0.0)).unwrap();
        assert_eq!(out.state.0, [0.0, 0.0]);
        assert_eq!(out.cost, 0.0);
        assert!(!out.done);

        let out = env_step(&spec, &EnvState([0.3, -1.0]), Action::Torque(1.5)).unwrap();
        let rate = -1.0 + (15.0 * 0.3f64.sin() + 3.0 * 1.5) * 0.05;
        assert_relative_eq!(out.state.0[1], rate, max_relative = 1e-15);
        assert_relative_eq!(out.state.0[0], 0.3 + rate * 0.05, max_relative = 1e-15);
        assert_relative_eq!(out.cost, 0.09 + 0.1 + 0.001 * 2.25, max_relative = 1e-15);

        let linear = EnvSpec {
            pendulum_cost: PendulumCost::Linear,
            ..spec
        };
        let out = env_step(&linear, &EnvState([0.3, -1.0]), Action::Torque(1.5)).unwrap();
        assert_relative_eq!(out.cost, 0.09 - 0.1 + 0.001 * 2.25, max_relative = 1e-14);

        let out = env_step(&spec, &EnvState([PI - 0.01, 8.0]), Action::Torque(2.0)).unwrap();
        assert_eq!(out.state.0[1], 8.0);
        assert!(out.state.0[0] < 0.0);
        assert!(env_step(&spec, &EnvState([0.0, 0.0]), Action::Torque(2.5)).is_err());
    }

    #[test]
    fn random_policy_frequencies() {
        let mut rng = stream_rng(2, 0);
        let mc = EnvSpec::mountain_car(200);
        let mut counts = [0usize; 3];
        for _ in 0..10_000 {
            match random_policy(&mc, &mut rng) {
                Action::Push(a) => counts[a as usize] += 1,
                _ => unreachable!(),
            }
        }
        assert_eq!(counts[1], 0);
        assert!((counts[0] as f64 / 1e4 - 0.5).abs() <= 0.02);
        let pd = EnvSpec::inverted_pendulum(50);
        let mean: f64 = (0..100_000)
            .map(|_| match random_policy(&pd, &mut rng) {
                Action::Torque(u) => u,
                _ => unreachable!(),
            })
            .sum::<f64>()
            / 1e5;
        assert!(mean.abs() <= 0.02);
    }

    #[test]
    fn fourier_examples() {
        let b = FourierBasis::new(3, vec![(0.0, 1.0)]);
        assert_eq!(b.features(&[1.0]).as_slice(), &[1.0, -1.0, 1.0, -1.0]);
        let b = FourierBasis::new(3, vec![(-1.0, 1.0), (0.0, 2.0), (0.0, 1.0)]);
        assert_eq!(b.len(), 64);
        assert!(b.features(&[-1.0, 0.0, 0.0]).iter().all(|&f| f == 1.0));

        let b = FourierBasis::new(3, vec![(-1.2, 0.6), (-0.07, 0.07)]);
        let x = [-0.3, 0.02];
        let phi = b.features(&x);
        let xn = [(x[0] + 1.2) / 1.8, (x[1] + 0.07) / 0.14];
        let mut j = 0;
        for c0 in 0..4 {
            for c1 in 0..4 {
                let want = (PI * (c0 as f64 * xn[0] + c1 as f64 * xn[1])).cos();
                assert_relative_eq!(phi[j], want, epsilon = 1e-14);
                j += 1;
            }
        }
        assert_eq!(j, 16);
        assert_eq!(phi[0], 1.0);
    }

    #[test]
    fn tdc_examples() {
        let mut w = TdcWeights::zeros(1);
        tdc_step(&mut w, &[1.0], &[1.0], 1.0, 0.95, 0.01, 0.1).unwrap();
        assert_eq!(w.u[0], 0.0);
        assert_eq!(w.v[0], 0.1);

        // V = 0 and δ = 0 leave the weights alone
        let mut w = TdcWeights {
            u: Vector::from_vec(vec![1.0, 0.0]),
            v: Vector::zeros(2),
        };
        let before = w.clone();
        tdc_step(&mut w, &[1.0, 0.0], &[0.0, 0.0], 1.0, 0.9, 0.01, 0.1).unwrap();
        assert_eq!(w, before);
        assert!(matches!(
            tdc_step(&mut w, &[1.0], &[1.0], 0.0, 0.9, 0.1, 0.1),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn tdc_matches_matrix_form() {
        let mut rng = stream_rng(3, 0);
        let mut w = TdcWeights {
            u: Vector::from_fn(4, |_, _| rng.random_range(-1.0..1.0)),
            v: Vector::from_fn(4, |_, _| rng.random_range(-1.0..1.0)),
        };
        for _ in 0..100 {
            let phi = Vector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let phi_n = Vector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let cost: f64 = rng.random();
            let (ea, eb, z) = (0.01, 0.1, 0.95);
            let delta = cost + z * phi_n.dot(&w.u) - phi.dot(&w.u);
            let u_next = &w.u + (&phi - &phi_n * z) * (phi.transpose() * &w.v) * ea;
            let v_next = &w.v + &phi * ((delta - phi.dot(&w.v)) * eb);
            tdc_step(&mut w, phi.as_slice(), phi_n.as_slice(), cost, z, ea, eb).unwrap();
            assert!((&w.u - u_next).amax() <= 1e-12);
            assert!((&w.v - v_next).amax() <= 1e-12);
        }
    }

    #[test]
    fn neu_examples() {
        let mut acc = NeuAccumulator::new(2);
        // δ = 2 with U = 0 needs cost 2
        acc.add(&Vector::zeros(2), &[1.0, 0.0], &[0.0, 0.0], 2.0, 0.95);
        assert_eq!(acc.value(), 4.0);

        let mut acc = NeuAccumulator::new(2);
        for _ in 0..10 {
            acc.add(&Vector::zeros(2), &[0.3, 0.7], &[0.1, 0.2], 0.0, 0.95);
        }
        assert_eq!(acc.value(), 0.0);
        assert_eq!(NeuAccumulator::new(3).value(), 0.0);

        let spec = EnvSpec::mountain_car(50);
        let b = FourierBasis::for_env(&spec, 3);
        let w = TdcWeights::zeros(16);
        let a = neu(&w, &spec, &b, 20, &mut stream_rng(5, 1)).unwrap();
        let c = neu(&w, &spec, &b, 20, &mut stream_rng(5, 1)).unwrap();
        assert_eq!(a, c);
        // every step before the goal costs 1 and U = 0, so δ ≡ 1 and NEU = ‖mean φ‖²
        assert!(a > 0.0);
        assert!(neu(&w, &spec, &b, 0, &mut stream_rng(5, 1)).is_err());
    }

    #[test]
    fn neu_ignores_transition_order() {
        let u = Vector::from_vec(vec![0.2, -0.4]);
        let items = [
            ([1.0, 0.5], [0.2, 0.1], 1.0),
            ([0.3, -0.5], [0.0, 0.0], 0.5),
            ([-1.0, 0.25], [0.4, 0.4], 2.0),
        ];
        let mut fwd = NeuAccumulator::new(2);
        let mut rev = NeuAccumulator::new(2);
        for (p, q, c) in &items {
            fwd.add(&u, p, q, *c, 0.95);
        }
        for (p, q, c) in items.iter().rev() {
            rev.add(&u, p, q, *c, 0.95);
        }
        assert_relative_eq!(fwd.value(), rev.value(), max_relative = 1e-14);
    }

    #[test]
    fn episodes_respect_cap_and_goal() {
        let spec = EnvSpec::mountain_car(30);
        let b = FourierBasis::for_env(&spec, 3);
        let mut calls = 0;
        let steps = run_episode(&spec, &b, &mut stream_rng(1, 0), |_, _, _| {
            calls += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(steps, 30);
        assert_eq!(calls, 30);
    }

    proptest! {
        #[test]
        fn states_stay_in_bounds(seed in 0u64..500) {
            let mut rng = stream_rng(seed, 0);
            for spec in [EnvSpec::mountain_car(200), EnvSpec::inverted_pendulum(50)] {
                let b = FourierBasis::for_env(&spec, 3);
                let bounds = spec.observation_bounds();
                let mut s = env_reset(&spec, &mut rng);
                for _ in 0..200 {
                    let out = env_step(&spec, &s, random_policy(&spec, &mut rng)).unwrap();
                    let obs = spec.observe(&out.state);
                    for (v, (lo, hi)) in obs.iter().zip(&bounds) {
                        prop_assert!(*v >= *lo && *v <= *hi);
                    }
                    let phi = b.features(&obs);
                    prop_assert!(phi.norm() <= (b.len() as f64).sqrt() + 1e-12);
                    prop_assert!(phi.iter().all(|p| p.abs() <= 1.0));
                    if out.done { break; }
                    s = out.state;
                }
            }
        }
    }
}

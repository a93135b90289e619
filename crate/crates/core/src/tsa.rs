//! The two time-scale recursion
//!
//! ```text
//! U' = U + ε^α (A_uu(x) U + A_uv(x) V + b_u(x))
//! V' = V + ε^β (A_vu(x) U + A_vv(x) V + b_v(x))
//! ```
//!
//! driven by a finite Markov chain, together with the `(U, Z)` coordinates,
//! the weighted Lyapunov function `W(Θ) = ΘᵀPΘ`, step-size schedules and
//! trajectory traces.

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapt::{adaptive_update, AdaptiveHyperparams, AdaptiveState};
use crate::chainlab::{steady_state_means, MarkovLsaInstance, SteadyState};
use crate::error::{Error, Result};
use crate::matproc::{self, build_block_p, operator_norm, solve_lyapunov, Matrix, SpectralSummary, Vector};
use crate::stream_rng;

/// The Lyapunov-side objects derived from the steady-state blocks: `P_u`,
/// `P_v` (both with `Q = I`), the block weights and the combined `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovGeometry {
    pub p_u: Matrix,
    pub p_v: Matrix,
    /// `2‖P_u Ā_uv‖`.
    pub xi_u: f64,
    /// `2‖P_v Ā_vv⁻¹ Ā_vu B̄‖`.
    pub xi_v: f64,
    /// `2‖P_v Ā_vv⁻¹ Ā_vu Ā_uv‖`.
    pub nu: f64,
    pub p: Matrix,
    pub spectrum: SpectralSummary,
}

impl LyapunovGeometry {
    pub fn new(ss: &SteadyState) -> Result<Self> {
        let eye_u = Matrix::identity(ss.a_uu.nrows(), ss.a_uu.nrows());
        let eye_v = Matrix::identity(ss.a_vv.nrows(), ss.a_vv.nrows());
        let p_u = solve_lyapunov(&ss.b_bar, &eye_u)?;
        let p_v = solve_lyapunov(&ss.a_vv, &eye_v)?;
        let xi_u = 2.0 * operator_norm(&(&p_u * &ss.a_uv));
        let xi_v = 2.0 * operator_norm(&(&p_v * &ss.coupling * &ss.b_bar));
        let nu = 2.0 * operator_norm(&(&p_v * &ss.coupling * &ss.a_uv));
        let p = build_block_p(&p_u, &p_v, xi_u, xi_v)?;
        let spectrum = matproc::spectral_bounds(&p)?;
        Ok(LyapunovGeometry {
            p_u,
            p_v,
            xi_u,
            xi_v,
            nu,
            p,
            spectrum,
        })
    }
}

/// An instance bundled with its steady state and Lyapunov geometry.
#[derive(Debug, Clone)]
pub struct System {
    pub instance: MarkovLsaInstance,
    pub steady: SteadyState,
    pub geometry: LyapunovGeometry,
    dynamics: Dynamics,
}

impl System {
    pub fn new(instance: MarkovLsaInstance) -> Result<Self> {
        let steady = steady_state_means(&instance)?;
        let geometry = LyapunovGeometry::new(&steady)?;
        let dynamics = Dynamics::new(&instance);
        Ok(System {
            instance,
            steady,
            geometry,
            dynamics,
        })
    }

    pub fn theta(&self, u: &Vector, v: &Vector) -> ThetaView {
        ThetaView::from_uv(&self.steady.coupling, u, v)
    }

    /// Recovers `V = Z − Ā_vv⁻¹Ā_vu U`.
    pub fn v_from_z(&self, u: &Vector, z: &Vector) -> Vector {
        z - &self.steady.coupling * u
    }

    pub(crate) fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    /// Draws a chain state from the stationary law.
    pub fn sample_stationary_state(&self, rng: &mut ChaCha8Rng) -> usize {
        sample_index(self.steady.pi.iter().copied(), rng.random::<f64>())
    }
}

/// Iterate of the recursion: `(U_k, V_k)`, the chain state `X_k` and the
/// random stream that drives the chain.
#[derive(Debug, Clone)]
pub struct IterateState {
    pub k: u64,
    pub u: Vector,
    pub v: Vector,
    pub chain_state: usize,
    pub rng: ChaCha8Rng,
}

impl IterateState {
    pub fn new(u: Vector, v: Vector, chain_state: usize, rng: ChaCha8Rng) -> Self {
        IterateState {
            k: 0,
            u,
            v,
            chain_state,
            rng,
        }
    }
}

/// `Θ = (U, Z)` with `Z = V + Ā_vv⁻¹ Ā_vu U`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaView {
    pub u: Vector,
    pub z: Vector,
}

impl ThetaView {
    pub fn from_uv(coupling: &Matrix, u: &Vector, v: &Vector) -> Self {
        ThetaView {
            u: u.clone(),
            z: v + coupling * u,
        }
    }

    pub fn theta(&self) -> Vector {
        let mut t = Vector::zeros(self.u.len() + self.z.len());
        t.rows_mut(0, self.u.len()).copy_from(&self.u);
        t.rows_mut(self.u.len(), self.z.len()).copy_from(&self.z);
        t
    }

    pub fn norm_squared(&self) -> f64 {
        self.u.norm_squared() + self.z.norm_squared()
    }
}

/// `W(Θ) = ΘᵀPΘ`.
pub fn lyapunov_value(theta: &ThetaView, p: &Matrix) -> Result<f64> {
    let t = theta.theta();
    if p.shape() != (t.len(), t.len()) {
        return Err(Error::DimensionMismatch(format!(
            "Θ has {} entries but P is {:?}",
            t.len(),
            p.shape()
        )));
    }
    Ok(t.dot(&(p * &t)))
}

fn sample_index(probs: impl Iterator<Item = f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (j, p) in probs.enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = j;
            if u < acc {
                return j;
            }
        }
    }
    last_positive
}

fn check_rates(eps_alpha: f64, eps_beta: f64) -> Result<()> {
    if eps_alpha > 0.0 && eps_alpha < 1.0 && eps_beta > 0.0 && eps_beta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "step sizes must lie in (0, 1), got ({eps_alpha}, {eps_beta})"
        )))
    }
}

/// One step of the recursion with coefficients evaluated at the current
/// chain state, followed by one chain transition sampled from `state.rng`.
pub fn step(instance: &MarkovLsaInstance, state: &mut IterateState, eps_alpha: f64, eps_beta: f64) -> Result<()> {
    check_rates(eps_alpha, eps_beta)?;
    if state.u.len() != instance.dim_u() || state.v.len() != instance.dim_v() {
        return Err(Error::DimensionMismatch(format!(
            "iterate dims ({}, {}) vs instance dims ({}, {})",
            state.u.len(),
            state.v.len(),
            instance.dim_u(),
            instance.dim_v()
        )));
    }
    if state.chain_state >= instance.n_states() {
        return Err(Error::DimensionMismatch(format!(
            "chain state {} out of range",
            state.chain_state
        )));
    }
    let s = instance.state(state.chain_state);
    let du = &s.a_uu * &state.u + &s.a_uv * &state.v + &s.b_u;
    let dv = &s.a_vu * &state.u + &s.a_vv * &state.v + &s.b_v;
    state.u += du * eps_alpha;
    state.v += dv * eps_beta;
    let row = instance.transition().row(state.chain_state);
    state.chain_state = sample_index(row.iter().copied(), state.rng.random::<f64>());
    state.k += 1;
    Ok(())
}

/// Flat, allocation-free copy of an instance used by the hot simulation
/// loops. Produces the same iterates and chain path as [`step`].
#[derive(Debug, Clone)]
pub(crate) struct Dynamics {
    dim: usize,
    dim_u: usize,
    n_states: usize,
    /// Row-major `dim × dim` system matrix per state.
    a: Vec<f64>,
    b: Vec<f64>,
    transition: Vec<f64>,
}

impl Dynamics {
    fn new(instance: &MarkovLsaInstance) -> Self {
        let dim = instance.dim();
        let n = instance.n_states();
        let mut a = Vec::with_capacity(n * dim * dim);
        let mut b = Vec::with_capacity(n * dim);
        for s in instance.states() {
            let full = s.full_matrix();
            for i in 0..dim {
                for j in 0..dim {
                    a.push(full[(i, j)]);
                }
            }
            b.extend(s.full_offset().iter());
        }
        let t = instance.transition();
        let transition = (0..n).flat_map(|i| (0..n).map(move |j| t[(i, j)])).collect();
        Dynamics {
            dim,
            dim_u: instance.dim_u(),
            n_states: n,
            a,
            b,
            transition,
        }
    }

    /// Advances `theta = (U, V)` in place. `scratch` must hold `dim` entries.
    #[inline]
    pub(crate) fn advance(
        &self,
        theta: &mut [f64],
        x: &mut usize,
        eps_alpha: f64,
        eps_beta: f64,
        rng: &mut ChaCha8Rng,
        scratch: &mut [f64],
    ) {
        let d = self.dim;
        let a = &self.a[*x * d * d..(*x + 1) * d * d];
        let b = &self.b[*x * d..(*x + 1) * d];
        for i in 0..d {
            let row = &a[i * d..(i + 1) * d];
            let mut acc = 0.0;
            for j in 0..d {
                acc += row[j] * theta[j];
            }
            scratch[i] = acc + b[i];
        }
        for i in 0..d {
            let eps = if i < self.dim_u { eps_alpha } else { eps_beta };
            theta[i] += eps * scratch[i];
        }
        let n = self.n_states;
        let row = &self.transition[*x * n..(*x + 1) * n];
        *x = sample_index(row.iter().copied(), rng.random::<f64>());
    }
}

/// Maps `(U, V)` to `Θ = (U, Z)` in place into `out`.
pub(crate) fn uv_to_theta(coupling: &Matrix, uv: &[f64], dim_u: usize, out: &mut [f64]) {
    let d = uv.len();
    out[..dim_u].copy_from_slice(&uv[..dim_u]);
    for i in 0..d - dim_u {
        let mut acc = uv[dim_u + i];
        for j in 0..dim_u {
            acc += coupling[(i, j)] * uv[j];
        }
        out[dim_u + i] = acc;
    }
}

pub(crate) fn quad_form(p: &Matrix, t: &[f64]) -> f64 {
    let d = t.len();
    let mut acc = 0.0;
    for j in 0..d {
        let mut col = 0.0;
        for i in 0..d {
            col += p[(i, j)] * t[i];
        }
        acc += col * t[j];
    }
    acc
}

/// Step-size policy producing `(ε^α_k, ε^β_k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// `(μ^λ, μ)` at every step.
    Constant { mu: f64, lambda: f64 },
    /// `(ρ₀/(k+1)^α, ρ₀/(k+1)^β)`.
    Polynomial { rho0: f64, alpha: f64, beta: f64 },
    /// Constant `(μ^λ, μ)` with `μ` lowered by the slope diagnostic.
    Adaptive(AdaptiveHyperparams),
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::Constant { mu, lambda } => {
                if mu > 0.0 && mu < 1.0 && lambda > 1.0 && lambda.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(format!(
                        "constant schedule needs mu in (0,1), lambda > 1; got mu = {mu}, lambda = {lambda}"
                    )))
                }
            }
            Schedule::Polynomial { rho0, alpha, beta } => {
                if rho0 > 0.0 && rho0.is_finite() && alpha > beta && beta > 0.0 && alpha.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(format!(
                        "polynomial schedule needs rho0 > 0 and alpha > beta > 0; got rho0 = {rho0}, alpha = {alpha}, beta = {beta}"
                    )))
                }
            }
            Schedule::Adaptive(hp) => hp.validate(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Schedule::Constant { .. } => "constant",
            Schedule::Polynomial { .. } => "polynomial",
            Schedule::Adaptive(_) => "adaptive",
        }
    }
}

/// Rates at step `k`. For an adaptive schedule the current rate comes from
/// `adaptive` (falling back to the initial `ρ`).
pub fn schedule_rates(schedule: &Schedule, k: u64, adaptive: Option<&AdaptiveState>) -> (f64, f64) {
    match *schedule {
        Schedule::Constant { mu, lambda } => (mu.powf(lambda), mu),
        Schedule::Polynomial { rho0, alpha, beta } => {
            let t = (k + 1) as f64;
            (rho0 / t.powf(alpha), rho0 / t.powf(beta))
        }
        Schedule::Adaptive(hp) => {
            let mu = adaptive.map_or(hp.rho, |a| a.mu);
            (mu.powf(hp.lambda), mu)
        }
    }
}

/// A schedule together with whatever state it carries.
#[derive(Debug, Clone)]
pub struct RateController {
    schedule: Schedule,
    adaptive: Option<AdaptiveState>,
}

impl RateController {
    /// `theta0` seeds the adaptive reference point; ignored otherwise.
    pub fn new(schedule: Schedule, theta0: &Vector) -> Result<Self> {
        schedule.validate()?;
        let adaptive = match &schedule {
            Schedule::Adaptive(hp) => Some(AdaptiveState::new(hp, theta0.clone())),
            _ => None,
        };
        Ok(RateController { schedule, adaptive })
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn adaptive_state(&self) -> Option<&AdaptiveState> {
        self.adaptive.as_ref()
    }

    pub fn rates(&self, k: u64) -> (f64, f64) {
        schedule_rates(&self.schedule, k, self.adaptive.as_ref())
    }

    /// Feeds an iterate to the adaptive rule. Returns the new rate on decay.
    pub fn observe(&mut self, theta: &Vector) -> Result<Option<f64>> {
        match (&self.schedule, self.adaptive.as_mut()) {
            (Schedule::Adaptive(hp), Some(state)) => Ok(adaptive_update(state, hp, theta)?.then_some(state.mu)),
            _ => Ok(None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub k: u64,
    pub eps_alpha: f64,
    pub eps_beta: f64,
    pub theta_sq: f64,
    pub lyapunov: f64,
    pub dist_ref: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayEvent {
    pub k: u64,
    pub mu_new: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub stride: u64,
    pub records: Vec<TraceRecord>,
    pub decays: Vec<DecayEvent>,
}

pub const TRACE_HEADER: &str = "k,eps_alpha,eps_beta,theta_sq,lyapunov,dist_ref";

impl Trace {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# stride = {}", self.stride);
        let _ = writeln!(out, "{TRACE_HEADER}");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.k,
                matproc::fmt_f64(r.eps_alpha),
                matproc::fmt_f64(r.eps_beta),
                matproc::fmt_f64(r.theta_sq),
                matproc::fmt_f64(r.lyapunov),
                matproc::fmt_f64(r.dist_ref)
            );
        }
        out
    }

    /// Decay events as `k,decay,mu_new` rows.
    pub fn decays_csv(&self) -> String {
        let mut out = String::from("k,decay,mu_new\n");
        for (i, d) in self.decays.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", d.k, i + 1, matproc::fmt_f64(d.mu_new));
        }
        out
    }
}

/// Default thinning: every step up to 10⁵ steps, otherwise `⌈steps/10⁵⌉`.
pub fn default_stride(steps: u64) -> u64 {
    if steps <= 100_000 {
        1
    } else {
        steps.div_ceil(100_000)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub steps: u64,
    pub seed: u64,
    pub run_index: u64,
    pub u0: Vector,
    pub v0: Vector,
    /// Reference for the `dist_ref` column; the origin when absent.
    pub theta_ref: Option<Vector>,
    pub stride: Option<u64>,
}

impl TrajectorySpec {
    pub fn new(steps: u64, seed: u64, u0: Vector, v0: Vector) -> Self {
        TrajectorySpec {
            steps,
            seed,
            run_index: 0,
            u0,
            v0,
            theta_ref: None,
            stride: None,
        }
    }
}

/// Runs the recursion from `(u0, v0)` with `X₀` drawn from the stationary
/// law and records `Θ = (U, Z)` statistics every `stride` steps. The
/// adaptive rule, if any, sees `Θ_{k+1}` after every step.
pub fn run_trajectory(system: &System, schedule: &Schedule, spec: &TrajectorySpec) -> Result<Trace> {
    let inst = &system.instance;
    if spec.u0.len() != inst.dim_u() || spec.v0.len() != inst.dim_v() {
        return Err(Error::DimensionMismatch(
            "initial iterate does not match instance dims".into(),
        ));
    }
    let d = inst.dim();
    let theta_ref = spec.theta_ref.clone().unwrap_or_else(|| Vector::zeros(d));
    if theta_ref.len() != d {
        return Err(Error::DimensionMismatch("theta_ref has the wrong length".into()));
    }
    let stride = spec.stride.unwrap_or_else(|| default_stride(spec.steps)).max(1);
    let mut rng = stream_rng(spec.seed, spec.run_index);
    let mut x = system.sample_stationary_state(&mut rng);
    let mut uv: Vec<f64> = spec.u0.iter().chain(spec.v0.iter()).copied().collect();
    let mut theta = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    let coupling = &system.steady.coupling;
    let p = &system.geometry.p;
    let dyn_ = system.dynamics();

    uv_to_theta(coupling, &uv, inst.dim_u(), &mut theta);
    let mut ctrl = RateController::new(*schedule, &Vector::from_column_slice(&theta))?;
    let mut trace = Trace {
        stride,
        records: Vec::with_capacity((spec.steps / stride + 2) as usize),
        decays: Vec::new(),
    };
    let record = |k: u64, rates: (f64, f64), theta: &[f64]| TraceRecord {
        k,
        eps_alpha: rates.0,
        eps_beta: rates.1,
        theta_sq: theta.iter().map(|t| t * t).sum(),
        lyapunov: quad_form(p, theta),
        dist_ref: theta
            .iter()
            .zip(theta_ref.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt(),
    };
    trace.records.push(record(0, ctrl.rates(0), &theta));
    for k in 0..spec.steps {
        let (ea, eb) = ctrl.rates(k);
        check_rates(ea, eb)?;
        dyn_.advance(&mut uv, &mut x, ea, eb, &mut rng, &mut scratch);
        uv_to_theta(coupling, &uv, inst.dim_u(), &mut theta);
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::UnstableRegime(format!("iterate diverged at step {}", k + 1)));
        }
        if matches!(schedule, Schedule::Adaptive(_)) {
            if let Some(mu_new) = ctrl.observe(&Vector::from_column_slice(&theta))? {
                trace.decays.push(DecayEvent { k: k + 1, mu_new });
            }
        }
        let next = k + 1;
        if next % stride == 0 || next == spec.steps {
            trace.records.push(record(next, ctrl.rates(next), &theta));
        }
    }
    Ok(trace)
}

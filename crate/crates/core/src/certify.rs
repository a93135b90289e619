//! Finite-time constants, the mean-square error bound, and Monte-Carlo
//! checks of the one-step drift inequality and of the bound itself.
//!
//! Step sizes are parameterized as `(ε^α, ε^β)`. A constant schedule
//! `(μ^λ, μ)` corresponds to `ε = μ`, `β = 1`, `α = λ`.

use std::fmt;

use rayon::prelude::*;

use crate::chainlab::{eps_tilde, mixing_time_with};
use crate::error::{Error, Result};
use crate::matproc::{floored_weights, fmt_f64, Vector};
use crate::stream_rng;
use crate::tsa::{quad_form, uv_to_theta, Schedule, System};

/// Points on the geometric grid used to certify `κ₂`.
pub const KAPPA_GRID_POINTS: usize = 10_000;
/// Lower end of the certification grid relative to `μ_max`.
pub const KAPPA_GRID_SPAN: f64 = 1e-10;
/// Largest `κ₂` accepted as a certificate.
pub const KAPPA2_LIMIT: f64 = 1e12;
/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;

/// `(ε, α, β)` for the constant schedule `(μ^λ, μ)`.
pub fn constant_step_params(mu: f64, lambda: f64) -> (f64, f64, f64) {
    (mu, lambda, 1.0)
}

/// `δ = 2(1 + ‖Ā_vv⁻¹Ā_vu‖ + ε^(β−α))`.
pub fn drift_delta(epsilon: f64, alpha: f64, beta: f64, coupling_norm: f64) -> f64 {
    2.0 * (1.0 + coupling_norm + epsilon.powf(beta - alpha))
}

/// Entries `(a, b, d)` of the symmetric 2×2 matrix
/// `Ψ(μ) = 1/(ξ₁+ξ₂)·[[ξ₂, −ξ₁ξ₂], [−ξ₁ξ₂, ξ₁(1/μ − ν)]]`.
fn psi_entries(xi1: f64, xi2: f64, nu: f64, mu: f64) -> (f64, f64, f64) {
    let s = xi1 + xi2;
    (xi2 / s, -xi1 * xi2 / s, xi1 * (1.0 / mu - nu) / s)
}

/// `a − λ_min` for the symmetric matrix `[[a, b], [b, d]]`, free of
/// cancellation on both sides of `a = d`.
fn gap_below_first_diagonal(a: f64, b: f64, d: f64) -> f64 {
    let half = (a - d) / 2.0;
    let r = half.hypot(b);
    if half > 0.0 {
        half + r
    } else if b == 0.0 {
        0.0
    } else {
        b * b / (r - half)
    }
}

/// Smallest eigenvalue of `Ψ(μ)`.
pub fn psi_min_eigenvalue(xi1: f64, xi2: f64, nu: f64, mu: f64) -> f64 {
    let (a, b, d) = psi_entries(xi1, xi2, nu, mu);
    a - gap_below_first_diagonal(a, b, d)
}

/// `(κ₁ − λ_min(Ψ(μ))) / μ`, the smallest `κ₂` valid at `μ`.
fn required_kappa2(xi1: f64, xi2: f64, nu: f64, mu: f64) -> f64 {
    let (a, b, d) = psi_entries(xi1, xi2, nu, mu);
    gap_below_first_diagonal(a, b, d) / mu
}

/// `κ₁ = ξ₂/(ξ₁+ξ₂)` and the smallest grid-certified `κ₂` with
/// `λ_min(Ψ(μ)) ≥ κ₁ − κ₂μ` on `(0, μ_max]`.
///
/// The grid is geometric over `[μ_max·10⁻¹⁰, μ_max]`; the `μ → 0` limit
/// `ξ₁ξ₂²/(ξ₁+ξ₂)` covers the rest, and the grid maximum is polished by a
/// golden-section search between its neighbours.
pub fn eigen_lower_bound(xi1: f64, xi2: f64, nu: f64, mu_max: f64) -> Result<(f64, f64)> {
    if !(xi1 > 0.0 && xi2 > 0.0 && nu >= 0.0 && mu_max > 0.0) || ![xi1, xi2, nu, mu_max].iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "need xi1, xi2, mu_max > 0 and nu >= 0; got ({xi1}, {xi2}, {nu}, {mu_max})"
        )));
    }
    let kappa1 = xi2 / (xi1 + xi2);
    let g = |mu: f64| required_kappa2(xi1, xi2, nu, mu);
    let lo = mu_max * KAPPA_GRID_SPAN;
    let ratio = (mu_max / lo).powf(1.0 / (KAPPA_GRID_POINTS - 1) as f64);
    let grid: Vec<f64> = (0..KAPPA_GRID_POINTS)
        .map(|i| {
            if i + 1 == KAPPA_GRID_POINTS {
                mu_max
            } else {
                lo * ratio.powi(i as i32)
            }
        })
        .collect();
    let (best_idx, mut kappa2) =
        grid.iter()
            .map(|&m| g(m))
            .enumerate()
            .fold(
                (0, xi1 * xi2 * xi2 / (xi1 + xi2)),
                |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
            );
    if best_idx > 0 || g(grid[0]) >= kappa2 {
        let mut left = grid[best_idx.saturating_sub(1)];
        let mut right = grid[(best_idx + 1).min(KAPPA_GRID_POINTS - 1)];
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..100 {
            let m1 = right - phi * (right - left);
            let m2 = left + phi * (right - left);
            if g(m1) > g(m2) {
                right = m2;
            } else {
                left = m1;
            }
            if right - left <= 1e-15 * right {
                break;
            }
        }
        kappa2 = kappa2.max(g(0.5 * (left + right)));
    }
    // guard against round-off in the final comparison
    let kappa2 = kappa2.max(0.0) * (1.0 + 1e-9);
    if !(kappa2 <= KAPPA2_LIMIT) {
        return Err(Error::NoValidKappa2 { mu_max });
    }
    Ok((kappa1, kappa2))
}

/// Every constant entering the drift inequality and the error bound.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftConstants {
    pub epsilon: f64,
    pub alpha: f64,
    pub beta: f64,
    /// `‖Ā_vv⁻¹Ā_vu‖`.
    pub coupling_norm: f64,
    pub delta: f64,
    pub eps_tilde: f64,
    pub tau: usize,
    pub b_max: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub xi_u: f64,
    pub xi_v: f64,
    pub nu: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub eta1_tilde: f64,
    pub eta2_tilde: f64,
    pub eta2: f64,
    pub c: f64,
    pub k1: f64,
    pub k2: f64,
    /// `Θ₀ = (U₀, Z₀)`.
    pub theta0: Vector,
}

impl DriftConstants {
    pub fn eps_alpha(&self) -> f64 {
        self.epsilon.powf(self.alpha)
    }

    pub fn eps_beta(&self) -> f64 {
        self.epsilon.powf(self.beta)
    }

    /// `κ₁/2 − κ₂ε^(α−β)`.
    pub fn contraction_margin(&self) -> f64 {
        self.kappa1 / 2.0 - self.kappa2 * self.epsilon.powf(self.alpha - self.beta)
    }

    /// Steady-state part of the bound, `ε^(2β−α)·K₂/(κ₁/2 − κ₂ε^(α−β))`.
    pub fn steady_state_term(&self) -> f64 {
        self.epsilon.powf(2.0 * self.beta - self.alpha) * self.k2 / self.contraction_margin()
    }

    /// The two terms of the one-step condition `η̃₁ε̃τ + 2(ε̃²/ε^α)γ_max`,
    /// to be compared with `κ₁/2`.
    pub fn step_condition_terms(&self) -> (f64, f64) {
        let tau = self.tau as f64;
        (
            self.eta1_tilde * self.eps_tilde * tau,
            2.0 * self.eps_tilde * self.eps_tilde / self.eps_alpha() * self.gamma_max,
        )
    }

    pub fn step_condition_holds(&self) -> bool {
        let (t1, t2) = self.step_condition_terms();
        t1 + t2 <= self.kappa1 / 2.0
    }
}

impl fmt::Display for DriftConstants {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: [(&str, f64); 20] = [
            ("epsilon", self.epsilon),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("coupling_norm", self.coupling_norm),
            ("delta", self.delta),
            ("eps_tilde", self.eps_tilde),
            ("b_max", self.b_max),
            ("gamma_min", self.gamma_min),
            ("gamma_max", self.gamma_max),
            ("xi_u", self.xi_u),
            ("xi_v", self.xi_v),
            ("nu", self.nu),
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
            ("eta1_tilde", self.eta1_tilde),
            ("eta2_tilde", self.eta2_tilde),
            ("eta2", self.eta2),
            ("c", self.c),
            ("K1", self.k1),
            ("K2", self.k2),
        ];
        for (name, value) in rows {
            writeln!(f, "{name} = {}", fmt_f64(value))?;
        }
        writeln!(f, "tau = {}", self.tau)?;
        let (t1, t2) = self.step_condition_terms();
        writeln!(f, "steady_state_term = {}", fmt_f64(self.steady_state_term()))?;
        writeln!(f, "step_condition_lhs = {}", fmt_f64(t1 + t2))?;
        writeln!(f, "step_condition_rhs = {}", fmt_f64(self.kappa1 / 2.0))?;
        writeln!(f, "# the one-step condition uses eta1_tilde in place of eta1")
    }
}

/// Evaluates every constant for step sizes `(ε^α, ε^β)` and initial
/// point `Θ₀ = (U₀, Z₀)`.
pub fn compute_constants(
    system: &System,
    epsilon: f64,
    alpha: f64,
    beta: f64,
    theta0: &Vector,
) -> Result<DriftConstants> {
    if !(0.0 < beta && beta < alpha && 0.0 < epsilon && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < beta < alpha and 0 < epsilon < 1; got epsilon = {epsilon}, alpha = {alpha}, beta = {beta}"
        )));
    }
    if theta0.len() != system.instance.dim() {
        return Err(Error::DimensionMismatch(format!(
            "theta0 has {} entries, instance dimension is {}",
            theta0.len(),
            system.instance.dim()
        )));
    }
    let geo = &system.geometry;
    let coupling_norm = system.steady.coupling_norm();
    let delta = drift_delta(epsilon, alpha, beta, coupling_norm);
    let et = eps_tilde(epsilon, alpha, beta, coupling_norm);
    if !(et < 1.0) {
        return Err(Error::AssumptionViolation(format!("eps_tilde = {et} must be below 1")));
    }
    let tau = mixing_time_with(system.instance.transition(), &system.steady.pi, et)?;
    if et * tau as f64 > 0.25 {
        return Err(Error::AssumptionViolation(format!(
            "eps_tilde * tau = {} exceeds 1/4 (eps_tilde = {et}, tau = {tau})",
            et * tau as f64
        )));
    }
    let b_max = system.instance.b_max();
    let gamma_min = geo.spectrum.gamma_min;
    let gamma_max = geo.spectrum.gamma_max;
    let (xi1, xi2) = floored_weights(geo.xi_u, geo.xi_v)?;
    let mu_max = epsilon.powf(alpha - beta);
    let (kappa1, kappa2) = eigen_lower_bound(xi1, xi2, geo.nu, mu_max)?;
    let base = 10.0 * gamma_max * (1.0 + 6.0 * delta);
    let eta1_tilde = base * (1.0 + b_max);
    let eta2_tilde = base * (1.0 + b_max).powi(3);
    let eta2 = (3.0 + 2.0 * coupling_norm) * (eta2_tilde + 4.0 * (1.0 + coupling_norm)) + 6.0 + 4.0 * coupling_norm;
    let c = (kappa1 / 2.0 - kappa2 * mu_max) / gamma_max;
    if !(c > 0.0) {
        return Err(Error::AssumptionViolation(format!(
            "c = {c} is not positive (kappa1 = {kappa1}, kappa2 = {kappa2}, eps^(alpha-beta) = {mu_max})"
        )));
    }
    let ratio = gamma_max / gamma_min;
    let k1 = ratio * (1.5 * theta0.norm() + 0.5 * b_max).powi(2);
    let k2 = ratio * eta2 * tau as f64;
    Ok(DriftConstants {
        epsilon,
        alpha,
        beta,
        coupling_norm,
        delta,
        eps_tilde: et,
        tau,
        b_max,
        gamma_min,
        gamma_max,
        xi_u: geo.xi_u,
        xi_v: geo.xi_v,
        nu: geo.nu,
        kappa1,
        kappa2,
        eta1_tilde,
        eta2_tilde,
        eta2,
        c,
        k1,
        k2,
        theta0: theta0.clone(),
    })
}

/// Upper bound on `E‖Θ_k‖²` for `k ≥ τ`.
pub fn mse_bound(constants: &DriftConstants, k: u64) -> Result<f64> {
    let tau = constants.tau as u64;
    if k < tau {
        return Err(Error::InvalidArgument(format!("k = {k} precedes tau = {tau}")));
    }
    let margin = constants.contraction_margin();
    if !(margin > 0.0) {
        return Err(Error::UnstableRegime(format!(
            "kappa1/2 - kappa2 eps^(alpha-beta) = {margin}"
        )));
    }
    let rate = constants.eps_alpha() / constants.gamma_max * margin;
    let transient = constants.k1 * ((k - tau) as f64 * (-rate).ln_1p()).exp();
    Ok(transient + constants.steady_state_term())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCurve {
    pub points: Vec<(u64, f64)>,
}

impl BoundCurve {
    pub fn new(constants: &DriftConstants, ks: impl IntoIterator<Item = u64>) -> Result<Self> {
        let points = ks
            .into_iter()
            .map(|k| mse_bound(constants, k).map(|b| (k, b)))
            .collect::<Result<_>>()?;
        Ok(BoundCurve { points })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,bound\n");
        for (k, b) in &self.points {
            out.push_str(&format!("{k},{}\n", fmt_f64(*b)));
        }
        out
    }
}

/// Steps after which the geometric transient `K₁(1−r)^T` drops to
/// `steady`, with `r = cμ^λ`.
pub fn crossover_steps(k1: f64, steady: f64, rate: f64) -> Result<u64> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "contraction rate {rate} must lie in (0, 1)"
        )));
    }
    if !(k1 > 0.0) {
        return Err(Error::InvalidArgument(format!("K1 = {k1} must be positive")));
    }
    if steady >= k1 {
        return Ok(0);
    }
    Ok(((steady / k1).ln() / (-rate).ln_1p()).ceil().max(0.0) as u64)
}

/// Step at which transient and steady-state parts of the bound meet for
/// the constant schedule `(μ^λ, μ)`.
pub fn steadystate_crossover_time(constants: &DriftConstants, mu: f64, lambda: f64) -> Result<u64> {
    if !(constants.c > 0.0) {
        return Err(Error::UnstableRegime(format!("c = {} must be positive", constants.c)));
    }
    let steady = constants.k2 * mu.powf(2.0 - lambda) / (constants.gamma_max * constants.c);
    crossover_steps(constants.k1, steady, constants.c * mu.powf(lambda))
}

/// Outcome of [`drift_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub k: u64,
    pub n_samples: usize,
    /// Estimate of `E[W(Θ_{k+1}) − W(Θ_k)]`.
    pub mean_drift: f64,
    pub half_width: f64,
    /// Estimate of `E[W(Θ_k)]`.
    pub mean_lyapunov: f64,
    /// `−(ε^α/γ_max)(κ₁/2 − κ₂ε^(α−β))·E[W(Θ_k)] + ε^(2β)τη₂`.
    pub bound: f64,
    pub passed: bool,
}

impl fmt::Display for DriftReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "k = {}, samples = {}, drift = {:.6e} ± {:.3e}, E[W] = {:.6e}, bound = {:.6e}: {}",
            self.k,
            self.n_samples,
            self.mean_drift,
            self.half_width,
            self.mean_lyapunov,
            self.bound,
            if self.passed { "pass" } else { "fail" }
        )
    }
}

fn mean_and_half_width(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, Z95 * (var / n).sqrt())
}

/// Monte-Carlo check of the one-step drift inequality at step `k ≥ τ`,
/// using independent trajectories started at `Θ₀` with `X₀` drawn from the
/// stationary law. Trajectory `i` uses stream `i` of `seed`.
pub fn drift_check(
    system: &System,
    constants: &DriftConstants,
    k: u64,
    n_samples: usize,
    seed: u64,
) -> Result<DriftReport> {
    let (t1, t2) = constants.step_condition_terms();
    if t1 + t2 > constants.kappa1 / 2.0 {
        return Err(Error::ConditionViolated(format!(
            "eta1_tilde*eps_tilde*tau = {t1:.6e} plus 2*(eps_tilde^2/eps^alpha)*gamma_max = {t2:.6e} exceeds kappa1/2 = {:.6e}",
            constants.kappa1 / 2.0
        )));
    }
    if k < constants.tau as u64 {
        return Err(Error::InvalidArgument(format!(
            "k = {k} precedes tau = {}",
            constants.tau
        )));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    let dim_u = system.instance.dim_u();
    let coupling = &system.steady.coupling;
    let p = &system.geometry.p;
    let u0 = constants.theta0.rows(0, dim_u).into_owned();
    let z0 = constants.theta0.rows(dim_u, system.instance.dim_v()).into_owned();
    let v0 = system.v_from_z(&u0, &z0);
    let start: Vec<f64> = u0.iter().chain(v0.iter()).copied().collect();
    let (ea, eb) = (constants.eps_alpha(), constants.eps_beta());
    let dyn_ = system.dynamics();

    let samples: Vec<(f64, f64)> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let mut x = system.sample_stationary_state(&mut rng);
            let mut uv = start.clone();
            let mut scratch = vec![0.0; uv.len()];
            let mut theta = vec![0.0; uv.len()];
            for _ in 0..k {
                dyn_.advance(&mut uv, &mut x, ea, eb, &mut rng, &mut scratch);
            }
            uv_to_theta(coupling, &uv, dim_u, &mut theta);
            let w_k = quad_form(p, &theta);
            dyn_.advance(&mut uv, &mut x, ea, eb, &mut rng, &mut scratch);
            uv_to_theta(coupling, &uv, dim_u, &mut theta);
            (quad_form(p, &theta) - w_k, w_k)
        })
        .collect();
    let diffs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let (mean_drift, half_width) = mean_and_half_width(&diffs);
    let mean_lyapunov = samples.iter().map(|s| s.1).sum::<f64>() / n_samples as f64;
    let bound = -(ea / constants.gamma_max) * constants.contraction_margin() * mean_lyapunov
        + eb * eb * constants.tau as f64 * constants.eta2;
    Ok(DriftReport {
        k,
        n_samples,
        mean_drift,
        half_width,
        mean_lyapunov,
        bound,
        passed: mean_drift - half_width <= bound,
    })
}

/// Monte-Carlo estimate of `E‖Θ_k‖²` at one recorded step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseEstimate {
    pub k: u64,
    pub mean: f64,
    pub half_width: f64,
}

impl MseEstimate {
    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }
}

/// Trajectories per deterministic reduction block.
const MC_BLOCK: u64 = 64;

/// Estimates `E‖Θ_k − Θ_ref‖²` (in `(U, Z)` coordinates) at each of the
/// increasing steps `record`, over `n_traj` trajectories started at
/// `(u0, v0)` with `X₀` drawn from the stationary law. Trajectory `i`
/// uses stream `i` of `seed`; partial sums are reduced in a fixed order so
/// the result does not depend on the thread count.
#[allow(clippy::too_many_arguments)]
pub fn mse_monte_carlo(
    system: &System,
    schedule: &Schedule,
    u0: &Vector,
    v0: &Vector,
    theta_ref: Option<&Vector>,
    record: &[u64],
    n_traj: u64,
    seed: u64,
) -> Result<Vec<MseEstimate>> {
    schedule.validate()?;
    if matches!(schedule, Schedule::Adaptive(_)) {
        return Err(Error::InvalidArgument(
            "Monte-Carlo MSE supports open-loop schedules only".into(),
        ));
    }
    let inst = &system.instance;
    if u0.len() != inst.dim_u() || v0.len() != inst.dim_v() {
        return Err(Error::DimensionMismatch(
            "initial iterate does not match instance dims".into(),
        ));
    }
    if record.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "record steps must be strictly increasing".into(),
        ));
    }
    if n_traj == 0 {
        return Err(Error::InvalidArgument("need at least one trajectory".into()));
    }
    let d = inst.dim();
    let zero = Vector::zeros(d);
    let reference = theta_ref.unwrap_or(&zero);
    if reference.len() != d {
        return Err(Error::DimensionMismatch("theta_ref has the wrong length".into()));
    }
    let dim_u = inst.dim_u();
    let coupling = &system.steady.coupling;
    let dyn_ = system.dynamics();
    let start: Vec<f64> = u0.iter().chain(v0.iter()).copied().collect();
    let last = record.last().copied().unwrap_or(0);
    let rates: Vec<(f64, f64)> = (0..last)
        .map(|k| crate::tsa::schedule_rates(schedule, k, None))
        .collect();
    if let Some((a, b)) = rates
        .iter()
        .find(|(a, b)| !(*a > 0.0 && *a < 1.0 && *b > 0.0 && *b < 1.0))
    {
        return Err(Error::InvalidArgument(format!(
            "schedule produced step sizes ({a}, {b}) outside (0, 1)"
        )));
    }

    let n_blocks = n_traj.div_ceil(MC_BLOCK);
    let partials: Vec<Vec<(f64, f64)>> = (0..n_blocks)
        .into_par_iter()
        .map(|blk| {
            let mut sums = vec![(0.0, 0.0); record.len()];
            let mut uv = vec![0.0; d];
            let mut theta = vec![0.0; d];
            let mut scratch = vec![0.0; d];
            for i in blk * MC_BLOCK..((blk + 1) * MC_BLOCK).min(n_traj) {
                let mut rng = stream_rng(seed, i);
                let mut x = system.sample_stationary_state(&mut rng);
                uv.copy_from_slice(&start);
                let mut k = 0u64;
                for (slot, &target) in record.iter().enumerate() {
                    while k < target {
                        let (ea, eb) = rates[k as usize];
                        dyn_.advance(&mut uv, &mut x, ea, eb, &mut rng, &mut scratch);
                        k += 1;
                    }
                    uv_to_theta(coupling, &uv, dim_u, &mut theta);
                    let sq: f64 = theta.iter().zip(reference.iter()).map(|(t, r)| (t - r) * (t - r)).sum();
                    sums[slot].0 += sq;
                    sums[slot].1 += sq * sq;
                }
            }
            sums
        })
        .collect();
    let n = n_traj as f64;
    Ok(record
        .iter()
        .enumerate()
        .map(|(slot, &k)| {
            let (s, s2) = partials
                .iter()
                .fold((0.0, 0.0), |acc, p| (acc.0 + p[slot].0, acc.1 + p[slot].1));
            let mean = s / n;
            let var = if n_traj > 1 {
                ((s2 - n * mean * mean) / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            MseEstimate {
                k,
                mean,
                half_width: Z95 * (var / n).sqrt(),
            }
        })
        .collect())
}

/// Comparison of Monte-Carlo upper confidence limits with the bound.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeReport {
    /// `(k, Monte-Carlo upper limit, bound)` for every recorded `k ≥ τ`.
    pub points: Vec<(u64, f64, f64)>,
    pub passed: bool,
}

impl EnvelopeReport {
    /// Largest ratio of the Monte-Carlo upper limit to the bound.
    pub fn worst_ratio(&self) -> f64 {
        self.points.iter().map(|(_, m, b)| m / b).fold(0.0, f64::max)
    }
}

pub fn envelope_check(estimates: &[MseEstimate], constants: &DriftConstants) -> Result<EnvelopeReport> {
    let points = estimates
        .iter()
        .filter(|e| e.k >= constants.tau as u64)
        .map(|e| mse_bound(constants, e.k).map(|b| (e.k, e.upper(), b)))
        .collect::<Result<Vec<_>>>()?;
    let passed = points.iter().all(|(_, m, b)| m <= b);
    Ok(EnvelopeReport { points, passed })
}

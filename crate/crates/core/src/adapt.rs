//! Adaptive learning-rate rule driven by a best-fit-slope diagnostic.
//!
//! The rule watches `‖Θ_i − Θ_ini‖` over a rolling window of `N` points.
//! Once the least-squares slope of that window drops below
//! `σ μ^(1−λ/2) / N` the iterate is taken to be in steady state, so the rate
//! is divided by `ξ` and the reference point moves to the current iterate.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matproc::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveHyperparams {
    /// Initial rate.
    pub rho: f64,
    /// Threshold scale.
    pub sigma: f64,
    /// Decay factor, `> 1`.
    pub xi: f64,
    /// Window length.
    pub window: usize,
    /// Time-scale ratio `α/β`.
    pub lambda: f64,
}

impl AdaptiveHyperparams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rho > 0.0
            && self.rho < 1.0
            && self.xi > 1.0
            && self.sigma > 0.0
            && self.window >= 3
            && self.lambda > 1.0
            && [self.rho, self.sigma, self.xi, self.lambda]
                .iter()
                .all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "adaptive hyperparameters need rho in (0,1), xi > 1, sigma > 0, N >= 3, lambda > 1; got {self:?}"
            )))
        }
    }

    /// Decay threshold `σ μ^(1−λ/2) / N`.
    pub fn threshold(&self, mu: f64) -> f64 {
        self.sigma * mu.powf(1.0 - self.lambda / 2.0) / self.window as f64
    }

    /// True when `N < 1/μ^(λ/2)`, i.e. the window is shorter than the
    /// separation argument for the diagnostic asks for.
    pub fn window_too_short(&self, mu: f64) -> bool {
        (self.window as f64) < mu.powf(-self.lambda / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveState {
    pub mu: f64,
    pub theta_ini: Vector,
    /// Distances `‖Θ_i − Θ_ini‖`, oldest first.
    pub window: VecDeque<f64>,
    pub decays: u32,
}

impl AdaptiveState {
    pub fn new(hp: &AdaptiveHyperparams, theta0: Vector) -> Self {
        AdaptiveState {
            mu: hp.rho,
            theta_ini: theta0,
            window: VecDeque::with_capacity(hp.window),
            decays: 0,
        }
    }

    /// Current `(ε^α, ε^β) = (μ^λ, μ)`.
    pub fn rates(&self, lambda: f64) -> (f64, f64) {
        (self.mu.powf(lambda), self.mu)
    }
}

/// Ordinary least-squares slope of `values` against abscissae `1..=n`.
pub fn best_fit_slope(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientPoints(n));
    }
    let nf = n as f64;
    let x_mean = (nf + 1.0) / 2.0;
    let y_mean = values.iter().sum::<f64>() / nf;
    let num: f64 = values
        .iter()
        .enumerate()
        .map(|(i, y)| ((i + 1) as f64 - x_mean) * (y - y_mean))
        .sum();
    let den = nf * (nf - 1.0) * (nf + 1.0) / 12.0;
    Ok(num / den)
}

/// Feeds one iterate to the rule. Returns `true` when the rate decayed.
pub fn adaptive_update(state: &mut AdaptiveState, hp: &AdaptiveHyperparams, theta: &Vector) -> Result<bool> {
    if theta.len() != state.theta_ini.len() {
        return Err(Error::DimensionMismatch(format!(
            "iterate has {} entries, reference has {}",
            theta.len(),
            state.theta_ini.len()
        )));
    }
    if state.window.len() == hp.window {
        state.window.pop_front();
    }
    state.window.push_back((theta - &state.theta_ini).norm());
    if state.window.len() < hp.window {
        return Ok(false);
    }
    let slope = best_fit_slope(state.window.make_contiguous())?;
    if slope < hp.threshold(state.mu) {
        state.decays += 1;
        state.mu = hp.rho / hp.xi.powi(state.decays as i32);
        state.theta_ini = theta.clone();
        state.window.clear();
        return Ok(true);
    }
    Ok(false)
}

/// Steady-state bounds on the mean and second moment of the window slope.
///
/// With `s² = K₂ μ^(2−λ) / (γ_max c)` these are
/// `6(N+1)·√(2s²) / (N(N−1))` and `48(4s² + 2d²) / ((N−1)(N+1))`, where `d`
/// is the caller-supplied distance `‖Θ₀ − Θ*‖`.
pub fn slope_statistics_bound(
    mu: f64,
    lambda: f64,
    n: usize,
    k2: f64,
    gamma_max: f64,
    c: f64,
    d: f64,
) -> Result<(f64, f64)> {
    if n < 3 {
        return Err(Error::InsufficientPoints(n));
    }
    if !(c > 0.0) {
        return Err(Error::UnstableRegime(format!("c = {c} must be positive")));
    }
    let nf = n as f64;
    let steady = k2 * mu.powf(2.0 - lambda) / (gamma_max * c);
    let mean_bound = 6.0 * (nf + 1.0) * (2.0 * steady).sqrt() / (nf * (nf - 1.0));
    let var_bound = 48.0 * (4.0 * steady + 2.0 * d * d) / ((nf - 1.0) * (nf + 1.0));
    Ok((mean_bound, var_bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn hp(sigma: f64, window: usize) -> AdaptiveHyperparams {
        AdaptiveHyperparams {
            rho: 0.1,
            sigma,
            xi: 1.2,
            window,
            lambda: 1.5,
        }
    }

    #[test]
    fn slope_examples() {
        let ys: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_relative_eq!(best_fit_slope(&ys).unwrap(), 1.0, epsilon = 1e-14);
        assert_eq!(best_fit_slope(&[4.0; 7]).unwrap(), 0.0);
        assert_relative_eq!(best_fit_slope(&[1.0, 3.0, 2.0]).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(best_fit_slope(&[1.0]), Err(Error::InsufficientPoints(1)));
    }

    #[test]
    fn slope_matches_generic_regression() {
        let ys = [0.3, -1.2, 2.2, 0.9, 5.0, 4.1];
        let xs: Vec<f64> = (1..=6).map(f64::from).collect();
        let xm = xs.iter().sum::<f64>() / 6.0;
        let ym = ys.iter().sum::<f64>() / 6.0;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
        assert_relative_eq!(best_fit_slope(&ys).unwrap(), sxy / sxx, max_relative = 1e-14);
    }

    #[test]
    fn threshold_value() {
        let h = hp(0.001, 200);
        assert_relative_eq!(
            h.threshold(0.1),
            0.001 * 0.1f64.powf(0.25) / 200.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(h.threshold(0.1), 2.8117066e-6, max_relative = 1e-7);
    }

    #[test]
    fn no_decay_until_window_full() {
        let h = hp(0.001, 5);
        let mut st = AdaptiveState::new(&h, Vector::zeros(2));
        for _ in 0..4 {
            assert!(!adaptive_update(&mut st, &h, &Vector::from_element(2, 1.0)).unwrap());
        }
        assert_eq!(st.mu, 0.1);
        // the fifth identical point fills a flat window
        assert!(adaptive_update(&mut st, &h, &Vector::from_element(2, 1.0)).unwrap());
    }

    #[test]
    fn small_slope_triggers_decay() {
        let h = hp(0.001, 200);
        let mut st = AdaptiveState::new(&h, Vector::zeros(1));
        let mut decayed = false;
        for i in 1..=200 {
            decayed = adaptive_update(&mut st, &h, &Vector::from_element(1, 3.0 + 1e-6 * i as f64)).unwrap();
        }
        assert!(decayed);
        assert_relative_eq!(st.mu, 0.1 / 1.2, max_relative = 1e-15);
        assert_eq!(st.decays, 1);
        assert!(st.window.is_empty());
        assert_eq!(st.theta_ini[0], 3.0 + 2e-4);
    }

    #[test]
    fn transient_slope_keeps_rate() {
        let h = hp(0.001, 50);
        let mut st = AdaptiveState::new(&h, Vector::zeros(1));
        for i in 1..=120 {
            assert!(!adaptive_update(&mut st, &h, &Vector::from_element(1, 0.1 * i as f64)).unwrap());
        }
        assert_eq!(st.mu, 0.1);
        assert_eq!(st.window.len(), 50);
    }

    #[test]
    fn dimension_mismatch() {
        let h = hp(0.001, 3);
        let mut st = AdaptiveState::new(&h, Vector::zeros(2));
        assert!(matches!(
            adaptive_update(&mut st, &h, &Vector::zeros(3)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn statistics_bound_examples() {
        let (m, _) = slope_statistics_bound(0.1, 1.5, 200, 0.0, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(m, 0.0);
        let (m, _) = slope_statistics_bound(0.1, 1.5, 200, 1.0, 1.0, 1.0, 0.0).unwrap();
        let oracle = 6.0 * 201.0 * (2.0 * 0.1f64.sqrt()).sqrt() / (200.0 * 199.0);
        assert_relative_eq!(m, oracle, max_relative = 1e-14);
        assert_relative_eq!(m, 0.024097901982237765, max_relative = 1e-14);

        let (m1, _) = slope_statistics_bound(0.1, 1.5, 10_000, 1.0, 1.0, 1.0, 0.0).unwrap();
        let (m2, _) = slope_statistics_bound(0.1, 1.5, 20_000, 1.0, 1.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(m2 / m1, 0.5, max_relative = 1e-3);

        assert!(matches!(
            slope_statistics_bound(0.1, 1.5, 200, 1.0, 1.0, 0.0, 0.0),
            Err(Error::UnstableRegime(_))
        ));
    }

    proptest! {
        #[test]
        fn slope_translation_invariant_and_linear(
            ys in proptest::collection::vec(-100.0f64..100.0, 2..60),
            shift in -1e3f64..1e3,
            scale in -10.0f64..10.0,
        ) {
            let base = best_fit_slope(&ys).unwrap();
            let shifted: Vec<f64> = ys.iter().map(|y| y + shift).collect();
            let scaled: Vec<f64> = ys.iter().map(|y| y * scale).collect();
            prop_assert!((best_fit_slope(&shifted).unwrap() - base).abs() <= 1e-9 * (1.0 + shift.abs()));
            prop_assert!((best_fit_slope(&scaled).unwrap() - scale * base).abs() <= 1e-9 * (1.0 + base.abs() * scale.abs()));
        }

        #[test]
        fn rate_follows_decay_count(steps in proptest::collection::vec(0.0f64..1.0, 1..400)) {
            let h = hp(0.05, 4);
            let mut st = AdaptiveState::new(&h, Vector::zeros(1));
            let mut last = st.mu;
            for s in steps {
                adaptive_update(&mut st, &h, &Vector::from_element(1, s)).unwrap();
                prop_assert!(st.mu <= last);
                last = st.mu;
                prop_assert_eq!(st.mu, h.rho / h.xi.powi(st.decays as i32));
            }
        }
    }
}

//! Experiment harness: configuration files, seeded multi-run execution,
//! paired schedule comparisons, grid sweeps and the synthetic bound
//! experiment. Every output is a deterministic function of the config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::AdaptiveHyperparams;
use crate::certify::{compute_constants, mse_bound, mse_monte_carlo, DriftConstants, MseEstimate};
use crate::chainlab::{center_offsets, MarkovLsaInstance};
use crate::error::{Error, Result};
use crate::matproc::{fmt_f64, Vector};
use crate::rl::{
    run_episode, tdc_step, EnvSpec, FourierBasis, NeuAccumulator, PendulumCost, TdcWeights, DEFAULT_DISCOUNT,
};
use crate::stream_rng;
use crate::tsa::{run_trajectory, RateController, Schedule, System, TrajectorySpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    MountainCar,
    InvertedPendulum,
    Synthetic,
}

fn default_test_episodes() -> usize {
    1
}
fn default_discount() -> f64 {
    DEFAULT_DISCOUNT
}
fn default_order() -> u32 {
    3
}

/// The `[experiment]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub target: Target,
    /// Instance file for synthetic targets, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<PathBuf>,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub eval_every: usize,
    /// NEU test episodes per checkpoint (RL targets only).
    #[serde(default = "default_test_episodes")]
    pub test_episodes: usize,
    pub runs: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Adds a checkpoint at episode 0, before any learning.
    #[serde(default)]
    pub include_initial: bool,
    #[serde(default = "default_discount")]
    pub discount: f64,
    #[serde(default)]
    pub pendulum_cost: PendulumCost,
    #[serde(default = "default_order")]
    pub fourier_order: u32,
    /// Every entry of `Θ₀`.
    #[serde(default)]
    pub initial_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// The optional `[sweep]` section: one schedule parameter and its grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub parameter: String,
    pub values: Vec<f64>,
}

fn default_lambda() -> f64 {
    1.5
}
fn default_tail() -> f64 {
    0.5
}
fn default_records() -> u64 {
    100
}

/// The optional `[bound]` section of a synthetic config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSection {
    pub mus: Vec<f64>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub steps: u64,
    pub runs: u64,
    #[serde(default)]
    pub seed: u64,
    /// Fraction of the run averaged for the steady-state MSE.
    #[serde(default = "default_tail")]
    pub tail_fraction: f64,
    /// Evenly spaced recording points per run.
    #[serde(default = "default_records")]
    pub records: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub schedule: Schedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<BoundSection>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config and resolves the instance path against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(inst), Some(dir)) = (cfg.experiment.instance.as_mut(), path.parent()) {
            if inst.is_relative() {
                *inst = dir.join(&*inst);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if e.episodes == 0 || e.steps_per_episode == 0 || e.eval_every == 0 || e.runs == 0 || e.test_episodes == 0 {
            return bad("episodes, steps_per_episode, eval_every, test_episodes and runs must all be at least 1");
        }
        if !(0.0..1.0).contains(&e.discount) {
            return bad("discount must lie in [0, 1)");
        }
        if !e.initial_value.is_finite() {
            return bad("initial_value must be finite");
        }
        if e.target == Target::Synthetic && e.instance.is_none() {
            return bad("synthetic targets need an instance file");
        }
        if e.target != Target::Synthetic && self.bound.is_some() {
            return bad("a [bound] section needs a synthetic target");
        }
        self.schedule
            .validate()
            .map_err(|err| Error::ConfigInvalid(err.to_string()))?;
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return bad("sweep needs at least one value");
            }
            for v in &s.values {
                with_parameter(&self.schedule, &s.parameter, *v)?;
            }
        }
        if let Some(b) = &self.bound {
            if b.mus.is_empty()
                || b.steps == 0
                || b.runs == 0
                || b.records == 0
                || !(b.tail_fraction > 0.0 && b.tail_fraction <= 1.0)
            {
                return bad("bound needs mus, steps, runs, records >= 1 and tail_fraction in (0, 1]");
            }
        }
        Ok(())
    }

    fn env_spec(&self) -> Option<EnvSpec> {
        let e = &self.experiment;
        let mut spec = match e.target {
            Target::MountainCar => EnvSpec::mountain_car(e.steps_per_episode),
            Target::InvertedPendulum => EnvSpec::inverted_pendulum(e.steps_per_episode),
            Target::Synthetic => return None,
        };
        spec.zeta = e.discount;
        spec.pendulum_cost = e.pendulum_cost;
        Some(spec)
    }

    /// Checkpoint episodes in increasing order.
    pub fn checkpoints(&self) -> Vec<usize> {
        let e = &self.experiment;
        let mut out: Vec<usize> = if e.include_initial { vec![0] } else { vec![] };
        out.extend((1..=e.episodes / e.eval_every).map(|i| i * e.eval_every));
        if out.last() != Some(&e.episodes) {
            out.push(e.episodes);
        }
        out
    }
}

/// Returns `schedule` with one named parameter replaced.
pub fn with_parameter(schedule: &Schedule, name: &str, value: f64) -> Result<Schedule> {
    let mut s = *schedule;
    let ok = match (&mut s, name) {
        (Schedule::Constant { mu, .. }, "mu") => {
            *mu = value;
            true
        }
        (Schedule::Constant { lambda, .. }, "lambda") => {
            *lambda = value;
            true
        }
        (Schedule::Polynomial { rho0, .. }, "rho0") => {
            *rho0 = value;
            true
        }
        (Schedule::Polynomial { alpha, .. }, "alpha") => {
            *alpha = value;
            true
        }
        (Schedule::Polynomial { beta, .. }, "beta") => {
            *beta = value;
            true
        }
        (Schedule::Adaptive(h), p) => set_adaptive(h, p, value),
        _ => false,
    };
    if !ok {
        return Err(Error::ConfigInvalid(format!(
            "parameter '{name}' does not belong to a {} schedule",
            schedule.name()
        )));
    }
    s.validate().map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    Ok(s)
}

fn set_adaptive(h: &mut AdaptiveHyperparams, name: &str, value: f64) -> bool {
    match name {
        "rho" => h.rho = value,
        "sigma" => h.sigma = value,
        "xi" => h.xi = value,
        "lambda" => h.lambda = value,
        "window" if value >= 0.0 && value.fract() == 0.0 => h.window = value as usize,
        _ => return false,
    }
    true
}

/// Named configurations with the reference hyperparameters. Presets
/// ending in `-desk` are the reduced versions used for quick checks.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let (target, steps, runs, schedule) = match name.trim_end_matches("-desk") {
        "mountain-car-polynomial" => (
            Target::MountainCar,
            200,
            50,
            Schedule::Polynomial {
                rho0: 0.05,
                alpha: 0.99,
                beta: 0.66,
            },
        ),
        "mountain-car-adaptive" => (
            Target::MountainCar,
            200,
            50,
            Schedule::Adaptive(AdaptiveHyperparams {
                rho: 0.1,
                sigma: 0.001,
                xi: 1.2,
                window: 200,
                lambda: 1.5,
            }),
        ),
        "pendulum-polynomial" => (
            Target::InvertedPendulum,
            50,
            100,
            Schedule::Polynomial {
                rho0: 0.2,
                alpha: 0.99,
                beta: 0.66,
            },
        ),
        "pendulum-adaptive" => (
            Target::InvertedPendulum,
            50,
            100,
            Schedule::Adaptive(AdaptiveHyperparams {
                rho: 0.05,
                sigma: 0.01,
                xi: 1.2,
                window: 200,
                lambda: 1.5,
            }),
        ),
        _ => {
            return Err(Error::ConfigInvalid(format!(
                "unknown preset '{name}'; known: {}",
                PRESETS.join(", ")
            )))
        }
    };
    let desk = name.ends_with("-desk");
    Ok(ExperimentConfig {
        experiment: ExperimentSection {
            target,
            instance: None,
            episodes: if desk { 1000 } else { 10_000 },
            steps_per_episode: steps,
            eval_every: if desk { 200 } else { 1000 },
            test_episodes: if desk { 200 } else { 1000 },
            runs: if desk { 10 } else { runs },
            base_seed: 0,
            include_initial: true,
            discount: DEFAULT_DISCOUNT,
            pendulum_cost: PendulumCost::Squared,
            fourier_order: 3,
            initial_value: 0.0,
            output: None,
        },
        schedule,
        sweep: None,
        bound: None,
    })
}

pub const PRESETS: [&str; 8] = [
    "mountain-car-polynomial",
    "mountain-car-adaptive",
    "pendulum-polynomial",
    "pendulum-adaptive",
    "mountain-car-polynomial-desk",
    "mountain-car-adaptive-desk",
    "pendulum-polynomial-desk",
    "pendulum-adaptive-desk",
];

/// Metric trajectory of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub run: usize,
    pub seed: u64,
    /// `(episode, metric, current ε^β)` per checkpoint; the metric is NEU
    /// for RL targets and `‖Θ − Θ*‖²` for synthetic ones. A diverged run
    /// reports an infinite metric from then on.
    pub checkpoints: Vec<(usize, f64, f64)>,
    pub decays: usize,
}

impl RunLog {
    pub fn final_metric(&self) -> f64 {
        self.checkpoints.last().map_or(f64::NAN, |c| c.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResultRow {
    pub episode: usize,
    pub mean: f64,
    pub stderr: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub table: ResultTable,
    pub runs: Vec<RunLog>,
}

fn header_block(config: &ExperimentConfig) -> String {
    let mut out = format!("# twoscale {VERSION}\n");
    for line in config.to_toml().lines() {
        let _ = writeln!(out, "# {line}");
    }
    out
}

impl ExperimentResult {
    pub fn table_csv(&self) -> String {
        let mut out = header_block(&self.config);
        out.push_str("episode,mean,stderr,runs\n");
        for r in &self.table.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.episode,
                fmt_f64(r.mean),
                fmt_f64(r.stderr),
                r.runs
            );
        }
        out
    }

    pub fn runs_csv(&self) -> String {
        let mut out = header_block(&self.config);
        out.push_str("run,seed,episode,metric,eps_beta\n");
        for log in &self.runs {
            for (ep, m, rate) in &log.checkpoints {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    log.run,
                    log.seed,
                    ep,
                    fmt_f64(*m),
                    fmt_f64(*rate)
                );
            }
        }
        out
    }
}

/// Mean and standard error, reduced in the given order.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 || !mean.is_finite() {
        return (mean, if values.len() < 2 { 0.0 } else { f64::NAN });
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn aggregate(checkpoints: &[usize], runs: &[RunLog]) -> ResultTable {
    let rows = checkpoints
        .iter()
        .enumerate()
        .map(|(i, &episode)| {
            let vals: Vec<f64> = runs.iter().map(|r| r.checkpoints[i].1).collect();
            let (mean, stderr) = mean_stderr(&vals);
            ResultRow {
                episode,
                mean,
                stderr,
                runs: vals.len(),
            }
        })
        .collect();
    ResultTable { rows }
}

/// Evaluation stream for the checkpoint at `episode`; training uses
/// stream 0.
fn eval_stream(episode: usize) -> u64 {
    1 + episode as u64
}

fn rl_run(config: &ExperimentConfig, spec: &EnvSpec, basis: &FourierBasis, run: usize) -> Result<RunLog> {
    let e = &config.experiment;
    let seed = e.base_seed + run as u64;
    let n = basis.len();
    let mut w = TdcWeights {
        u: Vector::from_element(n, e.initial_value),
        v: Vector::from_element(n, e.initial_value),
    };
    let mut ctrl = RateController::new(config.schedule, &w.stacked())?;
    let mut train = stream_rng(seed, 0);
    let checkpoints = config.checkpoints();
    let mut next_cp = 0;
    let mut log = RunLog {
        run,
        seed,
        checkpoints: Vec::with_capacity(checkpoints.len()),
        decays: 0,
    };
    let mut k = 0u64;
    let mut diverged = false;
    for episode in 0..=e.episodes {
        if next_cp < checkpoints.len() && checkpoints[next_cp] == episode {
            let metric = if diverged {
                f64::INFINITY
            } else {
                let mut acc = NeuAccumulator::new(n);
                let mut rng = stream_rng(seed, eval_stream(episode));
                for _ in 0..e.test_episodes {
                    run_episode(spec, basis, &mut rng, |phi, phi_next, cost| {
                        acc.add(&w.u, phi, phi_next, cost, spec.zeta);
                        Ok(())
                    })?;
                }
                acc.value()
            };
            log.checkpoints.push((episode, metric, ctrl.rates(k).1));
            next_cp += 1;
        }
        if episode == e.episodes || diverged {
            continue;
        }
        run_episode(spec, basis, &mut train, |phi, phi_next, cost| {
            let (ea, eb) = ctrl.rates(k);
            k += 1;
            tdc_step(&mut w, phi, phi_next, cost, spec.zeta, ea, eb)
        })?;
        if !w.is_finite() {
            diverged = true;
            continue;
        }
        if ctrl.observe(&w.stacked())?.is_some() {
            log.decays += 1;
        }
    }
    Ok(log)
}

fn synthetic_run(config: &ExperimentConfig, system: &System, theta_star: &Vector, run: usize) -> Result<RunLog> {
    let e = &config.experiment;
    let seed = e.base_seed + run as u64;
    let inst = &system.instance;
    let spe = e.steps_per_episode as u64;
    let u0 = Vector::from_element(inst.dim_u(), e.initial_value);
    let v0 = Vector::from_element(inst.dim_v(), e.initial_value);
    let star_u = theta_star.rows(0, inst.dim_u()).into_owned();
    let star_v = theta_star.rows(inst.dim_u(), inst.dim_v()).into_owned();
    let spec = TrajectorySpec {
        theta_ref: Some(system.theta(&star_u, &star_v).theta()),
        stride: Some(spe * e.eval_every as u64),
        ..TrajectorySpec::new(e.episodes as u64 * spe, seed, u0, v0)
    };
    let checkpoints = config.checkpoints();
    let mut log = RunLog {
        run,
        seed,
        checkpoints: Vec::with_capacity(checkpoints.len()),
        decays: 0,
    };
    match run_trajectory(system, &config.schedule, &spec) {
        Ok(trace) => {
            log.decays = trace.decays.len();
            for cp in checkpoints {
                let k = cp as u64 * spe;
                let rec = trace
                    .records
                    .iter()
                    .find(|r| r.k == k)
                    .ok_or_else(|| Error::InvalidArgument(format!("no record at step {k}")))?;
                log.checkpoints.push((cp, rec.dist_ref * rec.dist_ref, rec.eps_beta));
            }
        }
        Err(Error::UnstableRegime(_)) => {
            let first = crate::tsa::schedule_rates(&config.schedule, 0, None).1;
            let initial = (system.theta(&spec.u0, &spec.v0).theta() - spec.theta_ref.as_ref().unwrap()).norm_squared();
            for cp in checkpoints {
                log.checkpoints
                    .push((cp, if cp == 0 { initial } else { f64::INFINITY }, first));
            }
        }
        Err(err) => return Err(err),
    }
    Ok(log)
}

fn load_instance(config: &ExperimentConfig) -> Result<MarkovLsaInstance> {
    let path = config
        .experiment
        .instance
        .as_ref()
        .ok_or_else(|| Error::ConfigInvalid("missing instance".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
    MarkovLsaInstance::from_text(&text)
}

/// Runs every seed of an experiment (in parallel) and aggregates the
/// checkpoints in run order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let runs_idx: Vec<usize> = (0..config.experiment.runs).collect();
    let runs: Vec<RunLog> = match config.env_spec() {
        Some(spec) => {
            let basis = FourierBasis::for_env(&spec, config.experiment.fourier_order);
            runs_idx
                .par_iter()
                .map(|&r| rl_run(config, &spec, &basis, r))
                .collect::<Result<_>>()?
        }
        None => {
            let inst = load_instance(config)?;
            let (_, theta_star) = center_offsets(&inst)?;
            let system = System::new(inst)?;
            runs_idx
                .par_iter()
                .map(|&r| synthetic_run(config, &system, &theta_star, r))
                .collect::<Result<_>>()?
        }
    };
    let table = aggregate(&config.checkpoints(), &runs);
    Ok(ExperimentResult {
        config: config.clone(),
        table,
        runs,
    })
}

/// Paired comparison of final-checkpoint metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// `(run, seed, metric_a, metric_b)`.
    pub pairs: Vec<(usize, u64, f64, f64)>,
    pub mean_difference: f64,
    pub a_better: usize,
    pub b_better: usize,
    pub ties: usize,
    /// Two-sided exact sign-test p-value over the untied pairs.
    pub sign_test_p: f64,
}

/// `P(|X − n/2| ≥ |k − n/2|)` for `X ~ Binomial(n, 1/2)`.
pub fn sign_test_p_value(k: usize, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let lo = k.min(n - k);
    // log-space binomial terms keep large n finite
    let ln_choose = |j: usize| -> f64 {
        (1..=j)
            .map(|i| ((n - j + i) as f64).ln() - (i as f64).ln())
            .sum::<f64>()
    };
    let tail: f64 = (0..=lo)
        .map(|j| (ln_choose(j) - n as f64 * std::f64::consts::LN_2).exp())
        .sum();
    (2.0 * tail).min(1.0)
}

impl Comparison {
    pub fn from_results(a: &ExperimentResult, b: &ExperimentResult) -> Self {
        let pairs: Vec<_> = a
            .runs
            .iter()
            .zip(&b.runs)
            .map(|(ra, rb)| (ra.run, ra.seed, ra.final_metric(), rb.final_metric()))
            .collect();
        let diffs: Vec<f64> = pairs.iter().map(|p| p.2 - p.3).collect();
        let a_better = pairs.iter().filter(|p| p.2 < p.3).count();
        let b_better = pairs.iter().filter(|p| p.3 < p.2).count();
        let ties = pairs.len() - a_better - b_better;
        Comparison {
            mean_difference: diffs.iter().sum::<f64>() / diffs.len() as f64,
            sign_test_p: sign_test_p_value(a_better, a_better + b_better),
            pairs,
            a_better,
            b_better,
            ties,
        }
    }

    /// Fraction of pairs where `a` is at least as good as `b`.
    pub fn a_not_worse_fraction(&self) -> f64 {
        (self.a_better + self.ties) as f64 / self.pairs.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# pairs = {}, a_better = {}, b_better = {}, ties = {}, mean_difference = {}, sign_test_p = {}\n",
            self.pairs.len(),
            self.a_better,
            self.b_better,
            self.ties,
            fmt_f64(self.mean_difference),
            fmt_f64(self.sign_test_p)
        );
        out.push_str("run,seed,metric_a,metric_b,diff\n");
        for (run, seed, a, b) in &self.pairs {
            let _ = writeln!(out, "{run},{seed},{},{},{}", fmt_f64(*a), fmt_f64(*b), fmt_f64(a - b));
        }
        out
    }
}

/// Runs two configs that differ only in their schedule and pairs their
/// runs by seed.
pub fn compare_schedules(a: &ExperimentConfig, b: &ExperimentConfig) -> Result<Comparison> {
    let (ea, eb) = (&a.experiment, &b.experiment);
    let same = ea.target == eb.target
        && ea.instance == eb.instance
        && ea.episodes == eb.episodes
        && ea.steps_per_episode == eb.steps_per_episode
        && ea.eval_every == eb.eval_every
        && ea.test_episodes == eb.test_episodes
        && ea.runs == eb.runs
        && ea.base_seed == eb.base_seed
        && ea.include_initial == eb.include_initial
        && ea.discount == eb.discount
        && ea.pendulum_cost == eb.pendulum_cost
        && ea.fourier_order == eb.fourier_order
        && ea.initial_value == eb.initial_value;
    if !same {
        return Err(Error::MismatchedConfigs(
            "configs must agree on everything except the schedule (target, counts, seeds, discount, features)".into(),
        ));
    }
    Ok(Comparison::from_results(&run_experiment(a)?, &run_experiment(b)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub outcome: std::result::Result<(f64, f64), String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub parameter: String,
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    /// Value with the smallest final mean metric.
    pub fn best(&self) -> Option<f64> {
        self.points
            .iter()
            .filter_map(|p| p.outcome.as_ref().ok().map(|o| (p.value, o.0)))
            .filter(|(_, m)| m.is_finite())
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(v, _)| v)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# parameter = {}\nvalue,final_mean,final_stderr,status\n",
            self.parameter
        );
        for p in &self.points {
            match &p.outcome {
                Ok((m, s)) => {
                    let _ = writeln!(out, "{},{},{},ok", fmt_f64(p.value), fmt_f64(*m), fmt_f64(*s));
                }
                Err(e) => {
                    let _ = writeln!(out, "{},nan,nan,\"{}\"", fmt_f64(p.value), e.replace('"', "'"));
                }
            }
        }
        out
    }
}

/// Runs the experiment once per value of the `[sweep]` grid.
pub fn sweep(config: &ExperimentConfig) -> Result<SweepReport> {
    let s = config
        .sweep
        .as_ref()
        .ok_or_else(|| Error::ConfigInvalid("sweep needs a [sweep] section".into()))?;
    let points = s
        .values
        .iter()
        .map(|&value| {
            let mut cfg = config.clone();
            cfg.schedule = with_parameter(&config.schedule, &s.parameter, value)?;
            cfg.sweep = None;
            let outcome = match run_experiment(&cfg) {
                Ok(r) => {
                    let last = r.table.rows.last().copied().expect("at least one checkpoint");
                    Ok((last.mean, last.stderr))
                }
                Err(e @ (Error::ConfigInvalid(_) | Error::Io(_) | Error::Parse(_))) => return Err(e),
                Err(e) => Err(e.to_string()),
            };
            Ok(SweepPoint { value, outcome })
        })
        .collect::<Result<_>>()?;
    Ok(SweepReport {
        parameter: s.parameter.clone(),
        points,
    })
}

/// Least-squares slope of `ys` against `xs`.
pub fn regression_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InsufficientPoints(xs.len().min(ys.len())));
    }
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("abscissae are all equal".into()));
    }
    Ok(xs.iter().zip(ys).map(|(x, y)| (x - xm) * (y - ym)).sum::<f64>() / sxx)
}

/// Empirical MSE next to the bound for one step size.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub mu: f64,
    pub estimates: Vec<MseEstimate>,
    pub tail_mse: f64,
    /// Constants, or why they are unavailable at this step size.
    pub constants: std::result::Result<DriftConstants, String>,
}

impl BoundRow {
    pub fn bound_at(&self, k: u64) -> Option<f64> {
        self.constants.as_ref().ok().and_then(|c| mse_bound(c, k).ok())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub lambda: f64,
    pub rows: Vec<BoundRow>,
    /// Log-log slope of tail MSE against `μ`, when the grid has two or
    /// more points.
    pub slope: Option<f64>,
}

impl BoundReport {
    pub fn summary_csv(&self) -> String {
        let mut out = format!("# lambda = {}\n", fmt_f64(self.lambda));
        if let Some(s) = self.slope {
            let _ = writeln!(out, "# loglog_slope = {}", fmt_f64(s));
        }
        out.push_str("mu,tail_mse,steady_state_bound,final_bound,c,note\n");
        for r in &self.rows {
            let last = r.estimates.last().map_or(0, |e| e.k);
            match &r.constants {
                Ok(c) => {
                    let fb = r.bound_at(last).map_or("nan".to_string(), fmt_f64);
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},ok",
                        fmt_f64(r.mu),
                        fmt_f64(r.tail_mse),
                        fmt_f64(c.steady_state_term()),
                        fb,
                        fmt_f64(c.c)
                    );
                }
                Err(e) => {
                    let _ = writeln!(
                        out,
                        "{},{},nan,nan,nan,\"{}\"",
                        fmt_f64(r.mu),
                        fmt_f64(r.tail_mse),
                        e.replace('"', "'")
                    );
                }
            }
        }
        out
    }

    pub fn curves_csv(&self) -> String {
        let mut out = String::from("mu,k,mse,half_width,bound\n");
        for r in &self.rows {
            for e in &r.estimates {
                let b = r.bound_at(e.k).map_or("nan".to_string(), fmt_f64);
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    fmt_f64(r.mu),
                    e.k,
                    fmt_f64(e.mean),
                    fmt_f64(e.half_width),
                    b
                );
            }
        }
        out
    }
}

/// Monte-Carlo MSE for constant schedules `(μ^λ, μ)` over a grid of `μ`
/// on the centered instance, side by side with the error bound.
pub fn synth_bound_experiment(
    instance: &MarkovLsaInstance,
    bound: &BoundSection,
    initial_value: f64,
) -> Result<BoundReport> {
    let (centered, _) = center_offsets(instance)?;
    let system = System::new(centered)?;
    let inst = &system.instance;
    let u0 = Vector::from_element(inst.dim_u(), initial_value);
    let v0 = Vector::from_element(inst.dim_v(), initial_value);
    let theta0 = system.theta(&u0, &v0).theta();
    let record: Vec<u64> = (0..=bound.records)
        .map(|i| i * bound.steps / bound.records)
        .collect::<Vec<_>>();
    let mut record = record;
    record.dedup();
    let tail_start = ((1.0 - bound.tail_fraction) * bound.steps as f64).ceil() as u64;
    let rows = bound
        .mus
        .iter()
        .map(|&mu| {
            let sched = Schedule::Constant {
                mu,
                lambda: bound.lambda,
            };
            let estimates = mse_monte_carlo(&system, &sched, &u0, &v0, None, &record, bound.runs, bound.seed)?;
            let tail: Vec<f64> = estimates.iter().filter(|e| e.k >= tail_start).map(|e| e.mean).collect();
            let tail_mse = tail.iter().sum::<f64>() / tail.len() as f64;
            let constants = compute_constants(&system, mu, bound.lambda, 1.0, &theta0).map_err(|e| e.to_string());
            Ok(BoundRow {
                mu,
                estimates,
                tail_mse,
                constants,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let slope = if rows.len() >= 2 {
        let xs: Vec<f64> = rows.iter().map(|r| r.mu.ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.tail_mse.ln()).collect();
        Some(regression_slope(&xs, &ys)?)
    } else {
        None
    };
    Ok(BoundReport {
        lambda: bound.lambda,
        rows,
        slope,
    })
}

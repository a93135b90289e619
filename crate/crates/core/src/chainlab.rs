//! Markov-modulated linear systems: the driving chain, per-state
//! coefficients, steady-state averages, mixing times, random generation and
//! assumption checks.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matproc::{self, condition_number, is_hurwitz, max_real_eigenvalue, operator_norm, Matrix, Vector};

const ROW_SUM_TOL: f64 = 1e-12;
const NORM_TOL: f64 = 1e-12;
const MAX_COND: f64 = 1e12;
pub const MAX_MIXING_STEPS: usize = 1_000_000;
const MAX_GENERATION_ATTEMPTS: usize = 1000;

/// Coefficients attached to one chain state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBlocks {
    pub a_uu: Matrix,
    pub a_uv: Matrix,
    pub a_vu: Matrix,
    pub a_vv: Matrix,
    pub b_u: Vector,
    pub b_v: Vector,
}

impl StateBlocks {
    pub fn zeros(dim_u: usize, dim_v: usize) -> Self {
        StateBlocks {
            a_uu: Matrix::zeros(dim_u, dim_u),
            a_uv: Matrix::zeros(dim_u, dim_v),
            a_vu: Matrix::zeros(dim_v, dim_u),
            a_vv: Matrix::zeros(dim_v, dim_v),
            b_u: Vector::zeros(dim_u),
            b_v: Vector::zeros(dim_v),
        }
    }

    /// The stacked `(dim_u + dim_v)`-square system matrix.
    pub fn full_matrix(&self) -> Matrix {
        let (nu, nv) = (self.b_u.len(), self.b_v.len());
        let mut a = Matrix::zeros(nu + nv, nu + nv);
        a.view_mut((0, 0), (nu, nu)).copy_from(&self.a_uu);
        a.view_mut((0, nu), (nu, nv)).copy_from(&self.a_uv);
        a.view_mut((nu, 0), (nv, nu)).copy_from(&self.a_vu);
        a.view_mut((nu, nu), (nv, nv)).copy_from(&self.a_vv);
        a
    }

    pub fn full_offset(&self) -> Vector {
        let mut b = Vector::zeros(self.b_u.len() + self.b_v.len());
        b.rows_mut(0, self.b_u.len()).copy_from(&self.b_u);
        b.rows_mut(self.b_u.len(), self.b_v.len()).copy_from(&self.b_v);
        b
    }
}

/// A finite Markov chain together with per-state coefficient blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovLsaInstance {
    transition: Matrix,
    dim_u: usize,
    dim_v: usize,
    states: Vec<StateBlocks>,
}

impl MarkovLsaInstance {
    /// Checks the structural invariants: a row-stochastic transition matrix
    /// and per-state blocks of matching, finite shape.
    pub fn new(transition: Matrix, dim_u: usize, dim_v: usize, states: Vec<StateBlocks>) -> Result<Self> {
        let n = states.len();
        if n == 0 || dim_u == 0 || dim_v == 0 {
            return Err(Error::InvalidArgument(
                "instance needs at least one state and nonzero dims".into(),
            ));
        }
        if transition.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "transition is {:?} but there are {n} states",
                transition.shape()
            )));
        }
        check_stochastic(&transition)?;
        for (x, s) in states.iter().enumerate() {
            let shapes = [
                (s.a_uu.shape(), (dim_u, dim_u), "A_uu"),
                (s.a_uv.shape(), (dim_u, dim_v), "A_uv"),
                (s.a_vu.shape(), (dim_v, dim_u), "A_vu"),
                (s.a_vv.shape(), (dim_v, dim_v), "A_vv"),
                ((s.b_u.len(), 1), (dim_u, 1), "b_u"),
                ((s.b_v.len(), 1), (dim_v, 1), "b_v"),
            ];
            for (got, want, name) in shapes {
                if got != want {
                    return Err(Error::DimensionMismatch(format!(
                        "state {x}: {name} is {got:?}, expected {want:?}"
                    )));
                }
            }
            let finite = [&s.a_uu, &s.a_uv, &s.a_vu, &s.a_vv]
                .iter()
                .all(|m| m.iter().all(|v| v.is_finite()))
                && s.b_u.iter().chain(s.b_v.iter()).all(|v| v.is_finite());
            if !finite {
                return Err(Error::InvalidArgument(format!("state {x} has non-finite entries")));
            }
        }
        Ok(MarkovLsaInstance {
            transition,
            dim_u,
            dim_v,
            states,
        })
    }

    pub fn transition(&self) -> &Matrix {
        &self.transition
    }
    pub fn dim_u(&self) -> usize {
        self.dim_u
    }
    pub fn dim_v(&self) -> usize {
        self.dim_v
    }
    pub fn dim(&self) -> usize {
        self.dim_u + self.dim_v
    }
    pub fn n_states(&self) -> usize {
        self.states.len()
    }
    pub fn states(&self) -> &[StateBlocks] {
        &self.states
    }
    pub fn state(&self, x: usize) -> &StateBlocks {
        &self.states[x]
    }

    /// `max_x max(‖b_u(x)‖, ‖b_v(x)‖)`.
    pub fn b_max(&self) -> f64 {
        self.states
            .iter()
            .map(|s| s.b_u.norm().max(s.b_v.norm()))
            .fold(0.0, f64::max)
    }

    /// Multiplies every offset by `factor`.
    pub fn with_scaled_offsets(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for s in &mut out.states {
            s.b_u *= factor;
            s.b_v *= factor;
        }
        out
    }

    /// Serializes to the sectioned instance text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "[chain]");
        let _ = writeln!(out, "n_states {}", self.n_states());
        let _ = writeln!(out, "dim_u {}", self.dim_u);
        let _ = writeln!(out, "dim_v {}", self.dim_v);
        let _ = writeln!(out, "transition");
        out.push_str(&matproc::write_matrix(&self.transition));
        for (x, s) in self.states.iter().enumerate() {
            let _ = writeln!(out, "\n[state {x}]");
            for (name, m) in [
                ("A_uu", &s.a_uu),
                ("A_uv", &s.a_uv),
                ("A_vu", &s.a_vu),
                ("A_vv", &s.a_vv),
            ] {
                let _ = writeln!(out, "{name}");
                out.push_str(&matproc::write_matrix(m));
            }
            for (name, v) in [("b_u", &s.b_u), ("b_v", &s.b_v)] {
                let _ = writeln!(out, "{name}");
                out.push_str(&matproc::write_matrix(&Matrix::from_column_slice(
                    v.len(),
                    1,
                    v.as_slice(),
                )));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let sections = split_sections(text)?;
        let (head_name, head_body) = sections
            .first()
            .ok_or_else(|| Error::Parse("missing [chain] section".into()))?;
        if head_name != "chain" {
            return Err(Error::Parse(format!(
                "first section must be [chain], got [{head_name}]"
            )));
        }
        let mut tokens = head_body.split_whitespace();
        let mut n_states = None;
        let mut dim_u = None;
        let mut dim_v = None;
        let mut transition = None;
        while let Some(key) = tokens.next() {
            match key {
                "n_states" | "dim_u" | "dim_v" => {
                    let val: usize = tokens
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| Error::Parse(format!("bad value for {key}")))?;
                    match key {
                        "n_states" => n_states = Some(val),
                        "dim_u" => dim_u = Some(val),
                        _ => dim_v = Some(val),
                    }
                }
                "transition" => transition = Some(matproc::read_matrix_tokens(&mut tokens)?),
                other => return Err(Error::Parse(format!("unknown [chain] key {other:?}"))),
            }
        }
        let n_states = n_states.ok_or_else(|| Error::Parse("missing n_states".into()))?;
        let dim_u = dim_u.ok_or_else(|| Error::Parse("missing dim_u".into()))?;
        let dim_v = dim_v.ok_or_else(|| Error::Parse("missing dim_v".into()))?;
        let transition = transition.ok_or_else(|| Error::Parse("missing transition".into()))?;

        let mut states: Vec<Option<StateBlocks>> = vec![None; n_states];
        for (name, body) in &sections[1..] {
            let idx: usize = name
                .strip_prefix("state")
                .map(str::trim)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse(format!("unexpected section [{name}]")))?;
            if idx >= n_states {
                return Err(Error::Parse(format!("state index {idx} out of range")));
            }
            let mut blocks = StateBlocks::zeros(dim_u, dim_v);
            let mut seen = 0usize;
            let mut tokens = body.split_whitespace();
            while let Some(key) = tokens.next() {
                let m = matproc::read_matrix_tokens(&mut tokens)?;
                match key {
                    "A_uu" => blocks.a_uu = m,
                    "A_uv" => blocks.a_uv = m,
                    "A_vu" => blocks.a_vu = m,
                    "A_vv" => blocks.a_vv = m,
                    "b_u" | "b_v" => {
                        if m.ncols() != 1 {
                            return Err(Error::Parse(format!("{key} must be a column")));
                        }
                        let v = Vector::from_column_slice(m.as_slice());
                        if key == "b_u" {
                            blocks.b_u = v;
                        } else {
                            blocks.b_v = v;
                        }
                    }
                    other => return Err(Error::Parse(format!("unknown state key {other:?}"))),
                }
                seen += 1;
            }
            if seen != 6 {
                return Err(Error::Parse(format!(
                    "state {idx} must define six blocks, found {seen}"
                )));
            }
            if states[idx].replace(blocks).is_some() {
                return Err(Error::Parse(format!("state {idx} defined twice")));
            }
        }
        let states = states
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| Error::Parse(format!("state {i} missing"))))
            .collect::<Result<Vec<_>>>()?;
        MarkovLsaInstance::new(transition, dim_u, dim_v, states)
    }
}

fn split_sections(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            out.push((name.trim().to_string(), String::new()));
        } else if let Some((_, body)) = out.last_mut() {
            body.push_str(line);
            body.push('\n');
        } else {
            return Err(Error::Parse("content before the first section header".into()));
        }
    }
    Ok(out)
}

fn check_stochastic(p: &Matrix) -> Result<()> {
    for i in 0..p.nrows() {
        let row = p.row(i);
        if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "transition row {i} has a negative or non-finite entry"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InvalidArgument(format!("transition row {i} sums to {sum}")));
        }
    }
    Ok(())
}

fn row_spread(m: &Matrix) -> f64 {
    // max total-variation distance between any row and the first row
    let first = m.row(0);
    (1..m.nrows())
        .map(|i| 0.5 * (m.row(i) - first).abs().sum())
        .fold(0.0, f64::max)
}

/// Stationary law of an ergodic chain.
///
/// Repeated squaring covers 2^20 ≥ 10⁶ steps; the k-step rows must collapse
/// to a single law. Non-collapsing rows that are invariant under one more
/// step signal several closed classes (`Reducible`); rows that keep moving
/// signal a cycle (`Periodic`).
pub fn stationary_distribution(transition: &Matrix) -> Result<Vector> {
    if !transition.is_square() || transition.is_empty() {
        return Err(Error::DimensionMismatch(
            "transition must be square and non-empty".into(),
        ));
    }
    check_stochastic(transition)?;
    let mut m = transition.clone();
    let mut converged = row_spread(&m) <= 1e-13;
    for _ in 0..20 {
        if converged {
            break;
        }
        m = &m * &m;
        converged = row_spread(&m) <= 1e-13;
    }
    if !converged {
        let moved = &m * transition - &m;
        let drift = (0..moved.nrows())
            .map(|i| 0.5 * moved.row(i).abs().sum())
            .fold(0.0, f64::max);
        return Err(if drift > 1e-9 {
            Error::Periodic
        } else {
            Error::Reducible
        });
    }
    let n = transition.nrows();
    let mut pi = Vector::from_iterator(n, (0..n).map(|j| m.column(j).mean()));
    for _ in 0..4 {
        pi = (pi.transpose() * transition).transpose();
        pi.iter_mut().for_each(|p| *p = p.max(0.0));
        let s = pi.sum();
        pi /= s;
    }
    Ok(pi)
}

fn tv_from_stationary(m: &Matrix, pi: &Vector) -> f64 {
    (0..m.nrows())
        .map(|i| 0.5 * m.row(i).iter().zip(pi.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Smallest `k ≥ 1` with `max_i TV(P^k(i, ·), π) ≤ delta / 2`, for any
/// `delta > 0`.
pub(crate) fn mixing_time_with(transition: &Matrix, pi: &Vector, delta: f64) -> Result<usize> {
    let target = delta / 2.0;
    let mut m = transition.clone();
    for k in 1..=MAX_MIXING_STEPS {
        if tv_from_stationary(&m, pi) <= target {
            return Ok(k);
        }
        m = &m * transition;
    }
    Err(Error::NonMixing {
        delta,
        max_steps: MAX_MIXING_STEPS,
    })
}

/// Mixing time `τ_Δ` realized as total-variation contraction of the k-step
/// kernel to within `delta / 2` from every start state.
pub fn mixing_time(transition: &Matrix, delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    let pi = stationary_distribution(transition)?;
    mixing_time_with(transition, &pi, delta)
}

/// Steady-state (π-weighted) averages of every per-state quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub pi: Vector,
    pub a_uu: Matrix,
    pub a_uv: Matrix,
    pub a_vu: Matrix,
    pub a_vv: Matrix,
    pub b_u: Vector,
    pub b_v: Vector,
    /// `Ā_vv⁻¹ Ā_vu`, the map from `U` to the quasi-static offset of `V`.
    pub coupling: Matrix,
    /// `B̄ = Ā_uu − Ā_uv Ā_vv⁻¹ Ā_vu`.
    pub b_bar: Matrix,
    /// `Ā_vu − Ā_vv Ā_vv⁻¹ Ā_vu`; zero up to round-off.
    pub b_tilde_bar: Matrix,
}

impl SteadyState {
    pub fn full_matrix(&self) -> Matrix {
        let (nu, nv) = (self.b_u.len(), self.b_v.len());
        let mut a = Matrix::zeros(nu + nv, nu + nv);
        a.view_mut((0, 0), (nu, nu)).copy_from(&self.a_uu);
        a.view_mut((0, nu), (nu, nv)).copy_from(&self.a_uv);
        a.view_mut((nu, 0), (nv, nu)).copy_from(&self.a_vu);
        a.view_mut((nu, nu), (nv, nv)).copy_from(&self.a_vv);
        a
    }

    pub fn coupling_norm(&self) -> f64 {
        operator_norm(&self.coupling)
    }

    /// `B(x) = A_uu(x) − A_uv(x) Ā_vv⁻¹ Ā_vu`.
    pub fn b_of(&self, s: &StateBlocks) -> Matrix {
        &s.a_uu - &s.a_uv * &self.coupling
    }

    /// `B̃(x) = A_vu(x) − A_vv(x) Ā_vv⁻¹ Ā_vu`.
    pub fn b_tilde_of(&self, s: &StateBlocks) -> Matrix {
        &s.a_vu - &s.a_vv * &self.coupling
    }
}

pub fn steady_state_means(instance: &MarkovLsaInstance) -> Result<SteadyState> {
    let pi = stationary_distribution(instance.transition())?;
    let (nu, nv) = (instance.dim_u(), instance.dim_v());
    let mut avg = StateBlocks::zeros(nu, nv);
    for (w, s) in pi.iter().zip(instance.states()) {
        avg.a_uu += &s.a_uu * *w;
        avg.a_uv += &s.a_uv * *w;
        avg.a_vu += &s.a_vu * *w;
        avg.a_vv += &s.a_vv * *w;
        avg.b_u += &s.b_u * *w;
        avg.b_v += &s.b_v * *w;
    }
    let cond = condition_number(&avg.a_vv);
    if !(cond <= MAX_COND) {
        return Err(Error::SingularAvv(cond));
    }
    let coupling = avg
        .a_vv
        .clone()
        .full_piv_lu()
        .solve(&avg.a_vu)
        .ok_or(Error::SingularAvv(cond))?;
    let b_bar = &avg.a_uu - &avg.a_uv * &coupling;
    let b_tilde_bar = &avg.a_vu - &avg.a_vv * &coupling;
    Ok(SteadyState {
        pi,
        a_uu: avg.a_uu,
        a_uv: avg.a_uv,
        a_vu: avg.a_vu,
        a_vv: avg.a_vv,
        b_u: avg.b_u,
        b_v: avg.b_v,
        coupling,
        b_bar,
        b_tilde_bar,
    })
}

/// Shifts the offsets so the fixed point moves to the origin.
///
/// Returns the centered instance and `θ*` (in the original `(U, V)`
/// coordinates) solving `Ā θ* = −b̄`.
pub fn center_offsets(instance: &MarkovLsaInstance) -> Result<(MarkovLsaInstance, Vector)> {
    let ss = steady_state_means(instance)?;
    let a_full = ss.full_matrix();
    let cond = condition_number(&a_full);
    if !(cond <= MAX_COND) {
        return Err(Error::SingularSystem(cond));
    }
    let mut b_bar = Vector::zeros(instance.dim());
    b_bar.rows_mut(0, instance.dim_u()).copy_from(&ss.b_u);
    b_bar.rows_mut(instance.dim_u(), instance.dim_v()).copy_from(&ss.b_v);
    let theta_star = a_full
        .full_piv_lu()
        .solve(&(-b_bar))
        .ok_or(Error::SingularSystem(cond))?;
    let nu = instance.dim_u();
    let star_u = theta_star.rows(0, nu).into_owned();
    let star_v = theta_star.rows(nu, instance.dim_v()).into_owned();
    let states = instance
        .states()
        .iter()
        .map(|s| {
            let mut c = s.clone();
            c.b_u = &s.b_u + &s.a_uu * &star_u + &s.a_uv * &star_v;
            c.b_v = &s.b_v + &s.a_vu * &star_u + &s.a_vv * &star_v;
            c
        })
        .collect();
    let centered = MarkovLsaInstance::new(instance.transition().clone(), nu, instance.dim_v(), states)?;
    Ok((centered, theta_star))
}

/// Knobs for [`generate_instance`]; [`random_instance`] uses the defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceOptions {
    pub dim_u: usize,
    pub dim_v: usize,
    pub n_states: usize,
    pub margin: f64,
    /// Weight of the state-dependent part of each transition row. Rows are
    /// `(1 − memory)·w + memory·R(i, ·)` for a random law `w` and a random
    /// stochastic `R`, so the Dobrushin coefficient is at most `memory`.
    pub chain_memory: f64,
    /// Operator-norm scale of the raw diagonal blocks before the stability shift.
    pub diag_scale: f64,
    /// Operator-norm scale of the raw coupling blocks.
    pub coupling_scale: f64,
    /// Largest offset norm after centering.
    pub offset_scale: f64,
}

impl InstanceOptions {
    pub fn new(dim_u: usize, dim_v: usize, n_states: usize, margin: f64) -> Self {
        InstanceOptions {
            dim_u,
            dim_v,
            n_states,
            margin,
            chain_memory: 0.5,
            diag_scale: 0.35,
            coupling_scale: 0.3,
            offset_scale: 0.5,
        }
    }
}

fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let g = Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
    let n = operator_norm(&g);
    if n == 0.0 {
        g
    } else {
        g * (scale / n)
    }
}

fn random_transition(n: usize, memory: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let mut w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let ws: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= ws);
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        let mut r: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let rs: f64 = r.iter().sum();
        r.iter_mut().for_each(|x| *x /= rs);
        for j in 0..n {
            p[(i, j)] = (1.0 - memory) * w[j] + memory * r[j];
        }
        // renormalize so the row sums to one to within a few ulps
        let s: f64 = p.row(i).sum();
        for j in 0..n {
            p[(i, j)] /= s;
        }
    }
    p
}

/// Generates an instance satisfying the standing assumptions by rejection
/// sampling.
///
/// Per-state blocks are drawn with i.i.d. entries and rescaled in norm; the
/// steady-state `Ā_vv` and then `B̄` are pushed left by a uniform diagonal
/// shift of every state's diagonal block until their spectra sit at or
/// below `-margin`. Offsets are centered to have zero stationary mean.
pub fn generate_instance(opts: &InstanceOptions, seed: u64) -> Result<MarkovLsaInstance> {
    if opts.dim_u == 0 || opts.dim_v == 0 || opts.n_states == 0 {
        return Err(Error::InvalidArgument("dims and n_states must be >= 1".into()));
    }
    if !(opts.margin > 0.0) {
        return Err(Error::InvalidArgument("margin must be positive".into()));
    }
    if !(0.0..=1.0).contains(&opts.chain_memory) {
        return Err(Error::InvalidArgument("chain_memory must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nu, nv, n) = (opts.dim_u, opts.dim_v, opts.n_states);
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let transition = random_transition(n, opts.chain_memory, &mut rng);
        let mut states: Vec<StateBlocks> = (0..n)
            .map(|_| StateBlocks {
                a_uu: random_matrix(nu, nu, opts.diag_scale, &mut rng),
                a_uv: random_matrix(nu, nv, opts.coupling_scale, &mut rng),
                a_vu: random_matrix(nv, nu, opts.coupling_scale, &mut rng),
                a_vv: random_matrix(nv, nv, opts.diag_scale, &mut rng),
                b_u: Vector::from_fn(nu, |_, _| rng.random_range(-1.0..1.0)),
                b_v: Vector::from_fn(nv, |_, _| rng.random_range(-1.0..1.0)),
            })
            .collect();
        let Ok(pi) = stationary_distribution(&transition) else {
            continue;
        };
        let weighted = |f: &dyn Fn(&StateBlocks) -> Matrix, states: &[StateBlocks]| {
            states
                .iter()
                .zip(pi.iter())
                .fold(None::<Matrix>, |acc, (s, w)| {
                    let term = f(s) * *w;
                    Some(match acc {
                        Some(a) => a + term,
                        None => term,
                    })
                })
                .expect("at least one state")
        };

        let avv = weighted(&|s| s.a_vv.clone(), &states);
        let shift_v = max_real_eigenvalue(&avv) + opts.margin + 1e-9;
        if shift_v > 0.0 {
            for s in &mut states {
                s.a_vv -= Matrix::identity(nv, nv) * shift_v;
            }
        }
        let avv = weighted(&|s| s.a_vv.clone(), &states);
        let avu = weighted(&|s| s.a_vu.clone(), &states);
        let auv = weighted(&|s| s.a_uv.clone(), &states);
        let Some(coupling) = avv.clone().full_piv_lu().solve(&avu) else {
            continue;
        };
        let auu = weighted(&|s| s.a_uu.clone(), &states);
        let b_bar = &auu - &auv * &coupling;
        let shift_u = max_real_eigenvalue(&b_bar) + opts.margin + 1e-9;
        if shift_u > 0.0 {
            for s in &mut states {
                s.a_uu -= Matrix::identity(nu, nu) * shift_u;
            }
        }

        let bu_mean = states
            .iter()
            .zip(pi.iter())
            .fold(Vector::zeros(nu), |acc, (s, w)| acc + &s.b_u * *w);
        let bv_mean = states
            .iter()
            .zip(pi.iter())
            .fold(Vector::zeros(nv), |acc, (s, w)| acc + &s.b_v * *w);
        for s in &mut states {
            s.b_u -= &bu_mean;
            s.b_v -= &bv_mean;
        }
        let bmax = states
            .iter()
            .map(|s| s.b_u.norm().max(s.b_v.norm()))
            .fold(0.0, f64::max);
        if bmax > 0.0 {
            let f = opts.offset_scale / bmax;
            for s in &mut states {
                s.b_u *= f;
                s.b_v *= f;
            }
        }

        let Ok(instance) = MarkovLsaInstance::new(transition, nu, nv, states) else {
            continue;
        };
        let Ok(ss) = steady_state_means(&instance) else {
            continue;
        };
        let margins_ok =
            max_real_eigenvalue(&ss.a_vv) <= -opts.margin && max_real_eigenvalue(&ss.b_bar) <= -opts.margin;
        if margins_ok && norm_check(&instance, &ss).is_none() {
            return Ok(instance);
        }
    }
    Err(Error::GenerationFailed(MAX_GENERATION_ATTEMPTS))
}

/// Random instance with default generator options.
pub fn random_instance(
    dim_u: usize,
    dim_v: usize,
    n_states: usize,
    seed: u64,
    margin: f64,
) -> Result<MarkovLsaInstance> {
    generate_instance(&InstanceOptions::new(dim_u, dim_v, n_states, margin), seed)
}

/// First per-state block whose operator norm exceeds one, if any.
fn norm_check(instance: &MarkovLsaInstance, ss: &SteadyState) -> Option<String> {
    for (x, s) in instance.states().iter().enumerate() {
        let norms = [
            ("B", operator_norm(&ss.b_of(s))),
            ("B~", operator_norm(&ss.b_tilde_of(s))),
            ("A_uu", operator_norm(&s.a_uu)),
            ("A_vu", operator_norm(&s.a_vu)),
            ("A_uv", operator_norm(&s.a_uv)),
            ("A_vv", operator_norm(&s.a_vv)),
        ];
        for (name, v) in norms {
            if v > 1.0 + NORM_TOL {
                return Some(format!("state {x}: ‖{name}‖ = {v:.6} > 1"));
            }
        }
    }
    None
}

/// `ε̃ = 2ε^α(1 + ‖Ā_vv⁻¹Ā_vu‖ + ε^(β−α))`.
pub fn eps_tilde(epsilon: f64, alpha: f64, beta: f64, coupling_norm: f64) -> f64 {
    2.0 * epsilon.powf(alpha) * (1.0 + coupling_norm + epsilon.powf(beta - alpha))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionCheck {
    /// `params`, `1`, `2`, `3a`, `3b` or `4`.
    pub id: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
    pub eps_tilde: Option<f64>,
    pub tau: Option<usize>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, id: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.id == id)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, id: &'static str, passed: bool, detail: impl Into<String>) {
        self.checks.push(AssumptionCheck {
            id,
            passed,
            detail: detail.into(),
        });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "assumption {:<6} {}  {}",
                c.id,
                if c.passed { "PASS" } else { "FAIL" },
                c.detail
            )?;
        }
        Ok(())
    }
}

/// Checks every standing assumption for the given step-size parameters.
/// Failures are reported, never raised.
pub fn validate_assumptions(instance: &MarkovLsaInstance, epsilon: f64, alpha: f64, beta: f64) -> ValidationReport {
    let mut report = ValidationReport::default();
    let params_ok = 0.0 < beta && beta < alpha && 0.0 < epsilon && epsilon < 1.0;
    report.push(
        "params",
        params_ok,
        format!("epsilon = {epsilon}, alpha = {alpha}, beta = {beta} (need 0 < beta < alpha, 0 < epsilon < 1)"),
    );

    let ss = match steady_state_means(instance) {
        Ok(ss) => ss,
        Err(e) => {
            report.push("1", false, format!("steady state unavailable: {e}"));
            return report;
        }
    };
    let b_bar_norm = ss.b_u.norm().max(ss.b_v.norm());
    let b_tol = 1e-12 * (1.0 + instance.b_max());
    report.push(
        "1",
        b_bar_norm <= b_tol,
        format!("stationary law found; ‖b̄‖ = {b_bar_norm:.3e} (tolerance {b_tol:.1e})"),
    );

    let b_max = instance.b_max();
    match norm_check(instance, &ss) {
        None => report.push(
            "2",
            b_max.is_finite(),
            format!("all block norms <= 1; b_max = {b_max:.6}"),
        ),
        Some(msg) => report.push("2", false, msg),
    }

    let avv_h = is_hurwitz(&ss.a_vv);
    let b_h = is_hurwitz(&ss.b_bar);
    let avv_cond = condition_number(&ss.a_vv);
    report.push(
        "3a",
        avv_h && b_h && avv_cond <= MAX_COND,
        format!(
            "Ā_vv Hurwitz: {avv_h} (max Re {:.4}), B̄ Hurwitz: {b_h} (max Re {:.4}), cond(Ā_vv) = {avv_cond:.3e}",
            max_real_eigenvalue(&ss.a_vv),
            max_real_eigenvalue(&ss.b_bar)
        ),
    );

    if !params_ok {
        return report;
    }
    let et = eps_tilde(epsilon, alpha, beta, ss.coupling_norm());
    report.eps_tilde = Some(et);
    match mixing_time_with(instance.transition(), &ss.pi, et) {
        Ok(tau) => {
            report.tau = Some(tau);
            report.push(
                "3b",
                true,
                format!("mixing time tau = {tau} at Delta = eps_tilde = {et:.6e}"),
            );
            let prod = et * tau as f64;
            report.push(
                "4",
                prod <= 0.25,
                format!("eps_tilde * tau = {prod:.6e} (need <= 0.25)"),
            );
        }
        Err(e) => {
            report.push("3b", false, format!("mixing time unavailable: {e}"));
            report.push("4", false, "eps_tilde * tau undefined");
        }
    }
    report
}
